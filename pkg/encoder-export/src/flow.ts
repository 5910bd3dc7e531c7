/** Block-matching optical flow, the per-pixel flow attention mask, and the
 * binary PRLF flow-field format (magic, version u16, grid w u32, grid h u32,
 * little-endian f32 (dx, dy) pairs row-major). */

import * as fs from "node:fs";

export const FLOW_MAGIC = "PRLF";
export const FLOW_VERSION = 1;

export interface FlowField {
  gridH: number;
  gridW: number;
  dx: Float64Array;
  dy: Float64Array;
}

/** Displacement per block minimizing sum of absolute differences within
 * +/- radius; ties break to smallest |dx|+|dy|, then row-major (dy, dx). */
export function blockMatchFlow(
  a: Float64Array,
  b: Float64Array,
  height: number,
  width: number,
  block = 8,
  radius = 4
): FlowField {
  if (height % block !== 0 || width % block !== 0) {
    throw new Error(`dimensions ${height}x${width} not divisible by block ${block}`);
  }
  const gh = height / block;
  const gw = width / block;
  const bestSad = new Float64Array(gh * gw).fill(Infinity);
  const bestDx = new Float64Array(gh * gw);
  const bestDy = new Float64Array(gh * gw);

  const displacements: Array<[number, number]> = [];
  for (let dy = -radius; dy <= radius; dy++) {
    for (let dx = -radius; dx <= radius; dx++) {
      displacements.push([dy, dx]);
    }
  }
  displacements.sort((p, q) => {
    const mp = Math.abs(p[0]) + Math.abs(p[1]);
    const mq = Math.abs(q[0]) + Math.abs(q[1]);
    if (mp !== mq) return mp - mq;
    if (p[0] !== q[0]) return p[0] - q[0];
    return p[1] - q[1];
  });

  for (const [dy, dx] of displacements) {
    for (let gi = 0; gi < gh; gi++) {
      const y0 = gi * block + dy;
      if (y0 < 0 || y0 + block > height) continue;
      for (let gj = 0; gj < gw; gj++) {
        const x0 = gj * block + dx;
        if (x0 < 0 || x0 + block > width) continue;
        let sad = 0;
        for (let r = 0; r < block; r++) {
          const aRow = (gi * block + r) * width + gj * block;
          const bRow = (y0 + r) * width + x0;
          for (let c = 0; c < block; c++) {
            sad += Math.abs(a[aRow + c] - b[bRow + c]);
          }
        }
        const idx = gi * gw + gj;
        if (sad < bestSad[idx]) {
          bestSad[idx] = sad;
          bestDx[idx] = dx;
          bestDy[idx] = dy;
        }
      }
    }
  }
  return { gridH: gh, gridW: gw, dx: bestDx, dy: bestDy };
}

/** Per-pixel flow magnitude normalized to max 1 (all-zero stays zero),
 * upsampled from the block grid by nearest neighbor. */
export function flowMask(flow: FlowField, height: number, width: number): Float64Array {
  const mag = new Float64Array(flow.gridH * flow.gridW);
  let peak = 0;
  for (let i = 0; i < mag.length; i++) {
    mag[i] = Math.hypot(flow.dx[i], flow.dy[i]);
    peak = Math.max(peak, mag[i]);
  }
  const out = new Float64Array(height * width);
  if (peak === 0) return out;
  const bh = height / flow.gridH;
  const bw = width / flow.gridW;
  for (let y = 0; y < height; y++) {
    const gi = Math.floor(y / bh);
    for (let x = 0; x < width; x++) {
      out[y * width + x] = mag[gi * flow.gridW + Math.floor(x / bw)] / peak;
    }
  }
  return out;
}

export function flowBytes(flow: FlowField): Buffer {
  const buf = Buffer.alloc(4 + 2 + 4 + 4 + flow.gridH * flow.gridW * 8);
  buf.write(FLOW_MAGIC, 0, "ascii");
  buf.writeUInt16LE(FLOW_VERSION, 4);
  buf.writeUInt32LE(flow.gridW, 6);
  buf.writeUInt32LE(flow.gridH, 10);
  let offset = 14;
  for (let i = 0; i < flow.gridH * flow.gridW; i++) {
    buf.writeFloatLE(flow.dx[i], offset);
    buf.writeFloatLE(flow.dy[i], offset + 4);
    offset += 8;
  }
  return buf;
}

export function writeFlow(path: string, flow: FlowField): void {
  fs.writeFileSync(path, flowBytes(flow));
}

export function readFlow(path: string): FlowField {
  const buf = fs.readFileSync(path);
  if (buf.length < 14 || buf.toString("ascii", 0, 4) !== FLOW_MAGIC) {
    throw new Error(`${path}: not a flow file`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== FLOW_VERSION) throw new Error(`${path}: unsupported version ${version}`);
  const gw = buf.readUInt32LE(6);
  const gh = buf.readUInt32LE(10);
  const dx = new Float64Array(gh * gw);
  const dy = new Float64Array(gh * gw);
  for (let i = 0; i < gh * gw; i++) {
    dx[i] = buf.readFloatLE(14 + i * 8);
    dy[i] = buf.readFloatLE(18 + i * 8);
  }
  return { gridH: gh, gridW: gw, dx, dy };
}
