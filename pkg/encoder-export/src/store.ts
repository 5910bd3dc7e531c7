/** The PRLE embedding-store format and key grammar, byte-compatible with
 * the core toolkit: magic "PRLE", version u16, width u32, record count u64,
 * then [key length u16, UTF-8 key, width x f32], all little-endian, keys
 * sorted ascending. */

import * as fs from "node:fs";

export const STORE_MAGIC = "PRLE";
export const STORE_VERSION = 1;

export const VARIANT_RE =
  /^(?:full|grid2:[0-3]|grid4:(?:[0-9]|1[0-5])|masked:(?:diff|flow)|aug:(?:blur|jitter|crop):\d+|composed:[A-Za-z0-9+]+)$/;

export function keyText(episode: number, frame: number, variant: string): string {
  if (episode < 0 || episode >= 10_000) throw new Error(`episode ${episode} outside 0..9999`);
  if (frame < 0 || frame >= 100_000) throw new Error(`frame ${frame} outside 0..99999`);
  if (!VARIANT_RE.test(variant)) throw new Error(`variant ${variant} not in the key grammar`);
  const ep = String(episode).padStart(4, "0");
  const fr = String(frame).padStart(5, "0");
  return `ep${ep}:fr${fr}:${variant}`;
}

export interface StoreRecord {
  key: string;
  vector: Float32Array;
}

export function storeBytes(records: StoreRecord[], width: number): Buffer {
  const sorted = [...records].sort((a, b) => (a.key < b.key ? -1 : a.key > b.key ? 1 : 0));
  const seen = new Set<string>();
  for (const r of sorted) {
    if (seen.has(r.key)) throw new Error(`duplicate embedding key ${r.key}`);
    seen.add(r.key);
    if (r.vector.length !== width) {
      throw new Error(`record ${r.key} has width ${r.vector.length}, expected ${width}`);
    }
  }
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(18);
  header.write(STORE_MAGIC, 0, "ascii");
  header.writeUInt16LE(STORE_VERSION, 4);
  header.writeUInt32LE(width, 6);
  header.writeBigUInt64LE(BigInt(sorted.length), 10);
  chunks.push(header);
  for (const r of sorted) {
    const keyBytes = Buffer.from(r.key, "utf-8");
    const rec = Buffer.alloc(2 + keyBytes.length + width * 4);
    rec.writeUInt16LE(keyBytes.length, 0);
    keyBytes.copy(rec, 2);
    for (let i = 0; i < width; i++) {
      rec.writeFloatLE(r.vector[i], 2 + keyBytes.length + i * 4);
    }
    chunks.push(rec);
  }
  return Buffer.concat(chunks);
}

export function writeStore(path: string, records: StoreRecord[], width: number): void {
  fs.writeFileSync(path, storeBytes(records, width));
}

export function readStore(path: string): { width: number; records: Map<string, Float32Array> } {
  const buf = fs.readFileSync(path);
  if (buf.length < 4 || buf.toString("ascii", 0, 4) !== STORE_MAGIC) {
    throw new Error(`${path}: not an embedding store`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== STORE_VERSION) throw new Error(`${path}: unsupported version ${version}`);
  const width = buf.readUInt32LE(6);
  const count = Number(buf.readBigUInt64LE(10));
  const records = new Map<string, Float32Array>();
  let offset = 18;
  for (let i = 0; i < count; i++) {
    const keyLen = buf.readUInt16LE(offset);
    offset += 2;
    const key = buf.toString("utf-8", offset, offset + keyLen);
    offset += keyLen;
    const vec = new Float32Array(width);
    for (let j = 0; j < width; j++) vec[j] = buf.readFloatLE(offset + j * 4);
    offset += width * 4;
    records.set(key, vec);
  }
  if (offset !== buf.length) throw new Error(`${path}: ${buf.length - offset} trailing bytes`);
  return { width, records };
}
