/** Image geometry shared with the core toolkit: frames are float RGB in
 * [0, 1], resized with half-pixel-center bilinear sampling, tiled row-major
 * into equally-sized non-overlapping grid patches. */

export interface Image {
  width: number;
  height: number;
  /** Row-major RGB triples, length = width * height * 3. */
  data: Float64Array;
}

export function makeImage(width: number, height: number): Image {
  return { width, height, data: new Float64Array(width * height * 3) };
}

export function grayscale(img: Image): Float64Array {
  const out = new Float64Array(img.width * img.height);
  for (let i = 0; i < out.length; i++) {
    out[i] = 0.299 * img.data[i * 3] + 0.587 * img.data[i * 3 + 1] + 0.114 * img.data[i * 3 + 2];
  }
  return out;
}

export function resizeBilinear(img: Image, outH: number, outW: number): Image {
  if (img.height === outH && img.width === outW) {
    return { width: img.width, height: img.height, data: img.data.slice() };
  }
  const out = makeImage(outW, outH);
  const clamp = (v: number, hi: number) => Math.min(Math.max(v, 0), hi);
  for (let y = 0; y < outH; y++) {
    const sy = clamp((y + 0.5) * (img.height / outH) - 0.5, img.height - 1);
    const y0 = Math.floor(sy);
    const y1 = Math.min(y0 + 1, img.height - 1);
    const fy = sy - y0;
    for (let x = 0; x < outW; x++) {
      const sx = clamp((x + 0.5) * (img.width / outW) - 0.5, img.width - 1);
      const x0 = Math.floor(sx);
      const x1 = Math.min(x0 + 1, img.width - 1);
      const fx = sx - x0;
      for (let c = 0; c < 3; c++) {
        const tl = img.data[(y0 * img.width + x0) * 3 + c];
        const tr = img.data[(y0 * img.width + x1) * 3 + c];
        const bl = img.data[(y1 * img.width + x0) * 3 + c];
        const br = img.data[(y1 * img.width + x1) * 3 + c];
        const top = tl * (1 - fx) + tr * fx;
        const bottom = bl * (1 - fx) + br * fx;
        out.data[(y * outW + x) * 3 + c] = top * (1 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

export function crop(img: Image, y: number, x: number, h: number, w: number): Image {
  const out = makeImage(w, h);
  for (let r = 0; r < h; r++) {
    for (let cx = 0; cx < w; cx++) {
      for (let c = 0; c < 3; c++) {
        out.data[(r * w + cx) * 3 + c] = img.data[((y + r) * img.width + x + cx) * 3 + c];
      }
    }
  }
  return out;
}

/** Row-major n x n tiling; image side must divide evenly. */
export function gridPatches(img: Image, n: number): Image[] {
  if (img.width % n !== 0 || img.height % n !== 0) {
    throw new Error(`image ${img.width}x${img.height} not divisible into ${n}x${n} patches`);
  }
  const ph = img.height / n;
  const pw = img.width / n;
  const patches: Image[] = [];
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < n; c++) {
      patches.push(crop(img, r * ph, c * pw, ph, pw));
    }
  }
  return patches;
}

/** Multiplicative mask attenuation over all channels. */
export function applyMask(img: Image, mask: Float64Array): Image {
  const out = makeImage(img.width, img.height);
  for (let i = 0; i < mask.length; i++) {
    out.data[i * 3] = img.data[i * 3] * mask[i];
    out.data[i * 3 + 1] = img.data[i * 3 + 1] * mask[i];
    out.data[i * 3 + 2] = img.data[i * 3 + 2] * mask[i];
  }
  return out;
}
