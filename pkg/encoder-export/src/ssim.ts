/** Structural similarity over uniform sliding windows, and the derived
 * image-difference attention mask ((1 - SSIM) / 2 with edge replication). */

export function ssimMap(
  a: Float64Array,
  b: Float64Array,
  height: number,
  width: number,
  window = 7,
  c1 = 0.01 * 0.01,
  c2 = 0.03 * 0.03
): { values: Float64Array; height: number; width: number } {
  if (window % 2 === 0 || window > Math.min(height, width)) {
    throw new Error(`bad SSIM window ${window} for ${height}x${width}`);
  }
  const oh = height - window + 1;
  const ow = width - window + 1;
  const values = new Float64Array(oh * ow);
  const inv = 1 / (window * window);
  for (let y = 0; y < oh; y++) {
    for (let x = 0; x < ow; x++) {
      let sa = 0,
        sb = 0,
        saa = 0,
        sbb = 0,
        sab = 0;
      for (let dy = 0; dy < window; dy++) {
        for (let dx = 0; dx < window; dx++) {
          const va = a[(y + dy) * width + x + dx];
          const vb = b[(y + dy) * width + x + dx];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      }
      const mua = sa * inv;
      const mub = sb * inv;
      const vara = saa * inv - mua * mua;
      const varb = sbb * inv - mub * mub;
      const cov = sab * inv - mua * mub;
      values[y * ow + x] =
        ((2 * mua * mub + c1) * (2 * cov + c2)) /
        ((mua * mua + mub * mub + c1) * (vara + varb + c2));
    }
  }
  return { values, height: oh, width: ow };
}

/** (1 - SSIM) / 2 clamped to [0, 1]; edge pixels replicate the nearest
 * fully-covered window position. */
export function diffMask(
  grayPrev: Float64Array,
  grayCurr: Float64Array,
  height: number,
  width: number,
  window = 7
): Float64Array {
  const s = ssimMap(grayPrev, grayCurr, height, width, window);
  const half = Math.floor(window / 2);
  const out = new Float64Array(height * width);
  for (let y = 0; y < height; y++) {
    const sy = Math.min(Math.max(y - half, 0), s.height - 1);
    for (let x = 0; x < width; x++) {
      const sx = Math.min(Math.max(x - half, 0), s.width - 1);
      const v = (1 - s.values[sy * s.width + sx]) / 2;
      out[y * width + x] = Math.min(Math.max(v, 0), 1);
    }
  }
  return out;
}
