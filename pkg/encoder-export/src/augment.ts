/** View augmentations: gaussian blur, color jitter, random crop-resize.
 * Parameter ranges match the core toolkit (sigma in [0.5, 1.5], jitter
 * factors in [0.6, 1.4], crop area fraction in [0.6, 1], aspect in
 * [3/4, 4/3]); values are drawn from this tool's own seeded RNG. */

import { Image, crop, grayscale, makeImage, resizeBilinear } from "./image";
import { Rng } from "./rng";

function clamp01(img: Image): Image {
  for (let i = 0; i < img.data.length; i++) {
    img.data[i] = Math.min(Math.max(img.data[i], 0), 1);
  }
  return img;
}

export function gaussianBlur(img: Image, sigma: number): Image {
  if (sigma <= 0) throw new Error(`sigma must be positive, got ${sigma}`);
  const radius = Math.ceil(3 * sigma);
  const kernel = new Float64Array(2 * radius + 1);
  let sum = 0;
  for (let i = -radius; i <= radius; i++) {
    kernel[i + radius] = Math.exp(-(i * i) / (2 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (let i = 0; i < kernel.length; i++) kernel[i] /= sum;

  const clampIdx = (v: number, hi: number) => Math.min(Math.max(v, 0), hi);
  const vertical = makeImage(img.width, img.height);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      for (let c = 0; c < 3; c++) {
        let acc = 0;
        for (let k = -radius; k <= radius; k++) {
          const yy = clampIdx(y + k, img.height - 1);
          acc += kernel[k + radius] * img.data[(yy * img.width + x) * 3 + c];
        }
        vertical.data[(y * img.width + x) * 3 + c] = acc;
      }
    }
  }
  const out = makeImage(img.width, img.height);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      for (let c = 0; c < 3; c++) {
        let acc = 0;
        for (let k = -radius; k <= radius; k++) {
          const xx = clampIdx(x + k, img.width - 1);
          acc += kernel[k + radius] * vertical.data[(y * img.width + xx) * 3 + c];
        }
        out.data[(y * img.width + x) * 3 + c] = acc;
      }
    }
  }
  return clamp01(out);
}

export function colorJitter(img: Image, rng: Rng, low = 0.6, high = 1.4): Image {
  const fb = rng.uniform(low, high);
  const fc = rng.uniform(low, high);
  const fs = rng.uniform(low, high);
  const out = { width: img.width, height: img.height, data: img.data.slice() };
  for (let i = 0; i < out.data.length; i++) out.data[i] *= fb;
  const gray = grayscale(clamp01({ ...out, data: out.data.slice() }));
  let mu = 0;
  for (let i = 0; i < gray.length; i++) mu += gray[i];
  mu /= gray.length;
  for (let i = 0; i < out.data.length; i++) out.data[i] = mu + (out.data[i] - mu) * fc;
  const gray2 = grayscale(clamp01({ ...out, data: out.data.slice() }));
  for (let i = 0; i < gray.length; i++) {
    for (let c = 0; c < 3; c++) {
      const v = out.data[i * 3 + c];
      out.data[i * 3 + c] = gray2[i] + (v - gray2[i]) * fs;
    }
  }
  return clamp01(out);
}

export function randomCropResize(
  img: Image,
  rng: Rng,
  minScale = 0.6,
  aspectLow = 3 / 4,
  aspectHigh = 4 / 3
): Image {
  const h = img.height;
  const w = img.width;
  for (let attempt = 0; attempt < 10; attempt++) {
    const area = rng.uniform(minScale, 1) * h * w;
    const aspect = Math.exp(rng.uniform(Math.log(aspectLow), Math.log(aspectHigh)));
    const cw = Math.round(Math.sqrt(area * aspect));
    const ch = Math.round(Math.sqrt(area / aspect));
    if (cw < 1 || cw > w || ch < 1 || ch > h) continue;
    const frac = (cw * ch) / (h * w);
    if (frac < minScale || frac > 1 || cw / ch < aspectLow || cw / ch > aspectHigh) continue;
    const y = rng.int(0, h - ch + 1);
    const x = rng.int(0, w - cw + 1);
    return resizeBilinear(crop(img, y, x, ch, cw), h, w);
  }
  return { width: w, height: h, data: img.data.slice() };
}

export type AugmentKind = "blur" | "jitter" | "crop";

export function augmentFrame(img: Image, kind: AugmentKind, seed: number): Image {
  const rng = new Rng(seed);
  if (kind === "blur") return gaussianBlur(img, rng.uniform(0.5, 1.5));
  if (kind === "jitter") return colorJitter(img, rng);
  return randomCropResize(img, rng);
}
