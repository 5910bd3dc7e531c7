import { describe, expect, it } from "vitest";

import { grayscale, gridPatches, makeImage, resizeBilinear } from "../src/image";
import { diffMask, ssimMap } from "../src/ssim";
import { blockMatchFlow } from "../src/flow";
import { Rng } from "../src/rng";

function randomImage(side: number, seed: number) {
  const img = makeImage(side, side);
  const rng = new Rng(seed);
  for (let i = 0; i < img.data.length; i++) img.data[i] = rng.next();
  return img;
}

describe("grayscale", () => {
  it("uses the standard luma weights", () => {
    const img = makeImage(2, 1);
    img.data.set([1, 0, 0, 0, 1, 0]);
    const gray = grayscale(img);
    expect(gray[0]).toBeCloseTo(0.299, 12);
    expect(gray[1]).toBeCloseTo(0.587, 12);
  });
});

describe("resizeBilinear", () => {
  it("is the identity at the same size", () => {
    const img = randomImage(16, 1);
    const out = resizeBilinear(img, 16, 16);
    expect(Array.from(out.data)).toEqual(Array.from(img.data));
  });

  it("preserves constants", () => {
    const img = makeImage(8, 8);
    img.data.fill(0.42);
    const out = resizeBilinear(img, 20, 12);
    for (const v of out.data) expect(v).toBeCloseTo(0.42, 12);
  });
});

describe("gridPatches", () => {
  it("tiles row-major and reassembles exactly", () => {
    const img = randomImage(32, 2);
    const patches = gridPatches(img, 4);
    expect(patches).toHaveLength(16);
    for (let r = 0; r < 32; r++) {
      for (let c = 0; c < 32; c++) {
        const patch = patches[Math.floor(r / 8) * 4 + Math.floor(c / 8)];
        for (let ch = 0; ch < 3; ch++) {
          expect(patch.data[((r % 8) * 8 + (c % 8)) * 3 + ch]).toBe(
            img.data[(r * 32 + c) * 3 + ch]
          );
        }
      }
    }
  });

  it("rejects indivisible sides", () => {
    expect(() => gridPatches(makeImage(30, 30), 4)).toThrow(/not divisible/);
  });
});

describe("ssim", () => {
  it("is exactly 1 for identical fields", () => {
    const img = randomImage(16, 3);
    const gray = grayscale(img);
    const { values } = ssimMap(gray, gray, 16, 16);
    for (const v of values) expect(v).toBe(1.0);
  });

  it("diff mask is zero for identical frames and concentrated for motion", () => {
    const a = makeImage(32, 32);
    const b = makeImage(32, 32);
    a.data.fill(0);
    b.data.fill(0);
    // sprite at (8,8) in a, (10,9) in b
    for (let y = 0; y < 6; y++) {
      for (let x = 0; x < 6; x++) {
        for (let c = 0; c < 3; c++) {
          a.data[((8 + y) * 32 + 8 + x) * 3 + c] = 0.9;
          b.data[((10 + y) * 32 + 9 + x) * 3 + c] = 0.9;
        }
      }
    }
    const zero = diffMask(grayscale(a), grayscale(a), 32, 32);
    expect(Math.max(...zero)).toBe(0);
    const mask = diffMask(grayscale(a), grayscale(b), 32, 32);
    let inside = 0;
    let insideN = 0;
    let outside = 0;
    let outsideN = 0;
    for (let y = 0; y < 32; y++) {
      for (let x = 0; x < 32; x++) {
        const inBox = y >= 8 && y < 16 && x >= 8 && x < 15;
        if (inBox) {
          inside += mask[y * 32 + x];
          insideN++;
        } else {
          outside += mask[y * 32 + x];
          outsideN++;
        }
      }
    }
    expect(inside / insideN).toBeGreaterThan(5 * (outside / outsideN));
  });
});

describe("blockMatchFlow", () => {
  it("reports zero flow for a static scene", () => {
    const img = grayscale(randomImage(32, 4));
    const flow = blockMatchFlow(img, img, 32, 32);
    expect(Math.max(...flow.dx.map(Math.abs))).toBe(0);
    expect(Math.max(...flow.dy.map(Math.abs))).toBe(0);
  });

  it("recovers a planted interior shift", () => {
    const a = grayscale(randomImage(64, 5));
    const b = new Float64Array(64 * 64);
    // shift right 2, down 1 (wrapping; interior blocks see a clean shift)
    for (let y = 0; y < 64; y++) {
      for (let x = 0; x < 64; x++) {
        b[((y + 1) % 64) * 64 + ((x + 2) % 64)] = a[y * 64 + x];
      }
    }
    const flow = blockMatchFlow(a, b, 64, 64);
    for (let gi = 1; gi < 7; gi++) {
      for (let gj = 1; gj < 7; gj++) {
        expect(flow.dx[gi * 8 + gj]).toBe(2);
        expect(flow.dy[gi * 8 + gj]).toBe(1);
      }
    }
  });
});
