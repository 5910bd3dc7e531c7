/** Dataset tree reader: root/episode_<k>/frame_<i>.png, 8-bit RGB PNG.
 * Labels are not needed for export; only the frame images and their order. */

import * as fs from "node:fs";
import * as path from "node:path";
import { PNG } from "pngjs";

import { Image } from "./image";

export interface DatasetTree {
  root: string;
  /** episodes[e] = ordered frame file paths. */
  episodes: string[][];
}

const EPISODE_RE = /^episode_(\d+)$/;
const FRAME_RE = /^frame_(\d+)\.png$/;

export function loadDatasetTree(root: string): DatasetTree {
  const entries = fs.readdirSync(root, { withFileTypes: true });
  const episodes: Array<[number, string]> = [];
  for (const entry of entries) {
    const m = EPISODE_RE.exec(entry.name);
    if (entry.isDirectory() && m) episodes.push([Number(m[1]), path.join(root, entry.name)]);
  }
  if (episodes.length === 0) throw new Error(`${root}: no episode_<k> directories`);
  episodes.sort((a, b) => a[0] - b[0]);

  const tree: string[][] = [];
  for (const [, epDir] of episodes) {
    const frames: Array<[number, string]> = [];
    for (const name of fs.readdirSync(epDir)) {
      const m = FRAME_RE.exec(name);
      if (m) frames.push([Number(m[1]), path.join(epDir, name)]);
    }
    frames.sort((a, b) => a[0] - b[0]);
    tree.push(frames.map(([, p]) => p));
  }
  return { root, episodes: tree };
}

export function readFramePng(file: string): Image {
  const png = PNG.sync.read(fs.readFileSync(file));
  const out: Image = {
    width: png.width,
    height: png.height,
    data: new Float64Array(png.width * png.height * 3),
  };
  for (let i = 0; i < png.width * png.height; i++) {
    out.data[i * 3] = png.data[i * 4] / 255;
    out.data[i * 3 + 1] = png.data[i * 4 + 1] / 255;
    out.data[i * 3 + 2] = png.data[i * 4 + 2] / 255;
  }
  return out;
}

export function writeFramePng(file: string, image: Image): void {
  const png = new PNG({ width: image.width, height: image.height });
  for (let i = 0; i < image.width * image.height; i++) {
    png.data[i * 4] = Math.round(Math.min(Math.max(image.data[i * 3], 0), 1) * 255);
    png.data[i * 4 + 1] = Math.round(Math.min(Math.max(image.data[i * 3 + 1], 0), 1) * 255);
    png.data[i * 4 + 2] = Math.round(Math.min(Math.max(image.data[i * 3 + 2], 0), 1) * 255);
    png.data[i * 4 + 3] = 255;
  }
  fs.writeFileSync(file, PNG.sync.write(png));
}
