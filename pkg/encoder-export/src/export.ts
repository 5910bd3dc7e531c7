/** Export pipelines: walk the dataset once, apply the same canonical
 * resize / patch / mask / augmentation geometry as the core toolkit, and
 * write byte-compatible PRLE and PRLF files. */

import * as fs from "node:fs";
import * as path from "node:path";

import { augmentFrame, AugmentKind } from "./augment";
import { DatasetTree, loadDatasetTree, readFramePng } from "./dataset";
import { blockMatchFlow, flowMask, writeFlow } from "./flow";
import { applyMask, gridPatches, grayscale, resizeBilinear, Image } from "./image";
import { EmbeddingJob, ExportManifest, FlowJob } from "./manifest";
import { loadModel } from "./models";
import { augSeed } from "./rng";
import { keyText, StoreRecord, writeStore } from "./store";
import { diffMask } from "./ssim";

interface FramePair {
  episode: number;
  frame: number;
  curr: Image;
  prev: Image; // equals curr on the first frame of an episode
}

function* canonicalFrames(tree: DatasetTree, side: number): Generator<FramePair> {
  for (let e = 0; e < tree.episodes.length; e++) {
    let prev: Image | null = null;
    for (let i = 0; i < tree.episodes[e].length; i++) {
      const curr = resizeBilinear(readFramePng(tree.episodes[e][i]), side, side);
      yield { episode: e, frame: i, curr, prev: prev ?? curr };
      prev = curr;
    }
  }
}

export async function exportEmbeddings(manifest: ExportManifest, job: EmbeddingJob): Promise<number> {
  const tree = loadDatasetTree(manifest.dataset);
  const model = await loadModel(job.model, job.width, job.input_side);
  const side = manifest.canonical_side;
  const records: StoreRecord[] = [];

  for (const { episode, frame, curr, prev } of canonicalFrames(tree, side)) {
    const tagged: Array<[string, Image]> = [];
    for (const group of job.variants) {
      if (group === "full") {
        tagged.push(["full", curr]);
      } else if (group === "grid2" || group === "grid4") {
        const n = group === "grid2" ? 2 : 4;
        gridPatches(curr, n).forEach((patch, j) => tagged.push([`grid${n}:${j}`, patch]));
      } else if (group === "masked:diff") {
        const mask = diffMask(grayscale(prev), grayscale(curr), side, side);
        tagged.push(["masked:diff", applyMask(curr, mask)]);
      } else if (group === "masked:flow") {
        const flow = blockMatchFlow(grayscale(prev), grayscale(curr), side, side);
        tagged.push(["masked:flow", applyMask(curr, flowMask(flow, side, side))]);
      } else {
        const kind = group.split(":")[1] as AugmentKind;
        for (const view of [0, 1]) {
          const img = augmentFrame(curr, kind, augSeed(job.seed, episode, frame, view));
          tagged.push([`aug:${kind}:${view}`, img]);
        }
      }
    }
    for (const [tag, image] of tagged) {
      records.push({ key: keyText(episode, frame, tag), vector: await model.encode(image) });
    }
  }
  writeStore(job.out, records, job.width);
  return records.length;
}

export function exportFlow(manifest: ExportManifest, job: FlowJob): number {
  if (job.model !== "blockmatch") {
    throw new Error(`flow model ${job.model} unavailable (this build provides 'blockmatch')`);
  }
  const tree = loadDatasetTree(manifest.dataset);
  const side = manifest.canonical_side;
  fs.mkdirSync(job.out_dir, { recursive: true });
  let written = 0;
  for (let e = 0; e < tree.episodes.length; e++) {
    let prevGray: Float64Array | null = null;
    for (let i = 0; i < tree.episodes[e].length; i++) {
      const gray = grayscale(resizeBilinear(readFramePng(tree.episodes[e][i]), side, side));
      if (prevGray !== null) {
        const flow = blockMatchFlow(prevGray, gray, side, side, job.block, job.radius);
        const ep = String(e).padStart(4, "0");
        const fr = String(i).padStart(5, "0");
        writeFlow(path.join(job.out_dir, `ep${ep}_fr${fr}.prlf`), flow);
        written += 1;
      }
      prevGray = gray;
    }
  }
  return written;
}
