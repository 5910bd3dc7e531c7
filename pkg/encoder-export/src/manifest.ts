/** Export manifest: which dataset to walk, which model to run, which
 * variant groups to produce, and where the PRLE/PRLF outputs go. */

import * as fs from "node:fs";

export const VARIANT_GROUPS = [
  "full",
  "grid2",
  "grid4",
  "masked:diff",
  "masked:flow",
  "aug:blur",
  "aug:jitter",
  "aug:crop",
] as const;

export type VariantGroup = (typeof VARIANT_GROUPS)[number];

export interface EmbeddingJob {
  model: string;
  width: number;
  input_side: number;
  variants: VariantGroup[];
  seed: number;
  out: string;
}

export interface FlowJob {
  model: string; // "blockmatch" (built in); other ids reserved for imported flow
  block: number;
  radius: number;
  out_dir: string;
}

export interface ExportManifest {
  dataset: string;
  canonical_side: number;
  embeddings?: EmbeddingJob;
  flow?: FlowJob;
}

export function loadManifest(path: string): ExportManifest {
  const raw = JSON.parse(fs.readFileSync(path, "utf-8"));
  if (typeof raw.dataset !== "string") throw new Error("manifest: 'dataset' path required");
  const canonical = raw.canonical_side ?? 224;
  if (!Number.isInteger(canonical) || canonical % 4 !== 0) {
    throw new Error(`manifest: canonical_side ${canonical} must be divisible by 4`);
  }
  const manifest: ExportManifest = { dataset: raw.dataset, canonical_side: canonical };

  if (raw.embeddings) {
    const e = raw.embeddings;
    const variants: VariantGroup[] = e.variants ?? ["full"];
    for (const v of variants) {
      if (!VARIANT_GROUPS.includes(v)) {
        throw new Error(`manifest: unknown variant group '${v}' (expected ${VARIANT_GROUPS.join(", ")})`);
      }
    }
    if (typeof e.model !== "string") throw new Error("manifest: embeddings.model required");
    if (typeof e.out !== "string") throw new Error("manifest: embeddings.out required");
    manifest.embeddings = {
      model: e.model,
      width: e.width ?? 512,
      input_side: e.input_side ?? 224,
      variants,
      seed: e.seed ?? 0,
      out: e.out,
    };
  }
  if (raw.flow) {
    const f = raw.flow;
    if (typeof f.out_dir !== "string") throw new Error("manifest: flow.out_dir required");
    manifest.flow = {
      model: f.model ?? "blockmatch",
      block: f.block ?? 8,
      radius: f.radius ?? 4,
      out_dir: f.out_dir,
    };
  }
  if (!manifest.embeddings && !manifest.flow) {
    throw new Error("manifest: nothing to do (need 'embeddings' and/or 'flow')");
  }
  return manifest;
}
