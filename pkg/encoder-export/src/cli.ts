#!/usr/bin/env node
/** Usage: encoder-export <manifest.json>
 *
 * Runs the embedding and/or flow export jobs described by the manifest and
 * prints a JSON summary. Exits nonzero with a message on any failure
 * (unreadable dataset, unknown model, key collision, ...). */

import { exportEmbeddings, exportFlow } from "./export";
import { loadManifest } from "./manifest";

async function main(): Promise<number> {
  const args = process.argv.slice(2);
  if (args.length !== 1 || args[0] === "--help" || args[0] === "-h") {
    process.stderr.write("usage: encoder-export <manifest.json>\n");
    return args.length === 1 ? 0 : 2;
  }
  const manifest = loadManifest(args[0]);
  const summary: Record<string, unknown> = { dataset: manifest.dataset };
  if (manifest.embeddings) {
    const count = await exportEmbeddings(manifest, manifest.embeddings);
    summary.embeddings = { out: manifest.embeddings.out, records: count };
  }
  if (manifest.flow) {
    const count = exportFlow(manifest, manifest.flow);
    summary.flow = { out_dir: manifest.flow.out_dir, files: count };
  }
  process.stdout.write(JSON.stringify(summary, null, 2) + "\n");
  return 0;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
    process.exit(1);
  }
);
