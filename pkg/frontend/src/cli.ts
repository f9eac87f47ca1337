#!/usr/bin/env node
/** CLI wrapper: read a corpus, run the backend, write the knowledge file. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { SetupError, makeBackend } from "./backend.js";
import { PoolingMode } from "./pooling.js";
import { runExport } from "./exporter.js";

async function main() {
  const argv = await yargs(hideBin(process.argv))
    .option("corpus", { type: "string", demandOption: true, describe: "dialogue corpus (jsonl)" })
    .option("out", { type: "string", demandOption: true, describe: "output knowledge file" })
    .option("pooling", {
      choices: ["mean", "first", "last"] as const,
      default: "mean" as const,
      describe: "how to pool per-token states",
    })
    .option("batch", { type: "number", default: 16, describe: "inference batch size" })
    .option("model", {
      choices: ["synthetic", "bart"] as const,
      default: "synthetic" as const,
      describe: "generation backend",
    })
    .option("model-dir", { type: "string", describe: "local weights directory (bart)" })
    .option("dim", { type: "number", default: 1024, describe: "vector width (synthetic)" })
    .option("seed", { type: "number", default: 0, describe: "backend seed (synthetic)" })
    .strict()
    .parse();

  const backend = makeBackend(argv.model, {
    dim: argv.dim,
    seed: argv.seed,
    modelDir: argv["model-dir"] ?? process.env.COMET_MODEL_DIR,
  });
  const stats = runExport({
    corpusPath: argv.corpus,
    outPath: argv.out,
    backend,
    pooling: argv.pooling as PoolingMode,
    batchSize: argv.batch,
  });
  for (const warning of stats.warnings) {
    console.warn(`warning: ${warning}`);
  }
  console.log(
    `wrote ${stats.records} records (${stats.dialogues} dialogues, ` +
      `${stats.utterances} utterances, width ${stats.dim}) -> ${argv.out}`,
  );
}

main().catch((err) => {
  if (err instanceof SetupError) {
    console.error(`setup error: ${err.message}`);
    process.exit(2);
  }
  console.error(`error: ${err.message ?? err}`);
  process.exit(1);
});
