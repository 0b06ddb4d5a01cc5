#!/usr/bin/env node
/**
 * clip-export: dump model embeddings into the ipl store format.
 *
 *   clip-export --model mock --data DIR --out DIR \
 *       [--vocab-list FILE] [--lexicon FILE] [--freq FILE] \
 *       [--dim N] [--tau X] [--probe-templates FILE] [--overwrite] [--json]
 *
 * Models: "mock" (deterministic hash embeddings, no downloads) or
 * "hf:<model-id>" (requires the optional @huggingface/transformers package).
 */

import { loadBackend } from "./backend";
import { ExportConfig, exportStore } from "./export";

interface Args {
  flags: Map<string, string>;
  switches: Set<string>;
}

const VALUE_FLAGS = new Set([
  "--model",
  "--data",
  "--out",
  "--vocab-list",
  "--lexicon",
  "--freq",
  "--dim",
  "--tau",
  "--probe-templates",
]);
const SWITCHES = new Set(["--overwrite", "--json", "--help"]);

function parseArgs(argv: string[]): Args {
  const flags = new Map<string, string>();
  const switches = new Set<string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (SWITCHES.has(arg)) {
      switches.add(arg);
    } else if (VALUE_FLAGS.has(arg)) {
      const value = argv[i + 1];
      if (value === undefined) {
        throw new Error(`${arg} needs a value`);
      }
      flags.set(arg, value);
      i++;
    } else {
      throw new Error(`unknown argument ${arg}`);
    }
  }
  return { flags, switches };
}

const USAGE = `usage: clip-export --model NAME --data DIR --out DIR
  --model            "mock" or "hf:<model-id>"
  --data             directory of class subdirectories with image files
  --out              output store directory (must be empty unless --overwrite)
  --vocab-list FILE  raw vocabulary, one word per line
  --lexicon FILE     lexicon membership list (default: every word counts)
  --freq FILE        word<TAB>zipf scores (absent words record 0)
  --dim N            embedding width for the mock backend (default 32)
  --tau X            temperature recorded in export_meta.json (default 1.0)
  --probe-templates FILE  also dump text_probe/ embeddings per template line
  --overwrite        replace a non-empty output directory
  --json             print a single JSON summary on stdout
`;

export async function main(argv: string[]): Promise<number> {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n${USAGE}`);
    return 2;
  }
  if (args.switches.has("--help")) {
    process.stdout.write(USAGE);
    return 0;
  }
  for (const required of ["--model", "--data", "--out"]) {
    if (!args.flags.has(required)) {
      process.stderr.write(`error: ${required} is required\n${USAGE}`);
      return 2;
    }
  }
  const cfg: ExportConfig = {
    model: args.flags.get("--model")!,
    dataDir: args.flags.get("--data")!,
    outDir: args.flags.get("--out")!,
    vocabList: args.flags.get("--vocab-list"),
    lexicon: args.flags.get("--lexicon"),
    freq: args.flags.get("--freq"),
    tau: Number(args.flags.get("--tau") ?? "1.0"),
    probeTemplates: args.flags.get("--probe-templates"),
    overwrite: args.switches.has("--overwrite"),
  };
  const dim = Number(args.flags.get("--dim") ?? "32");
  if (!Number.isInteger(dim) || dim < 2) {
    process.stderr.write(`error: --dim must be an integer >= 2\n`);
    return 2;
  }
  if (!Number.isFinite(cfg.tau) || cfg.tau <= 0) {
    process.stderr.write(`error: --tau must be > 0\n`);
    return 2;
  }

  try {
    const backend = await loadBackend(cfg.model, dim);
    const summary = await exportStore(backend, cfg);
    const line =
      `exported ${summary.images} images across ${summary.classes} classes, ` +
      `${summary.tokenRows} token rows, ${summary.vocabWords} vocab words -> ${summary.outDir}`;
    if (args.switches.has("--json")) {
      process.stdout.write(JSON.stringify(summary) + "\n");
      process.stderr.write(line + "\n");
    } else {
      process.stdout.write(line + "\n");
    }
    return 0;
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
