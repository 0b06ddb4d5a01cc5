/**
 * Export pipeline: dump a model's token-embedding table, image features,
 * class token ids, and vocabulary metadata as an ipl store directory.
 *
 * Determinism contract: given the same model, data directory, and config the
 * produced bytes are identical (no timestamps, stable orderings everywhere).
 * Provenance that has no slot in the fixed manifest schema (recorded tau,
 * embedding space, split convention, skip counts) goes into the
 * export_meta.json sidecar, which the core library never reads.
 */

import * as fs from "fs";
import * as path from "path";

import { ModelBackend, normalize } from "./backend";
import { Manifest, VocabRow, canonicalJson, writeFileAtomic, writeManifest, writeMatrix, writeVocabTsv } from "./format";

export interface ExportConfig {
  model: string;
  dataDir: string;
  outDir: string;
  vocabList?: string;
  lexicon?: string;
  freq?: string;
  tau: number;
  probeTemplates?: string;
  overwrite: boolean;
}

export interface ExportSummary {
  outDir: string;
  classes: number;
  images: number;
  tokenRows: number;
  vocabWords: number;
  skippedWords: number;
  skippedImages: number;
}

/** Piece inventory: rows of the token table, ids in first-seen order. */
export class TokenInventory {
  private ids = new Map<string, number>();
  readonly pieces: string[] = [];

  idOf(piece: string): number {
    let id = this.ids.get(piece);
    if (id === undefined) {
      id = this.pieces.length;
      this.ids.set(piece, id);
      this.pieces.push(piece);
    }
    return id;
  }

  get size(): number {
    return this.pieces.length;
  }
}

function readLines(file: string): string[] {
  return fs
    .readFileSync(file, "utf-8")
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
}

function readFreq(file: string): Map<string, number> {
  const out = new Map<string, number>();
  for (const line of readLines(file)) {
    const [word, zipf] = line.split("\t");
    const value = Number(zipf);
    if (!Number.isFinite(value) || value < 0) {
      throw new Error(`${file}: bad zipf for ${word}: ${zipf}`);
    }
    out.set(word.toLowerCase(), value);
  }
  return out;
}

function listClassDirs(dataDir: string): string[] {
  const entries = fs
    .readdirSync(dataDir, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort();
  if (entries.length < 2) {
    throw new Error(`${dataDir}: need at least 2 class subdirectories, found ${entries.length}`);
  }
  return entries;
}

export interface TokenExport {
  inventory: TokenInventory;
  vocabRows: VocabRow[];
  classTokens: string[][];
  skippedWords: number;
}

/**
 * Tokenize the raw vocabulary and class names with the model's own
 * tokenizer, building the piece inventory that defines the token table.
 */
export function exportTokens(backend: ModelBackend, classNames: string[], cfg: ExportConfig): TokenExport {
  const inventory = new TokenInventory();
  const vocabRows: VocabRow[] = [];
  let skippedWords = 0;

  const lexicon = cfg.lexicon ? new Set(readLines(cfg.lexicon).map((w) => w.toLowerCase())) : null;
  const freq = cfg.freq ? readFreq(cfg.freq) : new Map<string, number>();

  const seen = new Set<string>();
  const words = cfg.vocabList ? readLines(cfg.vocabList).map((w) => w.toLowerCase()) : [];
  for (const word of words) {
    if (seen.has(word)) {
      continue;
    }
    seen.add(word);
    const pieces = backend.tokenizer.tokenize(word);
    if (pieces.length === 0) {
      skippedWords += 1; // nothing tokenizable (e.g. digits only)
      continue;
    }
    const ids = pieces.map((p) => inventory.idOf(p));
    vocabRows.push({
      word,
      tokenId: String(ids[0]),
      zipf: freq.get(word) ?? 0, // absent from the frequency source -> 0
      inLexicon: lexicon ? lexicon.has(word) : true,
      pieceCount: pieces.length,
    });
  }

  const classTokens: string[][] = classNames.map((name) => {
    const pieces = backend.tokenizer.tokenize(name);
    if (pieces.length === 0) {
      throw new Error(`class name ${name} produces no tokenizer pieces`);
    }
    return pieces.map((p) => String(inventory.idOf(p)));
  });

  return { inventory, vocabRows, classTokens, skippedWords };
}

export interface ImageExport {
  rows: number[][];
  labels: number[];
  skipped: number;
}

/** Embed every readable file under each class directory, in sorted order. */
export function exportImages(backend: ModelBackend, dataDir: string, classNames: string[]): ImageExport {
  const rows: number[][] = [];
  const labels: number[] = [];
  let skipped = 0;
  classNames.forEach((name, classIndex) => {
    const dir = path.join(dataDir, name);
    const files = fs
      .readdirSync(dir, { withFileTypes: true })
      .filter((e) => e.isFile())
      .map((e) => e.name)
      .sort();
    let kept = 0;
    for (const file of files) {
      let bytes: Buffer;
      try {
        bytes = fs.readFileSync(path.join(dir, file));
      } catch (err) {
        process.stderr.write(`warning: skipping unreadable ${path.join(dir, file)}: ${err}\n`);
        skipped += 1;
        continue;
      }
      rows.push(normalize(backend.embedImage(bytes)));
      labels.push(classIndex);
      kept += 1;
    }
    if (kept === 0) {
      throw new Error(`class ${name} has no readable images`);
    }
  });
  return { rows, labels, skipped };
}

function ensureOutDir(outDir: string, overwrite: boolean): void {
  if (fs.existsSync(outDir)) {
    const entries = fs.readdirSync(outDir);
    if (entries.length > 0 && !overwrite) {
      throw new Error(`output directory ${outDir} is not empty; pass --overwrite to replace it`);
    }
  }
  fs.mkdirSync(outDir, { recursive: true });
}

function exportProbes(backend: ModelBackend, cfg: ExportConfig, vocabRows: VocabRow[]): void {
  if (!cfg.probeTemplates) {
    return;
  }
  const templates = readLines(cfg.probeTemplates);
  const words = vocabRows.filter((r) => r.pieceCount === 1).map((r) => r.word);
  const rows: number[][] = [];
  for (const template of templates) {
    for (const word of words) {
      // Post-encoder text embedding of template + single token; the mock
      // backend hashes the joined string, a real backend would run its text
      // encoder over the filled template.
      rows.push(normalize(backend.embedImage(Buffer.from(`text:${template} ${word}`))));
    }
  }
  const probeDir = path.join(cfg.outDir, "text_probe");
  writeMatrix(path.join(probeDir, "probes.iple"), rows, backend.dim);
  writeFileAtomic(
    path.join(probeDir, "probe_meta.json"),
    canonicalJson({ templates, words, row_order: "template-major" })
  );
}

export async function exportStore(backend: ModelBackend, cfg: ExportConfig): Promise<ExportSummary> {
  ensureOutDir(cfg.outDir, cfg.overwrite);
  const classNames = listClassDirs(cfg.dataDir);

  const tokens = exportTokens(backend, classNames, cfg);
  const images = exportImages(backend, cfg.dataDir, classNames);

  const tokenRows = tokens.inventory.pieces.map((piece) => backend.embedToken(piece));
  writeMatrix(path.join(cfg.outDir, "tokens.iple"), tokenRows, backend.dim);
  writeMatrix(path.join(cfg.outDir, "images.iple"), images.rows, backend.dim);
  writeVocabTsv(path.join(cfg.outDir, "vocab.tsv"), tokens.vocabRows);

  // First half (rounded up) of the sorted class names is the base split.
  const baseCount = Math.ceil(classNames.length / 2);
  const manifest: Manifest = {
    version: 1,
    dim: backend.dim,
    tables: { tokens: "tokens.iple", images: "images.iple" },
    labels: images.labels,
    class_tokens: tokens.classTokens,
    base_classes: Array.from({ length: baseCount }, (_, i) => i),
    novel_classes: Array.from({ length: classNames.length - baseCount }, (_, i) => baseCount + i),
    vocab: "vocab.tsv",
    normalized: { tokens: false, images: true },
  };
  writeManifest(path.join(cfg.outDir, "manifest.json"), manifest);

  writeFileAtomic(
    path.join(cfg.outDir, "export_meta.json"),
    canonicalJson({
      model: backend.name,
      dim: backend.dim,
      tau: cfg.tau,
      // Token embeddings are the raw table, before any text encoder or
      // projection; the core treats them as opaque vectors.
      embedding_space: "token_table_pre_encoder",
      split_convention: "first_ceil_half_base",
      class_names: classNames,
      skipped_words: tokens.skippedWords,
      skipped_images: images.skipped,
    })
  );

  exportProbes(backend, cfg, tokens.vocabRows);

  return {
    outDir: cfg.outDir,
    classes: classNames.length,
    images: images.rows.length,
    tokenRows: tokens.inventory.size,
    vocabWords: tokens.vocabRows.length,
    skippedWords: tokens.skippedWords,
    skippedImages: images.skipped,
  };
}
