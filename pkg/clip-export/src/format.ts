/**
 * Writers for the ipl store interchange format.
 *
 * Matrix files: magic "IPLE", little-endian u32 version=1, u32 rows, u32 dim,
 * then rows*dim float32 values, row-major, no padding.
 * vocab.tsv: header word/token_id/zipf/in_lexicon/piece_count, one word per row.
 * manifest.json: the fixed key set the loader validates against.
 */

import * as fs from "fs";
import * as path from "path";

export const MATRIX_MAGIC = "IPLE";
export const MATRIX_VERSION = 1;
export const MANIFEST_VERSION = 1;
export const VOCAB_HEADER = "word\ttoken_id\tzipf\tin_lexicon\tpiece_count";

export interface VocabRow {
  word: string;
  tokenId: string;
  zipf: number;
  inLexicon: boolean;
  pieceCount: number;
}

export interface Manifest {
  version: number;
  dim: number;
  tables: Record<string, string>;
  labels: number[];
  class_tokens: string[][];
  base_classes: number[];
  novel_classes: number[];
  vocab: string;
  normalized: Record<string, boolean>;
}

export function matrixToBytes(rows: number[][] | Float64Array[], dim: number): Buffer {
  const count = rows.length;
  const header = Buffer.alloc(16);
  header.write(MATRIX_MAGIC, 0, "ascii");
  header.writeUInt32LE(MATRIX_VERSION, 4);
  header.writeUInt32LE(count, 8);
  header.writeUInt32LE(dim, 12);
  const payload = Buffer.alloc(count * dim * 4);
  for (let r = 0; r < count; r++) {
    const row = rows[r];
    if (row.length !== dim) {
      throw new Error(`row ${r} has ${row.length} values, expected ${dim}`);
    }
    for (let c = 0; c < dim; c++) {
      payload.writeFloatLE(Math.fround(row[c] as number), (r * dim + c) * 4);
    }
  }
  return Buffer.concat([header, payload]);
}

export function writeMatrix(file: string, rows: number[][], dim: number): void {
  writeFileAtomic(file, matrixToBytes(rows, dim));
}

export function readMatrix(file: string): { rows: number; dim: number; data: Float64Array } {
  const raw = fs.readFileSync(file);
  if (raw.length < 16 || raw.toString("ascii", 0, 4) !== MATRIX_MAGIC) {
    throw new Error(`${file}: bad matrix magic`);
  }
  const version = raw.readUInt32LE(4);
  if (version !== MATRIX_VERSION) {
    throw new Error(`${file}: unsupported matrix version ${version}`);
  }
  const rows = raw.readUInt32LE(8);
  const dim = raw.readUInt32LE(12);
  if (raw.length - 16 !== rows * dim * 4) {
    throw new Error(`${file}: payload is ${raw.length - 16} bytes, header wants ${rows * dim * 4}`);
  }
  const data = new Float64Array(rows * dim);
  for (let i = 0; i < rows * dim; i++) {
    data[i] = raw.readFloatLE(16 + i * 4);
  }
  return { rows, dim, data };
}

export function writeVocabTsv(file: string, rows: VocabRow[]): void {
  const lines = [VOCAB_HEADER];
  for (const row of rows) {
    lines.push(
      `${row.word}\t${row.tokenId}\t${formatFloat(row.zipf)}\t${row.inLexicon ? 1 : 0}\t${row.pieceCount}`
    );
  }
  writeFileAtomic(file, lines.join("\n") + "\n");
}

export function writeManifest(file: string, manifest: Manifest): void {
  writeFileAtomic(file, canonicalJson(manifest));
}

/** Stable JSON: sorted keys, two-space indent, trailing newline. */
export function canonicalJson(value: unknown): string {
  return JSON.stringify(sortKeys(value), null, 2) + "\n";
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) {
    return value.map(sortKeys);
  }
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as Record<string, unknown>).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

/** Python-compatible float repr for the zipf column (4.0 stays "4.0"). */
function formatFloat(x: number): string {
  if (Number.isInteger(x)) {
    return `${x}.0`;
  }
  return String(x);
}

export function writeFileAtomic(file: string, payload: Buffer | string): void {
  const dir = path.dirname(file);
  fs.mkdirSync(dir, { recursive: true });
  const tmp = path.join(dir, `.tmp-${process.pid}-${path.basename(file)}~`);
  fs.writeFileSync(tmp, payload);
  fs.renameSync(tmp, file);
}
