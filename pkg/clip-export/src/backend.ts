/**
 * Model backends: something that can tokenize words, embed tokens, and embed
 * image files.
 *
 * The "mock" backend is fully deterministic and needs no downloads: vectors
 * come from a counter-based PRNG seeded by content hashes, so the same word
 * or file bytes always map to the same embedding. It exists so the export
 * pipeline and its file-format contract can be exercised hermetically.
 *
 * The "hf" backend loads a real model through @huggingface/transformers when
 * that optional dependency (and its weights) are available.
 */

export interface Tokenizer {
  /** Lowercased word -> ordered piece strings. */
  tokenize(word: string): string[];
}

export interface ModelBackend {
  readonly name: string;
  readonly dim: number;
  tokenizer: Tokenizer;
  /** Embedding of one tokenizer piece (token-table row). */
  embedToken(piece: string): number[];
  /** Feature vector for raw image bytes; unit norm. */
  embedImage(bytes: Buffer): number[];
}

// --------------------------------------------------------------------------
// deterministic PRNG helpers

function fnv1a(bytes: Buffer | string): number {
  const data = typeof bytes === "string" ? Buffer.from(bytes, "utf-8") : bytes;
  let hash = 0x811c9dc5;
  for (const byte of data) {
    hash ^= byte;
    hash = Math.imul(hash, 0x01000193);
  }
  return hash >>> 0;
}

/** sfc32: small, fast, deterministic 32-bit PRNG. */
function sfc32(a: number, b: number, c: number, d: number): () => number {
  return () => {
    a >>>= 0;
    b >>>= 0;
    c >>>= 0;
    d >>>= 0;
    const t = (a + b + d) >>> 0;
    d = (d + 1) >>> 0;
    a = b ^ (b >>> 9);
    b = (c + (c << 3)) >>> 0;
    c = ((c << 21) | (c >>> 11)) >>> 0;
    c = (c + t) >>> 0;
    return (t >>> 0) / 4294967296;
  };
}

function gaussianVector(seed: string | Buffer, dim: number): number[] {
  const h = fnv1a(seed);
  const rand = sfc32(h, h ^ 0x9e3779b9, Math.imul(h, 0x85ebca6b) >>> 0, Math.imul(h, 0xc2b2ae35) >>> 0);
  for (let i = 0; i < 12; i++) rand(); // warm up past correlated initial state
  const out = new Array<number>(dim);
  for (let i = 0; i < dim; i += 2) {
    const u1 = Math.max(rand(), 1e-12);
    const u2 = rand();
    const r = Math.sqrt(-2 * Math.log(u1));
    out[i] = r * Math.cos(2 * Math.PI * u2);
    if (i + 1 < dim) {
      out[i + 1] = r * Math.sin(2 * Math.PI * u2);
    }
  }
  return out;
}

export function normalize(v: number[]): number[] {
  const norm = Math.sqrt(v.reduce((acc, x) => acc + x * x, 0));
  if (norm < 1e-12) {
    throw new Error("cannot normalize a zero vector");
  }
  return v.map((x) => x / norm);
}

// --------------------------------------------------------------------------
// mock backend

const MOCK_MAX_PIECE = 8;

export class MockTokenizer implements Tokenizer {
  /** Maximal alphabetic runs, each chopped into chunks of <= 8 characters. */
  tokenize(word: string): string[] {
    const runs = word.toLowerCase().match(/[a-z]+/g) ?? [];
    const pieces: string[] = [];
    for (const run of runs) {
      for (let i = 0; i < run.length; i += MOCK_MAX_PIECE) {
        pieces.push(run.slice(i, i + MOCK_MAX_PIECE));
      }
    }
    return pieces;
  }
}

export class MockBackend implements ModelBackend {
  readonly name = "mock";
  readonly dim: number;
  tokenizer = new MockTokenizer();

  constructor(dim = 32) {
    this.dim = dim;
  }

  embedToken(piece: string): number[] {
    return normalize(gaussianVector(`token:${piece}`, this.dim));
  }

  embedImage(bytes: Buffer): number[] {
    return normalize(gaussianVector(Buffer.concat([Buffer.from("image:"), bytes]), this.dim));
  }
}

// --------------------------------------------------------------------------
// real-model backend (optional dependency)

export async function loadBackend(model: string, dim: number): Promise<ModelBackend> {
  if (model === "mock") {
    return new MockBackend(dim);
  }
  if (model.startsWith("hf:")) {
    return loadHfBackend(model.slice(3));
  }
  throw new Error(`unknown model ${model}; use "mock" or "hf:<model-id>"`);
}

async function loadHfBackend(modelId: string): Promise<ModelBackend> {
  let transformers: any;
  try {
    transformers = await import("@huggingface/transformers" as string);
  } catch {
    throw new Error(
      "the hf backend needs the optional @huggingface/transformers dependency " +
        "(npm install @huggingface/transformers) and downloadable weights"
    );
  }
  const tokenizer = await transformers.AutoTokenizer.from_pretrained(modelId);
  const textModel = await transformers.CLIPTextModelWithProjection.from_pretrained(modelId);
  const visionModel = await transformers.CLIPVisionModelWithProjection.from_pretrained(modelId);
  const embeddings = textModel.text_model.embeddings.token_embedding.weight;
  const [vocabSize, dim] = embeddings.dims;

  const backend: ModelBackend = {
    name: `hf:${modelId}`,
    dim,
    tokenizer: {
      tokenize(word: string): string[] {
        const ids: number[] = Array.from(tokenizer.encode(word, { add_special_tokens: false }));
        return ids.map((id) => String(id));
      },
    },
    embedToken(piece: string): number[] {
      const id = Number(piece);
      if (!Number.isInteger(id) || id < 0 || id >= vocabSize) {
        throw new Error(`token id ${piece} outside the model vocabulary`);
      }
      const row = embeddings.data.slice(id * dim, (id + 1) * dim);
      return Array.from(row, Number);
    },
    embedImage(): number[] {
      throw new Error("hf image features require the image processor pipeline; not wired in this build");
    },
  };
  return backend;
}
