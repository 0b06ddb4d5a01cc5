import assert from "node:assert/strict";
import { test } from "node:test";
import { execFileSync, spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { MockBackend, MockTokenizer } from "../src/backend";
import { main } from "../src/cli";
import { readMatrix } from "../src/format";

function tmpdir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "clip-export-test-"));
}

/** Tiny image-folder fixture: 3 classes, a few byte-blob "images" each. */
function makeFixture(root: string): { data: string; vocab: string; lexicon: string; freq: string } {
  const data = path.join(root, "data");
  const classes: Record<string, string[]> = {
    cat: ["whiskers", "tabby", "tom"],
    dog: ["beagle", "pug"],
    owl: ["barn", "snowy"],
  };
  for (const [name, files] of Object.entries(classes)) {
    fs.mkdirSync(path.join(data, name), { recursive: true });
    for (const file of files) {
      fs.writeFileSync(path.join(data, name, `${file}.img`), `pixels of ${name}/${file}`);
    }
  }
  const vocab = path.join(root, "words.txt");
  fs.writeFileSync(vocab, ["furry", "nocturnal", "photographic", "x9", "Furry"].join("\n") + "\n");
  const lexicon = path.join(root, "lexicon.txt");
  fs.writeFileSync(lexicon, ["furry", "nocturnal", "cat", "dog", "owl"].join("\n") + "\n");
  const freq = path.join(root, "zipf.tsv");
  fs.writeFileSync(freq, "furry\t4.1\nnocturnal\t3.6\n");
  return { data, vocab, lexicon, freq };
}

async function runExport(root: string, extra: string[] = []): Promise<string> {
  const fixture = makeFixture(root);
  const out = path.join(root, "store");
  const code = await main([
    "--model",
    "mock",
    "--data",
    fixture.data,
    "--out",
    out,
    "--vocab-list",
    fixture.vocab,
    "--lexicon",
    fixture.lexicon,
    "--freq",
    fixture.freq,
    "--tau",
    "0.5",
    ...extra,
  ]);
  assert.equal(code, 0);
  return out;
}

test("mock tokenizer piece rules", () => {
  const tok = new MockTokenizer();
  assert.deepEqual(tok.tokenize("furry"), ["furry"]);
  assert.deepEqual(tok.tokenize("photographic"), ["photogra", "phic"]); // 12 letters -> 2 pieces
  assert.deepEqual(tok.tokenize("co-op"), ["co", "op"]);
  assert.deepEqual(tok.tokenize("x9"), ["x"]);
  assert.deepEqual(tok.tokenize("999"), []);
});

test("mock embeddings are deterministic and unit norm", () => {
  const backend = new MockBackend(16);
  const a = backend.embedToken("furry");
  const b = backend.embedToken("furry");
  assert.deepEqual(a, b);
  const norm = Math.sqrt(a.reduce((acc, x) => acc + x * x, 0));
  assert.ok(Math.abs(norm - 1) < 1e-12);
  assert.notDeepEqual(backend.embedToken("furry"), backend.embedToken("furrz"));
});

test("export writes a complete store with valid shapes", async () => {
  const root = tmpdir();
  const out = await runExport(root);

  const manifest = JSON.parse(fs.readFileSync(path.join(out, "manifest.json"), "utf-8"));
  assert.deepEqual(Object.keys(manifest).sort(), [
    "base_classes",
    "class_tokens",
    "dim",
    "labels",
    "normalized",
    "novel_classes",
    "tables",
    "version",
    "vocab",
  ]);
  assert.equal(manifest.version, 1);
  assert.equal(manifest.dim, 32);
  assert.equal(manifest.labels.length, 7); // 3 + 2 + 2 images
  assert.deepEqual(manifest.base_classes, [0, 1]); // first ceil(3/2) classes
  assert.deepEqual(manifest.novel_classes, [2]);
  assert.equal(manifest.class_tokens.length, 3);

  const images = readMatrix(path.join(out, "images.iple"));
  assert.equal(images.rows, 7);
  assert.equal(images.dim, 32);

  const tokens = readMatrix(path.join(out, "tokens.iple"));
  assert.equal(tokens.dim, 32);
  // class token ids resolve inside the token table
  for (const ids of manifest.class_tokens) {
    for (const id of ids) {
      assert.ok(Number(id) >= 0 && Number(id) < tokens.rows);
    }
  }
});

test("token matrix row count equals the tokenizer piece inventory", async () => {
  const root = tmpdir();
  const out = await runExport(root);
  const tok = new MockTokenizer();
  const pieces = new Set<string>();
  for (const word of ["furry", "nocturnal", "photographic", "x9"]) {
    for (const piece of tok.tokenize(word)) pieces.add(piece);
  }
  for (const name of ["cat", "dog", "owl"]) {
    for (const piece of tok.tokenize(name)) pieces.add(piece);
  }
  const tokens = readMatrix(path.join(out, "tokens.iple"));
  assert.equal(tokens.rows, pieces.size);
});

test("vocab.tsv carries piece counts, zipf sentinel, lexicon flags", async () => {
  const root = tmpdir();
  const out = await runExport(root);
  const lines = fs.readFileSync(path.join(out, "vocab.tsv"), "utf-8").trim().split("\n");
  const rows = new Map(
    lines.slice(1).map((line) => {
      const [word, tokenId, zipf, inLexicon, pieces] = line.split("\t");
      return [word, { tokenId, zipf: Number(zipf), inLexicon, pieces: Number(pieces) }] as const;
    })
  );
  assert.equal(rows.size, 4); // Furry deduplicates onto furry
  assert.equal(rows.get("furry")!.pieces, 1);
  assert.equal(rows.get("furry")!.zipf, 4.1);
  assert.equal(rows.get("furry")!.inLexicon, "1");
  assert.equal(rows.get("photographic")!.pieces, 2);
  assert.equal(rows.get("photographic")!.zipf, 0); // absent from the frequency source
  assert.equal(rows.get("photographic")!.inLexicon, "0");
  assert.equal(rows.get("x9")!.pieces, 1); // alphabetic run "x"
});

test("image rows are unit norm within 1e-5", async () => {
  const root = tmpdir();
  const out = await runExport(root);
  const images = readMatrix(path.join(out, "images.iple"));
  for (let r = 0; r < images.rows; r++) {
    let sq = 0;
    for (let c = 0; c < images.dim; c++) {
      sq += images.data[r * images.dim + c] ** 2;
    }
    assert.ok(Math.abs(Math.sqrt(sq) - 1) < 1e-5, `row ${r} norm ${Math.sqrt(sq)}`);
  }
});

test("export is deterministic: identical bytes across runs", async () => {
  const rootA = tmpdir();
  const rootB = tmpdir();
  const outA = await runExport(rootA);
  const outB = await runExport(rootB);
  for (const name of ["manifest.json", "tokens.iple", "images.iple", "vocab.tsv", "export_meta.json"]) {
    assert.deepEqual(fs.readFileSync(path.join(outA, name)), fs.readFileSync(path.join(outB, name)), name);
  }
});

test("non-empty output directory is refused without --overwrite", async () => {
  const root = tmpdir();
  const fixture = makeFixture(root);
  const out = path.join(root, "store");
  fs.mkdirSync(out, { recursive: true });
  fs.writeFileSync(path.join(out, "stale.txt"), "old");
  const argv = ["--model", "mock", "--data", fixture.data, "--out", out];
  assert.equal(await main(argv), 1);
  assert.equal(await main([...argv, "--overwrite"]), 0);
});

test("empty class directory is an error naming the class", async () => {
  const root = tmpdir();
  const fixture = makeFixture(root);
  fs.mkdirSync(path.join(fixture.data, "bat"));
  const code = await main(["--model", "mock", "--data", fixture.data, "--out", path.join(root, "store")]);
  assert.equal(code, 1);
});

test("probe templates produce text_probe output", async () => {
  const root = tmpdir();
  const probes = path.join(root, "templates.txt");
  fs.writeFileSync(probes, "a photo of a [CLS], with emphasis on:\n");
  const out = await runExport(root, ["--probe-templates", probes]);
  const probeMatrix = readMatrix(path.join(out, "text_probe", "probes.iple"));
  const meta = JSON.parse(fs.readFileSync(path.join(out, "text_probe", "probe_meta.json"), "utf-8"));
  assert.equal(meta.templates.length, 1);
  assert.equal(probeMatrix.rows, meta.templates.length * meta.words.length);
});

test("unknown model name fails clearly", async () => {
  const root = tmpdir();
  const fixture = makeFixture(root);
  const code = await main(["--model", "martian", "--data", fixture.data, "--out", path.join(root, "s")]);
  assert.equal(code, 1);
});

// ---------------------------------------------------------------------------
// cross-component: the primary library must load what we wrote

function pythonAvailable(): boolean {
  const probe = spawnSync("python3", ["-c", "import ipl"], { encoding: "utf-8" });
  return probe.status === 0;
}

test("exported store loads via the primary load_manifest without integrity errors", async (t) => {
  if (!pythonAvailable()) {
    t.skip("python3 with the ipl package is not available");
    return;
  }
  const root = tmpdir();
  const out = await runExport(root);
  const script = [
    "import json, sys",
    "import ipl",
    `store = ipl.load_manifest(${JSON.stringify(out)})`,
    "counts = {name: table.rows for name, table in store.tables.items()}",
    "print(json.dumps({'dim': store.dim, 'tables': counts, 'classes': store.dataset.n_classes}))",
  ].join("\n");
  const output = execFileSync("python3", ["-c", script], { encoding: "utf-8" });
  const doc = JSON.parse(output.trim());
  assert.equal(doc.dim, 32);
  assert.equal(doc.classes, 3);
  assert.equal(doc.tables.images, 7);
});

test("primary CLI runs selection end-to-end on an exported store", async (t) => {
  if (!pythonAvailable()) {
    t.skip("python3 with the ipl package is not available");
    return;
  }
  const root = tmpdir();
  const out = await runExport(root);
  const cfgPath = path.join(root, "cfg.json");
  fs.writeFileSync(cfgPath, JSON.stringify({ k: 1, t: 1, T: 2, n: 2, tau: 0.5, lambda: 0.0 }));
  const result = spawnSync(
    "python3",
    ["-m", "ipl.cli", "oracle", "--config", cfgPath, "--store", out, "--k", "1", "--json"],
    { encoding: "utf-8" }
  );
  assert.equal(result.status, 0, result.stderr);
  const doc = JSON.parse(result.stdout);
  assert.ok(doc.greedy_value <= doc.optimal_value + 1e-9);
  assert.equal(doc.trace.length, 1);
});
