"""Embedding store: in-memory data model plus the on-disk interchange format.

A store bundles everything one experiment needs: dense embedding tables
(tokens, images), per-image labels, per-class token ids, the base/novel class
split, and raw vocabulary metadata. On disk a store is a directory with

* ``manifest.json``  -- links the pieces together,
* ``<name>.iple``    -- one binary matrix per table,
* ``vocab.tsv``      -- vocabulary metadata, one word per row.

Matrices are stored as little-endian float32 but held in memory as float64 so
downstream gradient and oracle checks are not precision-limited. Every
in-memory matrix is pinned to the float32 grid (see ``quantize32``), which
makes save/load round trips bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from ._util import quantize32, write_bytes_atomic, write_json_atomic, write_text_atomic
from .errors import FormatError, IntegrityError, MissingFileError, NumericError

MATRIX_MAGIC = b"IPLE"
MATRIX_VERSION = 1
MANIFEST_VERSION = 1
VOCAB_HEADER = "word\ttoken_id\tzipf\tin_lexicon\tpiece_count"

# Row norms of a table flagged ``normalized`` must sit within this of 1.
NORM_TOLERANCE = 1e-6
# Below this norm a row is considered a zero vector and rejected at load.
ZERO_NORM = 1e-12


@dataclass(frozen=True)
class EmbeddingTable:
    """Row-major matrix of embeddings keyed by opaque string ids.

    Ids default to the decimal row index, which is how both the synthetic
    generator and real exporters address rows (a tokenizer's integer token id
    is its row in the token-embedding table).
    """

    data: np.ndarray  # (rows, dim) float64
    normalized: bool = False
    id_map: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise FormatError(f"embedding table must be 2-d, got shape {data.shape}")
        if data.base is not None or data is self.data:
            data = data.copy()
        data.setflags(write=False)  # tables are immutable once constructed
        object.__setattr__(self, "data", data)
        if not self.id_map:
            object.__setattr__(self, "id_map", {str(i): i for i in range(data.shape[0])})
        for key, row in self.id_map.items():
            if not 0 <= row < data.shape[0]:
                raise IntegrityError(f"id {key!r} maps to row {row}, outside 0..{data.shape[0] - 1}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def resolve(self, token_id: str) -> int:
        """Map an external id to its row index; unknown id is an integrity error."""
        try:
            return self.id_map[token_id]
        except KeyError:
            raise IntegrityError(f"unknown id {token_id!r}") from None

    def vector(self, token_id: str) -> np.ndarray:
        return self.data[self.resolve(token_id)]

    def check_rows(self, name: str) -> None:
        """Reject non-finite entries and zero rows; verify the normalized flag."""
        if not np.isfinite(self.data).all():
            raise FormatError(f"table {name!r} contains non-finite values")
        if self.rows:
            norms = np.linalg.norm(self.data, axis=1)
            bad = np.flatnonzero(norms < ZERO_NORM)
            if bad.size:
                raise IntegrityError(f"table {name!r} row {int(bad[0])} is a zero vector")
            if self.normalized and np.abs(norms - 1.0).max() > NORM_TOLERANCE:
                worst = int(np.abs(norms - 1.0).argmax())
                raise IntegrityError(
                    f"table {name!r} is flagged normalized but row {worst} has norm {norms[worst]:.9f}"
                )

    def normalized_copy(self) -> "EmbeddingTable":
        """L2-normalize every row, pinned to the float32 grid, and flag it."""
        norms = np.linalg.norm(self.data, axis=1, keepdims=True)
        if self.rows and norms.min() < ZERO_NORM:
            raise NumericError("cannot normalize a table containing zero rows")
        return replace(self, data=quantize32(self.data / norms), normalized=True)


@dataclass(frozen=True)
class VocabMeta:
    """Per-word metadata used by candidate filtering."""

    word: str
    token_id: str
    zipf: float
    in_lexicon: bool
    piece_count: int

    def __post_init__(self):
        if self.piece_count < 1:
            raise FormatError(f"word {self.word!r}: piece_count must be >= 1, got {self.piece_count}")
        if self.zipf < 0:
            raise FormatError(f"word {self.word!r}: zipf must be >= 0, got {self.zipf}")


@dataclass(frozen=True)
class Dataset:
    """Image features, labels, class token ids, and the base/novel class split."""

    images: EmbeddingTable
    labels: np.ndarray  # (n_images,) int64 class indices
    class_tokens: tuple[tuple[str, ...], ...]
    base_classes: tuple[int, ...]
    novel_classes: tuple[int, ...]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        n_classes = len(self.class_tokens)
        if labels.shape != (self.images.rows,):
            raise IntegrityError(
                f"{labels.shape[0]} labels for {self.images.rows} image rows"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            bad = int(labels[(labels < 0) | (labels >= n_classes)][0])
            raise IntegrityError(f"label {bad} outside 0..{n_classes - 1}")
        for split_name, split in (("base", self.base_classes), ("novel", self.novel_classes)):
            for c in split:
                if not 0 <= c < n_classes:
                    raise IntegrityError(f"{split_name} split references class {c}, outside 0..{n_classes - 1}")
                if not (labels == c).any():
                    raise IntegrityError(f"class {c} is in the {split_name} split but has no images")
        if set(self.base_classes) & set(self.novel_classes):
            overlap = sorted(set(self.base_classes) & set(self.novel_classes))
            raise IntegrityError(f"base and novel splits overlap on classes {overlap}")

    @property
    def n_classes(self) -> int:
        return len(self.class_tokens)


@dataclass(frozen=True)
class Store:
    """A fully linked store: tables plus dataset plus vocabulary."""

    dim: int
    tables: dict[str, EmbeddingTable]
    dataset: Dataset
    vocab: tuple[VocabMeta, ...]

    @property
    def tokens(self) -> EmbeddingTable:
        return self.tables["tokens"]

    @property
    def images(self) -> EmbeddingTable:
        return self.dataset.images

    def word_ids(self) -> dict[str, str]:
        """word -> token id map over the raw vocabulary (first occurrence wins)."""
        out: dict[str, str] = {}
        for meta in self.vocab:
            out.setdefault(meta.word, meta.token_id)
        return out


def link_store(
    dim: int,
    tables: dict[str, EmbeddingTable],
    labels,
    class_tokens,
    base_classes,
    novel_classes,
    vocab,
) -> Store:
    """Validate cross-references and assemble a Store.

    The images table is L2-normalized here (once) unless already flagged, so
    cosine similarity downstream reduces to a dot product.
    """
    for required in ("tokens", "images"):
        if required not in tables:
            raise IntegrityError(f"store is missing required table {required!r}")
    for name, table in tables.items():
        if table.dim != dim:
            raise FormatError(f"table {name!r} has dim {table.dim}, manifest says {dim}")
        table.check_rows(name)
    if not tables["images"].normalized:
        tables = dict(tables)
        tables["images"] = tables["images"].normalized_copy()
    tokens = tables["tokens"]
    class_tokens = tuple(tuple(ids) for ids in class_tokens)
    for c, ids in enumerate(class_tokens):
        if not ids:
            raise IntegrityError(f"class {c} has an empty token sequence")
        for tid in ids:
            tokens.resolve(tid)
    vocab = tuple(vocab)
    for meta in vocab:
        tokens.resolve(meta.token_id)
    dataset = Dataset(
        images=tables["images"],
        labels=labels,
        class_tokens=class_tokens,
        base_classes=tuple(int(c) for c in base_classes),
        novel_classes=tuple(int(c) for c in novel_classes),
    )
    return Store(dim=dim, tables=tables, dataset=dataset, vocab=vocab)


# --------------------------------------------------------------------------
# binary matrix format


def matrix_to_bytes(data: np.ndarray) -> bytes:
    data = np.asarray(data, dtype=np.float64)
    header = MATRIX_MAGIC + struct.pack("<III", MATRIX_VERSION, data.shape[0], data.shape[1])
    return header + data.astype("<f4").tobytes()


def matrix_from_bytes(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < 16 or raw[:4] != MATRIX_MAGIC:
        raise FormatError(f"{source}: not a matrix file (bad magic)")
    version, rows, dim = struct.unpack("<III", raw[4:16])
    if version != MATRIX_VERSION:
        raise FormatError(f"{source}: unsupported matrix version {version}")
    expected = rows * dim * 4
    payload = raw[16:]
    if len(payload) != expected:
        raise FormatError(
            f"{source}: header states {rows}x{dim} ({expected} payload bytes) but file has {len(payload)}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return values.reshape(rows, dim)


def write_matrix(path: str, data: np.ndarray) -> None:
    write_bytes_atomic(path, matrix_to_bytes(data))


def read_matrix(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise MissingFileError(f"matrix file not found: {path}")
    with open(path, "rb") as fh:
        return matrix_from_bytes(fh.read(), source=path)


# --------------------------------------------------------------------------
# vocab.tsv


def write_vocab_tsv(path: str, vocab) -> None:
    lines = [VOCAB_HEADER]
    for meta in vocab:
        lines.append(
            f"{meta.word}\t{meta.token_id}\t{meta.zipf!r}\t{int(meta.in_lexicon)}\t{meta.piece_count}"
        )
    write_text_atomic(path, "\n".join(lines) + "\n")


def read_vocab_tsv(path: str) -> tuple[VocabMeta, ...]:
    if not os.path.isfile(path):
        raise MissingFileError(f"vocab file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != VOCAB_HEADER:
        raise FormatError(f"{path} line 1: expected header {VOCAB_HEADER!r}")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"{path} line {lineno}: expected 5 tab-separated fields, got {len(parts)}")
        word, token_id, zipf_s, lex_s, pieces_s = parts
        if lex_s not in ("0", "1"):
            raise FormatError(f"{path} line {lineno}: in_lexicon must be 0 or 1, got {lex_s!r}")
        try:
            zipf = float(zipf_s)
            pieces = int(pieces_s)
        except ValueError as exc:
            raise FormatError(f"{path} line {lineno}: {exc}") from None
        try:
            out.append(VocabMeta(word=word, token_id=token_id, zipf=zipf, in_lexicon=lex_s == "1", piece_count=pieces))
        except FormatError as exc:
            raise FormatError(f"{path} line {lineno}: {exc}") from None
    return tuple(out)


# --------------------------------------------------------------------------
# manifest


_MANIFEST_KEYS = {
    "version",
    "dim",
    "tables",
    "labels",
    "class_tokens",
    "base_classes",
    "novel_classes",
    "vocab",
    "normalized",
}


def save_store(store: Store, directory: str) -> None:
    """Write manifest.json, one .iple file per table, and vocab.tsv."""
    os.makedirs(directory, exist_ok=True)
    table_files = {}
    for name, table in store.tables.items():
        filename = f"{name}.iple"
        write_matrix(os.path.join(directory, filename), table.data)
        table_files[name] = filename
    write_vocab_tsv(os.path.join(directory, "vocab.tsv"), store.vocab)
    manifest = {
        "version": MANIFEST_VERSION,
        "dim": store.dim,
        "tables": table_files,
        "labels": [int(v) for v in store.dataset.labels],
        "class_tokens": [list(ids) for ids in store.dataset.class_tokens],
        "base_classes": list(store.dataset.base_classes),
        "novel_classes": list(store.dataset.novel_classes),
        "vocab": "vocab.tsv",
        "normalized": {name: table.normalized for name, table in store.tables.items()},
    }
    write_json_atomic(os.path.join(directory, "manifest.json"), manifest)


def load_manifest(path: str) -> Store:
    """Load a store from a manifest file or a directory containing one.

    Returns a fully linked store; every cross-reference (labels vs classes,
    class tokens and vocab ids vs the token table) has been validated.
    """
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    if not os.path.isfile(path):
        raise MissingFileError(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(manifest, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    unknown = set(manifest) - _MANIFEST_KEYS
    if unknown:
        raise FormatError(f"{path}: unknown manifest keys {sorted(unknown)}")
    missing = _MANIFEST_KEYS - set(manifest)
    if missing:
        raise FormatError(f"{path}: missing manifest keys {sorted(missing)}")
    if manifest["version"] != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {manifest['version']!r}")

    base = os.path.dirname(os.path.abspath(path))
    flags = manifest["normalized"]
    tables = {}
    for name, filename in manifest["tables"].items():
        data = read_matrix(os.path.join(base, filename))
        tables[name] = EmbeddingTable(data=data, normalized=bool(flags.get(name, False)))
    vocab = read_vocab_tsv(os.path.join(base, manifest["vocab"]))
    return link_store(
        dim=int(manifest["dim"]),
        tables=tables,
        labels=manifest["labels"],
        class_tokens=manifest["class_tokens"],
        base_classes=manifest["base_classes"],
        novel_classes=manifest["novel_classes"],
        vocab=vocab,
    )


def stores_equal(a: Store, b: Store) -> bool:
    """Field-by-field equality with bit-exact matrix comparison."""
    if a.dim != b.dim or set(a.tables) != set(b.tables):
        return False
    for name in a.tables:
        ta, tb = a.tables[name], b.tables[name]
        if ta.normalized != tb.normalized or ta.data.shape != tb.data.shape:
            return False
        if not np.array_equal(ta.data, tb.data):
            return False
    da, db = a.dataset, b.dataset
    return (
        np.array_equal(da.labels, db.labels)
        and da.class_tokens == db.class_tokens
        and da.base_classes == db.base_classes
        and da.novel_classes == db.novel_classes
        and a.vocab == b.vocab
    )
