"""Synthetic planted-attribute stores.

The generator builds a desk-scale analogue of a cached vision-language
classification problem in which the useful vocabulary is knowable by
construction: a handful of planted attribute directions are mixed into the
image features of the classes that own them, the candidate vocabulary consists
of exactly those attribute directions plus random distractors, and the
base/novel class split shares attributes across the two halves.

Three geometry choices make the store behave like the real problem it mimics:

* Class-name embeddings under-represent the attribute content of their images
  (``class_token_attr``, negative by default), so a class name alone is a weak
  prompt and inserting the right attribute token visibly repairs the
  classification margins. Distractors live in the orthogonal complement of
  the prototype/attribute subspace (irrelevant by construction) and share a
  positive cone direction (``distractor_cone``), mirroring the anisotropy of
  real token embeddings; their pairwise cosines are therefore positive.
* Class-name embeddings are scaled up (``class_token_scale``), modelling
  prompts whose fixed context outweighs any single inserted token; insertion
  then shifts margins gently instead of drowning the class signal.
* Attribute strength decays across attribute indices (``attr_decay``): the
  strongest attribute dominates its classes' images and is missing the most
  from their names, so greedy selection finds attributes in decreasing order
  of value and the gain curve diminishes by construction. Base and novel
  halves own the attributes in the same order, which is what lets selections
  made on base classes transfer.

Vocabulary naming convention (tests and reports rely on it):
``plant??`` planted attribute tokens, ``dupe??`` near-duplicates of planted
directions, ``dist??`` distractors, where ?? counts aa, ab, ac, ...
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from ._util import quantize32
from .errors import ConfigError
from .store import EmbeddingTable, Store, VocabMeta, link_store


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 12
    dim: int = 64
    attributes: int = 6
    images_per_class: int = 20
    noise: float = 0.12
    proto_weight: float = 1.0
    attr_weight: float = 1.5
    # Per-index strength falloff: attribute j carries weight
    # max(attr_floor, 1 - attr_decay * j) in both images and class names.
    attr_decay: float = 0.15
    attr_floor: float = 0.1
    # Coefficient of the class's own attribute direction inside its class-name
    # embedding. Negative values withhold attribute information from the name.
    class_token_attr: float = -0.8
    # Norm of class-name embeddings relative to unit attribute/distractor
    # tokens; models fixed prompt context that dominates single insertions.
    class_token_scale: float = 4.0
    distractors: int = 40
    # Weight of the shared cone direction mixed into every distractor.
    distractor_cone: float = 0.5
    duplicate_planted: int = 0
    # Per-class attribute index; default assigns attribute (p % attributes) to
    # the class at position p of its half, so both halves share attributes.
    attribute_assignment: tuple[int, ...] | None = None
    # Orthonormalize prototypes and attributes (requires dim >= classes + attributes).
    orthogonal: bool = True
    base_count: int | None = None

    def validate(self) -> None:
        if self.classes < 2:
            raise ConfigError("classes must be >= 2")
        if self.dim < 2:
            raise ConfigError("dim must be >= 2")
        if self.attributes < 0 or self.distractors < 0:
            raise ConfigError("attributes and distractors must be >= 0")
        if self.images_per_class < 1:
            raise ConfigError("images_per_class must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if not 0 <= self.duplicate_planted <= self.attributes:
            raise ConfigError("duplicate_planted must be in 0..attributes")
        if self.class_token_scale <= 0:
            raise ConfigError("class_token_scale must be > 0")
        if self.attr_decay < 0 or self.attr_floor <= 0:
            raise ConfigError("attr_decay must be >= 0 and attr_floor > 0")
        if self.distractor_cone < 0:
            raise ConfigError("distractor_cone must be >= 0")
        if self.orthogonal:
            needed = self.classes + self.attributes + (1 + self.distractors if self.distractors else 0)
            if self.dim < needed:
                raise ConfigError(
                    f"orthogonal geometry needs dim >= {needed} "
                    f"(classes + attributes + cone axis + one per distractor), got dim={self.dim}"
                )
        if self.attribute_assignment is not None:
            if len(self.attribute_assignment) != self.classes:
                raise ConfigError("attribute_assignment must list one attribute per class")
            if self.attributes == 0:
                raise ConfigError("attribute_assignment given but attributes == 0")
            for a in self.attribute_assignment:
                if not 0 <= a < self.attributes:
                    raise ConfigError(f"attribute index {a} outside 0..{self.attributes - 1}")
        base = self.classes // 2 if self.base_count is None else self.base_count
        if not 1 <= base < self.classes:
            raise ConfigError("base_count must leave at least one base and one novel class")


def _letters(i: int) -> str:
    lo = string.ascii_lowercase
    return lo[i // 26] + lo[i % 26]


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _default_assignment(classes: int, base_count: int, attributes: int) -> tuple[int, ...]:
    """Round-robin within each half, so base and novel classes share attributes."""
    base = [p % attributes for p in range(base_count)]
    novel = [p % attributes for p in range(classes - base_count)]
    return tuple(base + novel)


def synth_generate(cfg: SynthConfig, seed: int) -> Store:
    """Deterministically generate a planted-attribute store for a given seed."""
    cfg.validate()
    rng = np.random.default_rng(seed)

    # Orthonormal directions: class prototypes, attributes, the distractor
    # cone axis, then one private axis per distractor.
    n_dirs = cfg.classes + cfg.attributes + 1 + cfg.distractors
    raw = rng.standard_normal((n_dirs, cfg.dim))
    if cfg.orthogonal:
        q, r = np.linalg.qr(raw.T)
        # Fix QR sign ambiguity so the basis is a deterministic function of raw.
        q = q * np.sign(np.diag(r))
        dirs = q.T[:n_dirs]
    else:
        dirs = _unit_rows(raw)
    protos = dirs[: cfg.classes]
    attrs = dirs[cfg.classes : cfg.classes + cfg.attributes]
    cone = dirs[cfg.classes + cfg.attributes]
    dist_axes = dirs[cfg.classes + cfg.attributes + 1 :]

    base_count = cfg.classes // 2 if cfg.base_count is None else cfg.base_count
    if cfg.attributes:
        assignment = (
            _default_assignment(cfg.classes, base_count, cfg.attributes)
            if cfg.attribute_assignment is None
            else cfg.attribute_assignment
        )
    else:
        assignment = tuple()

    strength = np.maximum(cfg.attr_floor, 1.0 - cfg.attr_decay * np.arange(max(cfg.attributes, 1)))

    # Token table layout: class-name tokens, planted, duplicates, distractors.
    class_rows = np.empty((cfg.classes, cfg.dim))
    for c in range(cfg.classes):
        v = protos[c].copy()
        if cfg.attributes:
            a = assignment[c]
            v = v + cfg.class_token_attr * strength[a] * attrs[a]
        class_rows[c] = v
    class_rows = cfg.class_token_scale * _unit_rows(class_rows)

    planted_rows = attrs.copy()
    dup_rows = np.empty((cfg.duplicate_planted, cfg.dim))
    for i in range(cfg.duplicate_planted):
        wobble = rng.standard_normal(cfg.dim)
        dup_rows[i] = attrs[i] + 0.05 * wobble / np.linalg.norm(wobble)
    if cfg.duplicate_planted:
        dup_rows = _unit_rows(dup_rows)
    # Each distractor mixes its private axis with the shared cone, so every
    # distractor pair has the same positive cosine and none is informative.
    dist_rows = np.empty((cfg.distractors, cfg.dim))
    for i in range(cfg.distractors):
        dist_rows[i] = dist_axes[i] + cfg.distractor_cone * cone
    if cfg.distractors:
        dist_rows = _unit_rows(dist_rows)

    token_data = quantize32(np.vstack([class_rows, planted_rows, dup_rows, dist_rows]))
    tokens = EmbeddingTable(data=token_data, normalized=cfg.class_token_scale == 1.0)

    vocab = []
    offset = cfg.classes
    for i in range(cfg.attributes):
        vocab.append(VocabMeta(f"plant{_letters(i)}", str(offset + i), 5.0, True, 1))
    offset += cfg.attributes
    for i in range(cfg.duplicate_planted):
        vocab.append(VocabMeta(f"dupe{_letters(i)}", str(offset + i), 5.0, True, 1))
    offset += cfg.duplicate_planted
    for i in range(cfg.distractors):
        vocab.append(VocabMeta(f"dist{_letters(i)}", str(offset + i), 5.0, True, 1))

    n_images = cfg.classes * cfg.images_per_class
    image_data = np.empty((n_images, cfg.dim))
    labels = np.empty(n_images, dtype=np.int64)
    row = 0
    for c in range(cfg.classes):
        for _ in range(cfg.images_per_class):
            v = cfg.proto_weight * protos[c]
            if cfg.attributes:
                a = assignment[c]
                v = v + cfg.attr_weight * strength[a] * attrs[a]
            if cfg.noise:
                v = v + cfg.noise * rng.standard_normal(cfg.dim)
            image_data[row] = v
            labels[row] = c
            row += 1
    images = EmbeddingTable(data=quantize32(_unit_rows(image_data)), normalized=True)

    return link_store(
        dim=cfg.dim,
        tables={"tokens": tokens, "images": images},
        labels=labels,
        class_tokens=[[str(c)] for c in range(cfg.classes)],
        base_classes=range(base_count),
        novel_classes=range(base_count, cfg.classes),
        vocab=vocab,
    )
