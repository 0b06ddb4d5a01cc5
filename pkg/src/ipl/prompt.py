"""Interleaved prompt state, its surrogate encoder, and exact gradients.

A prompt is a sequence of slots: learnable soft vectors, frozen semantic
token slots (empty until selection fills them), and a trailing class slot.
Each semantic slot sits immediately after a group of ``group`` soft slots.

The encoder is a bag of embeddings: the L2-normalized mean of all contributing
slot vectors, where empty semantic slots are skipped and the class slot is the
mean of the class-name token embeddings. Because the encoder is closed-form,
the gradient of the training loss with respect to the soft vectors is exact;
grad_soft is validated against central finite differences in the test suite.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ._util import write_json_atomic
from .errors import ConfigError, ContractError, FormatError, NumericError, StateError
from .store import EmbeddingTable, matrix_from_bytes, matrix_to_bytes

SOFT = "soft"
SEMANTIC = "semantic"
CLASS = "class"

SOFT_INIT_SCALE = 0.02


@dataclass(frozen=True)
class PromptLayout:
    """Slot order for n soft vectors, k semantic slots in groups of m, one class slot."""

    n_ctx: int
    group: int
    k: int
    order: tuple[tuple[str, int], ...]


def build_layout(n_ctx: int, group: int, k: int) -> PromptLayout:
    """Deterministic interleaved slot order.

    Semantic slot j follows the j-th group of ``group`` soft slots; leftover
    soft slots come after the last semantic slot, and the class slot is last.
    """
    if n_ctx < 1 or group < 1 or k < 0:
        raise ConfigError(f"invalid layout: n_ctx={n_ctx}, group={group}, k={k}")
    if n_ctx < group * k:
        raise ConfigError(f"n_ctx={n_ctx} cannot host {k} semantic slots with group size {group}")
    order: list[tuple[str, int]] = []
    soft_idx = 0
    for j in range(k):
        for _ in range(group):
            order.append((SOFT, soft_idx))
            soft_idx += 1
        order.append((SEMANTIC, j))
    while soft_idx < n_ctx:
        order.append((SOFT, soft_idx))
        soft_idx += 1
    order.append((CLASS, 0))
    return PromptLayout(n_ctx=n_ctx, group=group, k=k, order=tuple(order))


@dataclass(frozen=True)
class PromptState:
    """Value-semantics prompt: layout, learnable soft rows, frozen semantic ids."""

    layout: PromptLayout
    soft: np.ndarray  # (n_ctx, dim) float64
    semantic: tuple[str | None, ...]
    class_tokens: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        soft = np.asarray(self.soft, dtype=np.float64)
        if soft.shape[0] != self.layout.n_ctx:
            raise ContractError(f"soft matrix has {soft.shape[0]} rows, layout wants {self.layout.n_ctx}")
        if not np.isfinite(soft).all():
            raise NumericError("soft matrix contains non-finite values")
        if len(self.semantic) != self.layout.k:
            raise ContractError(f"{len(self.semantic)} semantic slots, layout wants {self.layout.k}")
        object.__setattr__(self, "soft", soft)
        object.__setattr__(self, "semantic", tuple(self.semantic))
        object.__setattr__(self, "class_tokens", tuple(tuple(ids) for ids in self.class_tokens))

    @property
    def filled(self) -> tuple[str, ...]:
        return tuple(tid for tid in self.semantic if tid is not None)


def init_state(
    layout: PromptLayout,
    dim: int,
    class_tokens: Sequence[Sequence[str]],
    rng: np.random.Generator,
    scale: float = SOFT_INIT_SCALE,
) -> PromptState:
    """Fresh state: Gaussian soft rows, all semantic slots empty."""
    soft = scale * rng.standard_normal((layout.n_ctx, dim))
    return PromptState(
        layout=layout,
        soft=soft,
        semantic=(None,) * layout.k,
        class_tokens=tuple(tuple(ids) for ids in class_tokens),
    )


def _class_slot_vector(state: PromptState, class_id: int, tokens: EmbeddingTable) -> np.ndarray:
    ids = state.class_tokens[class_id]
    return np.mean([tokens.vector(tid) for tid in ids], axis=0)


def _slot_sum(state: PromptState, class_id: int, tokens: EmbeddingTable) -> tuple[np.ndarray, int]:
    """Sum and count of contributing slot vectors; empty semantic slots are skipped."""
    total = state.soft.sum(axis=0)
    count = state.layout.n_ctx
    for tid in state.semantic:
        if tid is not None:
            total = total + tokens.vector(tid)
            count += 1
    total = total + _class_slot_vector(state, class_id, tokens)
    count += 1
    return total, count


def encode_prompt(state: PromptState, class_id: int, tokens: EmbeddingTable) -> np.ndarray:
    """L2-normalized mean of the prompt's contributing slot vectors."""
    total, count = _slot_sum(state, class_id, tokens)
    mean = total / count
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise NumericError("prompt encodes to a zero vector")
    return mean / norm


@dataclass(frozen=True)
class DataSlice:
    """Unit image features with labels given as positions into class_ids."""

    images: np.ndarray  # (m, dim)
    label_pos: np.ndarray  # (m,) positions in class_ids
    class_ids: tuple[int, ...]

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.label_pos, dtype=np.int64)
        if images.ndim != 2 or images.shape[0] == 0:
            raise ConfigError("slice needs a non-empty (m, d) image matrix")
        if labels.shape != (images.shape[0],):
            raise ConfigError("one label per image required")
        if labels.min() < 0 or labels.max() >= len(self.class_ids):
            raise ConfigError("label position outside the class list")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "label_pos", labels)
        object.__setattr__(self, "class_ids", tuple(self.class_ids))


def _prompt_matrix(state: PromptState, slice_: DataSlice, tokens: EmbeddingTable):
    """Per-class unit embeddings plus the mean norms needed by the gradient."""
    means = []
    count = None
    for c in slice_.class_ids:
        total, count = _slot_sum(state, c, tokens)
        means.append(total / count)
    means = np.stack(means)
    norms = np.linalg.norm(means, axis=1)
    if norms.min() < 1e-12:
        raise NumericError("a class prompt encodes to a zero vector")
    return means / norms[:, None], norms, count


def training_loss(state: PromptState, slice_: DataSlice, tokens: EmbeddingTable, tau: float) -> float:
    """Mean cross-entropy of the cosine-softmax classifier under this prompt."""
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    y, _, _ = _prompt_matrix(state, slice_, tokens)
    logits = slice_.images @ y.T / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(slice_.label_pos)), slice_.label_pos]
    return float(np.mean(logz - picked))


def grad_soft(state: PromptState, slice_: DataSlice, tokens: EmbeddingTable, tau: float) -> np.ndarray:
    """Exact gradient of training_loss with respect to every soft row.

    Every soft row enters each class's prompt mean identically, so the
    per-row gradient is the same vector: the softmax residual pulled back
    through the normalization Jacobian of each class embedding, summed over
    classes, and replicated across the n_ctx rows.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    y, norms, count = _prompt_matrix(state, slice_, tokens)
    n_img = slice_.images.shape[0]
    logits = slice_.images @ y.T / tau
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    residual = probs
    residual[np.arange(n_img), slice_.label_pos] -= 1.0
    grad_y = residual.T @ slice_.images / (n_img * tau)  # (N, dim)
    # Pull back through y_j = m_j / ||m_j|| with dm_j/dsoft_row = I / count.
    tangent = grad_y - y * (y * grad_y).sum(axis=1, keepdims=True)
    row_grad = (tangent / (norms[:, None] * count)).sum(axis=0)
    return np.tile(row_grad, (state.layout.n_ctx, 1))


def sgd_step(state: PromptState, grad: np.ndarray, alpha: float) -> PromptState:
    """soft <- soft - alpha * grad; semantic slots and class tokens untouched."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.soft.shape:
        raise ContractError(f"gradient shape {grad.shape} does not match soft shape {state.soft.shape}")
    if alpha <= 0:
        raise ContractError(f"alpha must be > 0, got {alpha}")
    return replace(state, soft=state.soft - alpha * grad)


def fill_semantic_slot(state: PromptState, j: int, token_id: str) -> PromptState:
    """Fill empty slot j with a token id; its embedding stays frozen thereafter."""
    if not 0 <= j < state.layout.k:
        raise ContractError(f"semantic slot {j} outside 0..{state.layout.k - 1}")
    if state.semantic[j] is not None:
        raise StateError(f"semantic slot {j} already holds {state.semantic[j]!r}")
    semantic = list(state.semantic)
    semantic[j] = token_id
    return replace(state, semantic=tuple(semantic))


# --------------------------------------------------------------------------
# checkpoint file


def save_prompt(state: PromptState, path: str) -> None:
    """Write prompt.json: layout parameters, semantic ids, soft matrix payload.

    The payload reuses the binary matrix format, so checkpointed soft vectors
    are rounded to 32-bit like every other stored matrix.
    """
    payload = base64.b64encode(matrix_to_bytes(state.soft)).decode("ascii")
    write_json_atomic(
        path,
        {
            "n": state.layout.n_ctx,
            "m": state.layout.group,
            "k": state.layout.k,
            "semantic": list(state.semantic),
            "soft_b64": payload,
        },
    )


def load_prompt(path: str, class_tokens: Sequence[Sequence[str]]) -> PromptState:
    import json
    import os

    from .errors import MissingFileError

    if not os.path.isfile(path):
        raise MissingFileError(f"prompt checkpoint not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("n", "m", "k", "semantic", "soft_b64"):
        if key not in doc:
            raise FormatError(f"{path}: missing key {key!r}")
    layout = build_layout(doc["n"], doc["m"], doc["k"])
    soft = matrix_from_bytes(base64.b64decode(doc["soft_b64"]), source=path)
    return PromptState(
        layout=layout,
        soft=soft,
        semantic=tuple(doc["semantic"]),
        class_tokens=tuple(tuple(ids) for ids in class_tokens),
    )
