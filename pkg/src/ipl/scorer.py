"""Classification scoring and the selection objective.

Prediction follows the CLIP recipe over cached embeddings: cosine similarity
between a unit image feature and each class's prompt embedding, scaled by a
temperature and pushed through a softmax. The selection objective scores a
token set as

    objective(W) = utility(W) - diversity * redundancy(W)

where utility is the drop in classification cross-entropy achieved by
inserting the tokens into the selection template, and redundancy is the sum
of pairwise cosine similarities among the selected token embeddings.

Prompts here are encoded with a bag-of-embeddings surrogate: the
L2-normalized mean of the slot vectors. This keeps every quantity closed-form
(see prompt.grad_soft) at the cost of text-encoder fidelity; the trade-off is
documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, IntegrityError, NumericError
from .selector import GainParts, SetFunction, _map_candidates
from .store import EmbeddingTable

CLASS_MARKER = "[CLS]"
INSERT_MARKER = "[...]"
_STRIP = ",.:;!?\"'"


@dataclass(frozen=True)
class Template:
    """Parsed selection template: literal words plus one class and one insert slot."""

    items: tuple[tuple[str, str | None], ...]  # ("word", w) | ("class", None) | ("insert", None)
    text: str

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(w for kind, w in self.items if kind == "word")


def parse_template(text: str) -> Template:
    """Split template text into slots; requires exactly one [CLS] and one [...]."""
    items: list[tuple[str, str | None]] = []
    for piece in text.split():
        stripped = piece.strip(_STRIP)
        if stripped == CLASS_MARKER:
            items.append(("class", None))
        elif stripped == INSERT_MARKER:
            items.append(("insert", None))
        elif stripped:
            items.append(("word", stripped.lower()))
    kinds = [kind for kind, _ in items]
    if kinds.count("class") != 1 or kinds.count("insert") != 1:
        raise ConfigError(
            f"template must contain exactly one {CLASS_MARKER} and one {INSERT_MARKER}: {text!r}"
        )
    return Template(items=tuple(items), text=text)


class TemplateEncoder:
    """Bag-of-embeddings encoder for a fixed template over a fixed class list.

    encode(class_pos, inserted) returns the L2-normalized mean of the template
    word vectors, the class slot vector (mean of the class-name token
    embeddings), and one vector per inserted token, in insertion order.
    """

    def __init__(
        self,
        template: Template,
        tokens: EmbeddingTable,
        class_tokens: Sequence[Sequence[str]],
        word_ids: dict[str, str] | None = None,
    ):
        self.template = template
        self.tokens = tokens
        self.n_classes = len(class_tokens)
        word_ids = word_ids or {}
        fixed = np.zeros(tokens.dim)
        count = 0
        for word in template.words:
            if word not in word_ids:
                raise IntegrityError(f"template word {word!r} is not in the vocabulary")
            fixed = fixed + tokens.vector(word_ids[word])
            count += 1
        self._fixed_sum = fixed
        self._fixed_count = count
        self._class_vecs = np.stack(
            [np.mean([tokens.vector(tid) for tid in ids], axis=0) for ids in class_tokens]
        )

    def encode(self, class_pos: int, inserted: tuple[str, ...]) -> np.ndarray:
        total = self._fixed_sum + self._class_vecs[class_pos]
        count = self._fixed_count + 1
        for tid in inserted:
            total = total + self.tokens.vector(tid)
            count += 1
        mean = total / count
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise NumericError("prompt encodes to a zero vector")
        return mean / norm


class FunctionEncoder:
    """Wrap a bare encode callable with an explicit class count (test helper)."""

    def __init__(self, fn: Callable[[int, tuple[str, ...]], np.ndarray], n_classes: int):
        self._fn = fn
        self.n_classes = n_classes

    def encode(self, class_pos: int, inserted: tuple[str, ...]) -> np.ndarray:
        return self._fn(class_pos, inserted)


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weight of the redundancy penalty in the selection objective."""

    diversity: float = 0.1

    def __post_init__(self):
        if self.diversity < 0:
            raise ConfigError("diversity weight must be >= 0")


def softmax_probs(sims: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax with max-subtraction; output sums to 1 within 1e-12."""
    sims = np.asarray(sims, dtype=np.float64)
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    if not np.isfinite(sims).all():
        raise NumericError("softmax input contains non-finite values")
    scaled = sims / tau
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


class ScorerContext:
    """Immutable scoring context: unit image features, labels, temperature, encoder.

    ``labels`` index positions in the encoder's class list. The loss of the
    empty token set is computed eagerly at construction and reused by every
    utility evaluation.
    """

    def __init__(self, images: np.ndarray, labels: np.ndarray, tau: float, encoder, tokens: EmbeddingTable):
        images = np.asarray(images, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if tau <= 0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        if images.ndim != 2 or images.shape[0] == 0:
            raise ConfigError("context needs a non-empty (n, d) image matrix")
        if labels.shape != (images.shape[0],):
            raise ConfigError("one label per image row required")
        if labels.min() < 0 or labels.max() >= encoder.n_classes:
            raise IntegrityError(f"label outside 0..{encoder.n_classes - 1}")
        self.images = images
        self.labels = labels
        self.tau = float(tau)
        self.encoder = encoder
        self.tokens = tokens
        self.loss_empty = cross_entropy(self, ())


def _class_matrix(ctx: ScorerContext, w_sel: Sequence[str]) -> np.ndarray:
    inserted = tuple(w_sel)
    return np.stack([ctx.encoder.encode(j, inserted) for j in range(ctx.encoder.n_classes)])


def cross_entropy(ctx: ScorerContext, w_sel: Sequence[str]) -> float:
    """Mean over images of -log p(label | image) under the inserted token set."""
    y = _class_matrix(ctx, w_sel)
    logits = ctx.images @ y.T / ctx.tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(ctx.labels)), ctx.labels]
    return float(np.mean(logz - picked))


def utility(ctx: ScorerContext, w_sel: Sequence[str]) -> float:
    """Reduction in classification loss achieved by the token set."""
    if not tuple(w_sel):
        return 0.0
    return ctx.loss_empty - cross_entropy(ctx, w_sel)


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        raise NumericError("cosine of a zero vector")
    return v / norm


def redundancy(tokens: EmbeddingTable, w_sel: Sequence[str]) -> float:
    """Sum of pairwise cosine similarities among the selected token embeddings.

    Ids are put in a canonical order first, so the result is bit-identical
    under permutation of the input.
    """
    ids = sorted(w_sel)
    if len(ids) <= 1:
        return 0.0
    vecs = [_unit(tokens.vector(tid)) for tid in ids]
    total = 0.0
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            total += float(vecs[i] @ vecs[j])
    return total


def delta_redundancy(tokens: EmbeddingTable, w_sel: Sequence[str], w: str) -> float:
    """Cosine overlap the candidate token introduces against the selected set."""
    if not w_sel:
        return 0.0
    cand = _unit(tokens.vector(w))
    return float(sum(cand @ _unit(tokens.vector(tid)) for tid in w_sel))


def objective(ctx: ScorerContext, cfg: ObjectiveConfig, w_sel: Sequence[str]) -> float:
    """utility - diversity * redundancy for the given token set."""
    return utility(ctx, w_sel) - cfg.diversity * redundancy(ctx.tokens, w_sel)


def marginal_gain_parts(
    ctx: ScorerContext,
    cfg: ObjectiveConfig,
    w_sel: Sequence[str],
    w: str,
    base_loss: float | None = None,
) -> GainParts:
    """Decomposed marginal gain of adding token w to the selected set."""
    w_sel = tuple(w_sel)
    if w in w_sel:
        raise ContractError(f"candidate {w!r} is already selected")
    if base_loss is None:
        base_loss = ctx.loss_empty if not w_sel else cross_entropy(ctx, w_sel)
    du = base_loss - cross_entropy(ctx, w_sel + (w,))
    dr = delta_redundancy(ctx.tokens, w_sel, w)
    return GainParts(gain=du - cfg.diversity * dr, delta_utility=du, delta_redundancy=dr)


def marginal_gain(ctx: ScorerContext, cfg: ObjectiveConfig, w_sel: Sequence[str], w: str) -> float:
    return marginal_gain_parts(ctx, cfg, w_sel, w).gain


class ObjectiveOracle(SetFunction):
    """Selection objective as a set function over candidate words.

    Items are vocabulary words; ``word_ids`` maps each to the token id whose
    embedding it denotes. The per-step base loss is computed once and shared
    across all candidate evaluations of that step.
    """

    def __init__(self, ctx: ScorerContext, cfg: ObjectiveConfig, word_ids: dict[str, str]):
        self.ctx = ctx
        self.cfg = cfg
        self.word_ids = dict(word_ids)

    def token_id(self, item: str) -> str:
        try:
            return self.word_ids[item]
        except KeyError:
            raise IntegrityError(f"word {item!r} has no token id") from None

    def _ids(self, subset: tuple[str, ...]) -> tuple[str, ...]:
        return tuple(self.token_id(w) for w in subset)

    def value(self, subset: tuple[str, ...]) -> float:
        return objective(self.ctx, self.cfg, self._ids(subset))

    def step_gains(self, selected: tuple[str, ...], items: Sequence[str], workers: int = 1) -> list[GainParts]:
        sel_ids = self._ids(selected)
        base_loss = self.ctx.loss_empty if not sel_ids else cross_entropy(self.ctx, sel_ids)

        def one(item: str) -> GainParts:
            return marginal_gain_parts(self.ctx, self.cfg, sel_ids, self.token_id(item), base_loss=base_loss)

        return _map_candidates(one, items, workers)
