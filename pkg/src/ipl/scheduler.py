"""Alternating discrete/continuous optimization and base-to-novel evaluation.

One run performs exactly k greedy token selections. After selection q the
token is frozen into semantic slot q and the soft vectors train for
``interval`` full-batch gradient epochs; once all k tokens are placed, the
remaining ``epochs - k * interval`` epochs refine the soft vectors. Selection
scores candidates with the fixed selection template over the base split by
default; ``select_with_trained_prompt`` switches the scoring prompt to the
evolving trained state instead.

Everything is driven by one seeded generator in a fixed order (soft init,
then the optional selection subsample), so a (store, config, seed) triple
fully determines the trace.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, FormatError, StateError
from .prompt import (
    DataSlice,
    PromptState,
    build_layout,
    encode_prompt,
    fill_semantic_slot,
    grad_soft,
    init_state,
    sgd_step,
    training_loss,
)
from .scorer import (
    FunctionEncoder,
    ObjectiveConfig,
    ObjectiveOracle,
    ScorerContext,
    TemplateEncoder,
    parse_template,
)
from .selector import SelectedSet, SelectionStep, greedy_select, greedy_step
from .store import Store
from .vocab import CandidatePool, pool_remove

INTERLEAVED = "interleaved"
REFINEMENT = "refinement"

# JSON key <-> field name map for RunConfig (external names follow the
# config-file schema; single letters are the conventional hyperparameters).
_CONFIG_KEYS = {
    "k": "k",
    "t": "interval",
    "T": "epochs",
    "alpha": "alpha",
    "lambda": "diversity",
    "tau": "tau",
    "m": "group",
    "n": "n_ctx",
    "B": "workers",
    "template": "template",
    "seed": "seed",
    "selection_subsample": "selection_subsample",
    "select_with_trained_prompt": "select_with_trained_prompt",
}


@dataclass(frozen=True)
class RunConfig:
    k: int = 3
    interval: int = 10
    epochs: int = 100
    alpha: float = 2.0
    diversity: float = 0.1
    tau: float = 1.0
    group: int = 2
    n_ctx: int = 8
    workers: int = 1
    template: str = "[CLS] [...]"
    seed: int = 0
    selection_subsample: float = 1.0
    select_with_trained_prompt: bool = False

    def validate(self) -> None:
        if self.k < 0:
            raise ConfigError("k must be >= 0")
        if self.interval < 1:
            raise ConfigError("t (interval) must be >= 1")
        if self.epochs < self.k * self.interval:
            raise ConfigError(f"T={self.epochs} is below k*t={self.k * self.interval}")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.diversity < 0:
            raise ConfigError("lambda (diversity) must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.group < 1:
            raise ConfigError("m (group) must be >= 1")
        if self.n_ctx < self.group * self.k:
            raise ConfigError(f"n={self.n_ctx} cannot host k={self.k} slots with m={self.group}")
        if self.workers < 1:
            raise ConfigError("B (workers) must be >= 1")
        if not 0 < self.selection_subsample <= 1:
            raise ConfigError("selection_subsample must be in (0, 1]")

    def to_json_dict(self) -> dict:
        plain = asdict(self)
        return {key: plain[attr] for key, attr in _CONFIG_KEYS.items()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunConfig":
        unknown = set(doc) - set(_CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs = {_CONFIG_KEYS[key]: value for key, value in doc.items()}
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        import os

        from .errors import MissingFileError

        if not os.path.isfile(path):
            raise MissingFileError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise FormatError(f"{path}: config must be a JSON object")
        return cls.from_json_dict(doc)


@dataclass(frozen=True)
class EpochRecord:
    phase: str
    loss: float


@dataclass(frozen=True)
class RunTrace:
    config: RunConfig
    selection: SelectedSet
    epoch_log: tuple[EpochRecord, ...]
    final_state: PromptState


@dataclass(frozen=True)
class Metrics:
    base: float
    novel: float
    hm: float


def harmonic_mean(base: float, novel: float) -> float:
    """2ab / (a + b) of two accuracy percentages."""
    for name, v in (("base", base), ("novel", novel)):
        if not 0 <= v <= 100:
            raise DomainError(f"{name} accuracy {v} outside 0..100")
    if base + novel == 0:
        raise DomainError("harmonic mean undefined when both accuracies are zero")
    return 2.0 * base * novel / (base + novel)


def _split_slice(store: Store, class_ids: Sequence[int]) -> DataSlice:
    class_ids = tuple(class_ids)
    pos = {c: i for i, c in enumerate(class_ids)}
    labels = store.dataset.labels
    mask = np.isin(labels, class_ids)
    images = store.images.data[mask]
    label_pos = np.array([pos[int(c)] for c in labels[mask]], dtype=np.int64)
    return DataSlice(images=images, label_pos=label_pos, class_ids=class_ids)


def selection_oracle(store: Store, cfg: RunConfig, slice_: DataSlice | None = None) -> ObjectiveOracle:
    """Selection objective over the base split with the config's template prompt."""
    base_ids = tuple(sorted(store.dataset.base_classes))
    if slice_ is None:
        slice_ = _split_slice(store, base_ids)
    word_ids = store.word_ids()
    encoder = TemplateEncoder(
        parse_template(cfg.template),
        store.tokens,
        [store.dataset.class_tokens[c] for c in slice_.class_ids],
        word_ids,
    )
    ctx = ScorerContext(slice_.images, slice_.label_pos, cfg.tau, encoder, store.tokens)
    return ObjectiveOracle(ctx, ObjectiveConfig(diversity=cfg.diversity), word_ids)


def run(store: Store, pool: CandidatePool, cfg: RunConfig) -> RunTrace:
    """Execute the full alternating schedule and return its trace."""
    cfg.validate()
    if len(pool) < cfg.k:
        raise StateError(f"pool of {len(pool)} cannot supply k={cfg.k} tokens")
    rng = np.random.default_rng(cfg.seed)
    base_ids = tuple(sorted(store.dataset.base_classes))
    train = _split_slice(store, base_ids)

    layout = build_layout(cfg.n_ctx, cfg.group, cfg.k)
    state = init_state(layout, store.dim, store.dataset.class_tokens, rng)

    if cfg.selection_subsample < 1.0:
        m = train.images.shape[0]
        count = max(1, int(round(cfg.selection_subsample * m)))
        idx = np.sort(rng.choice(m, size=count, replace=False))
        sel_slice = DataSlice(train.images[idx], train.label_pos[idx], base_ids)
    else:
        sel_slice = train

    word_ids = store.word_ids()
    obj_cfg = ObjectiveConfig(diversity=cfg.diversity)

    log: list[EpochRecord] = []

    def train_epochs(count: int, phase: str) -> None:
        nonlocal state
        for _ in range(count):
            loss = training_loss(state, train, store.tokens, cfg.tau)
            grad = grad_soft(state, train, store.tokens, cfg.tau)
            state = sgd_step(state, grad, cfg.alpha)
            log.append(EpochRecord(phase=phase, loss=loss))

    if cfg.k and not cfg.select_with_trained_prompt:
        oracle = selection_oracle(store, cfg, sel_slice)

        def hook(q: int, step: SelectionStep) -> None:
            nonlocal state
            state = fill_semantic_slot(state, q, step.token_id)
            train_epochs(cfg.interval, INTERLEAVED)

        selection = greedy_select(pool, cfg.k, oracle, workers=cfg.workers, hook=hook)
    elif cfg.k:
        # Alternative coupling: candidates are scored with the evolving trained
        # prompt instead of the fixed template. The scoring context is rebuilt
        # before each selection because the prompt changes between steps;
        # candidate ids temporarily occupy the next empty semantic slots.
        steps: list[SelectionStep] = []
        working = pool
        for q in range(cfg.k):
            # The oracle passes the full inserted set (selected + candidate),
            # so the probe starts from the current soft vectors with all
            # semantic slots cleared and fills them from the front.
            cleared = dataclasses.replace(state, semantic=(None,) * cfg.k)

            def encode(class_pos: int, inserted: tuple[str, ...], _base=cleared):
                probe = _base
                for slot, tid in enumerate(inserted):
                    probe = fill_semantic_slot(probe, slot, tid)
                return encode_prompt(probe, base_ids[class_pos], store.tokens)

            encoder = FunctionEncoder(encode, len(base_ids))
            ctx = ScorerContext(sel_slice.images, sel_slice.label_pos, cfg.tau, encoder, store.tokens)
            oracle = ObjectiveOracle(ctx, obj_cfg, word_ids)
            step = greedy_step(working, tuple(s.word for s in steps), oracle, workers=cfg.workers)
            working = pool_remove(working, step.word)
            steps.append(step)
            state = fill_semantic_slot(state, q, step.token_id)
            train_epochs(cfg.interval, INTERLEAVED)
        selection = SelectedSet(steps=tuple(steps))
    else:
        selection = SelectedSet()

    train_epochs(cfg.epochs - cfg.k * cfg.interval, REFINEMENT)
    return RunTrace(config=cfg, selection=selection, epoch_log=tuple(log), final_state=state)


def evaluate(store: Store, state: PromptState, tau: float) -> Metrics:
    """Base and novel split accuracy (percent) plus their harmonic mean.

    Novel classes reuse the trained layout, soft vectors, and semantic slots;
    only the class slot changes. Each split is classified against its own
    class list.
    """
    results = {}
    for name, split in (("base", store.dataset.base_classes), ("novel", store.dataset.novel_classes)):
        if not split:
            raise ConfigError(f"{name} split is empty")
        class_ids = tuple(sorted(split))
        slice_ = _split_slice(store, class_ids)
        y = np.stack([encode_prompt(state, c, store.tokens) for c in class_ids])
        logits = slice_.images @ y.T / tau
        preds = logits.argmax(axis=1)
        results[name] = 100.0 * float(np.mean(preds == slice_.label_pos))
    return Metrics(base=results["base"], novel=results["novel"], hm=harmonic_mean(results["base"], results["novel"]))


# --------------------------------------------------------------------------
# trace serialization


def trace_dict(trace: RunTrace) -> dict:
    return {
        "config": trace.config.to_json_dict(),
        "selection": [
            {
                "word": s.word,
                "token_id": s.token_id,
                "gain": s.gain,
                "delta_utility": s.delta_utility,
                "delta_redundancy": s.delta_redundancy,
                "pool_size_before": s.pool_size_before,
            }
            for s in trace.selection.steps
        ],
        "epoch_log": [[rec.phase, rec.loss] for rec in trace.epoch_log],
        "final_state": {
            "n": trace.final_state.layout.n_ctx,
            "m": trace.final_state.layout.group,
            "k": trace.final_state.layout.k,
            "semantic": list(trace.final_state.semantic),
            "soft": [[float(v) for v in row] for row in trace.final_state.soft],
        },
    }
