"""Scikit-learn estimator facade over the selection + prompt-tuning pipeline.

The classifier is configured with the embedding resources (token table,
per-class token ids, candidate vocabulary) and the usual hyperparameters;
``fit(X, y)`` runs the full alternating schedule on the given image features,
``predict``/``predict_proba`` classify new features with the trained prompt.
All classes passed at construction are treated as the training label space;
the base/novel evaluation protocol lives in scheduler.evaluate.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import ConfigError
from .prompt import encode_prompt
from .scheduler import RunConfig, run
from .scorer import softmax_probs
from .store import Dataset, EmbeddingTable, Store
from .validation import check_features, check_labels
from .vocab import FilterConfig, filter_candidates


class InterpretablePromptClassifier(ClassifierMixin, BaseEstimator):
    """Cosine-softmax classifier with greedily selected semantic prompt tokens.

    Parameters mirror the run configuration; ``tokens`` is an EmbeddingTable
    of token embeddings, ``class_tokens`` gives the token ids naming each
    class, and ``vocab`` is the candidate vocabulary metadata (filtered with
    ``filter_config`` before selection).
    """

    def __init__(
        self,
        tokens=None,
        class_tokens=None,
        vocab=(),
        filter_config=None,
        template="[CLS] [...]",
        k=3,
        interval=10,
        epochs=100,
        alpha=2.0,
        diversity=0.1,
        tau=1.0,
        group=2,
        n_ctx=8,
        workers=1,
        seed=0,
        selection_subsample=1.0,
    ):
        self.tokens = tokens
        self.class_tokens = class_tokens
        self.vocab = vocab
        self.filter_config = filter_config
        self.template = template
        self.k = k
        self.interval = interval
        self.epochs = epochs
        self.alpha = alpha
        self.diversity = diversity
        self.tau = tau
        self.group = group
        self.n_ctx = n_ctx
        self.workers = workers
        self.seed = seed
        self.selection_subsample = selection_subsample

    @classmethod
    def from_store(cls, store: Store, **params) -> "InterpretablePromptClassifier":
        """Convenience constructor pulling resources out of a loaded store."""
        return cls(tokens=store.tokens, class_tokens=store.dataset.class_tokens, vocab=store.vocab, **params)

    def _config(self) -> RunConfig:
        cfg = RunConfig(
            k=self.k,
            interval=self.interval,
            epochs=self.epochs,
            alpha=self.alpha,
            diversity=self.diversity,
            tau=self.tau,
            group=self.group,
            n_ctx=self.n_ctx,
            workers=self.workers,
            template=self.template,
            seed=self.seed,
            selection_subsample=self.selection_subsample,
        )
        cfg.validate()
        return cfg

    def fit(self, X, y):
        if self.tokens is None or self.class_tokens is None:
            raise ConfigError("tokens and class_tokens are required to fit")
        tokens: EmbeddingTable = self.tokens
        X = check_features(X, dim=tokens.dim)
        n_classes = len(self.class_tokens)
        y = check_labels(y, n_classes=n_classes, n_samples=X.shape[0])

        images = EmbeddingTable(data=X).normalized_copy()
        present = tuple(sorted(int(c) for c in np.unique(y)))
        dataset = Dataset(
            images=images,
            labels=y,
            class_tokens=tuple(tuple(ids) for ids in self.class_tokens),
            base_classes=present,
            novel_classes=(),
        )
        store = Store(dim=tokens.dim, tables={"tokens": tokens, "images": images}, dataset=dataset, vocab=tuple(self.vocab))
        pool = filter_candidates(store.vocab, self.filter_config or FilterConfig())

        trace = run(store, pool, self._config())
        self.trace_ = trace
        self.state_ = trace.final_state
        self.selected_tokens_ = trace.selection.words
        self.classes_ = np.asarray(present, dtype=np.int64)
        self.n_features_in_ = tokens.dim
        self._token_table = tokens
        return self

    def _class_embeddings(self) -> np.ndarray:
        return np.stack([encode_prompt(self.state_, int(c), self._token_table) for c in self.classes_])

    def decision_function(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "state_")
        X = check_features(X, dim=self.n_features_in_)
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        if norms.min() < 1e-12:
            raise ConfigError("cannot classify a zero feature vector")
        return (X / norms) @ self._class_embeddings().T

    def predict_proba(self, X):
        sims = self.decision_function(X)
        return np.stack([softmax_probs(row, self.tau) for row in sims])

    def predict(self, X):
        sims = self.decision_function(X)
        return self.classes_[sims.argmax(axis=1)]
