"""Candidate-pool construction: four-rule vocabulary filtering.

A word survives iff it is purely alphabetic with at least ``min_length``
characters, appears in the reference lexicon, has a Zipf frequency score at or
above the threshold, and maps to a single tokenizer piece. Lexicon membership,
Zipf scores, and piece counts are input data (produced by an exporter or a
fixture); nothing linguistic is computed here.

Rejected words are attributed to the first rule they fail, in the order
stated above, which makes the rejection report deterministic. Words are
lowercased before filtering; repeats after lowercasing are reported under a
separate ``duplicate`` count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError, NotFoundError
from .store import VocabMeta

REJECTION_ORDER = ("length", "lexicon", "zipf", "pieces", "duplicate")


@dataclass(frozen=True)
class FilterConfig:
    min_length: int = 3
    zipf_threshold: float = 3.5
    require_lexicon: bool = True
    max_pieces: int = 1

    def __post_init__(self):
        if self.min_length < 1:
            raise ConfigError("min_length must be >= 1")
        if self.zipf_threshold < 0:
            raise ConfigError("zipf_threshold must be >= 0")
        if self.max_pieces < 1:
            raise ConfigError("max_pieces must be >= 1")


@dataclass(frozen=True)
class CandidatePool:
    """Filter survivors, in input order, plus per-rule rejection counts."""

    entries: tuple[VocabMeta, ...]
    rejected: dict[str, int] = field(default_factory=dict)

    def words(self) -> list[str]:
        return [meta.word for meta in self.entries]

    def token_id(self, word: str) -> str:
        for meta in self.entries:
            if meta.word == word:
                return meta.token_id
        raise NotFoundError(f"word {word!r} not in pool")

    def __contains__(self, word: str) -> bool:
        return any(meta.word == word for meta in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def is_alphabetic(word: str) -> bool:
    """True iff every character is an ASCII letter; empty strings fail."""
    return bool(word) and all(("a" <= ch <= "z") or ("A" <= ch <= "Z") for ch in word)


def _first_failure(meta: VocabMeta, cfg: FilterConfig) -> str | None:
    if not is_alphabetic(meta.word) or len(meta.word) < cfg.min_length:
        return "length"
    if cfg.require_lexicon and not meta.in_lexicon:
        return "lexicon"
    if meta.zipf < cfg.zipf_threshold:
        return "zipf"
    if meta.piece_count > cfg.max_pieces:
        return "pieces"
    return None


def filter_candidates(raw, cfg: FilterConfig = FilterConfig()) -> CandidatePool:
    """Apply the four filtering rules to raw vocabulary metadata.

    Kept entries plus the rejection counts always partition the input:
    len(raw) == len(pool) + sum(pool.rejected.values()).
    """
    rejected = {name: 0 for name in REJECTION_ORDER}
    kept: list[VocabMeta] = []
    seen: set[str] = set()
    for meta in raw:
        lowered = meta.word.lower()
        if lowered != meta.word:
            meta = replace(meta, word=lowered)
        reason = _first_failure(meta, cfg)
        if reason is None and meta.word in seen:
            reason = "duplicate"
        if reason is None:
            kept.append(meta)
            seen.add(meta.word)
        else:
            rejected[reason] += 1
    return CandidatePool(entries=tuple(kept), rejected=rejected)


def pool_remove(pool: CandidatePool, word: str) -> CandidatePool:
    """Return a new pool without the given word; absent word is an error."""
    if word not in pool:
        raise NotFoundError(f"word {word!r} not in pool")
    return CandidatePool(
        entries=tuple(meta for meta in pool.entries if meta.word != word),
        rejected=dict(pool.rejected),
    )
