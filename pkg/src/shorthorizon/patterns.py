"""Discriminative sequential patterns over attempt tokens.

Each attempt becomes one of six tokens: an outcome letter (``S``/``F``) and a
speed class (``g`` guess, ``n`` normal, ``s`` slow, relative to the training
mean on the unit). Candidates are contiguous token n-grams of length 2 to 4
that are frequent in at least one post-test group; the chi-squared statistic
of the occurrence-by-group table ranks them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.stats import chi2 as chi2_dist

from .features import GUESS_THRESHOLD_S, EventArrays, PopulationTimeStats
from .ingest import Trajectory

# sorted, so code order is lexicographic symbol order
TOKENS = ("Fg", "Fn", "Fs", "Sg", "Sn", "Ss")
N_TOKENS = len(TOKENS)
MIN_LENGTH, MAX_LENGTH = 2, 4
DEFAULT_MIN_SUPPORT = 0.2
DEFAULT_TOP_K = 10
DEFAULT_ALPHA = 0.05


class PatternMiningError(ValueError):
    pass


@dataclass(frozen=True)
class PatternSpec:
    symbols: tuple[str, ...]
    support_low: float
    support_high: float
    chi2: float = 0.0

    def __post_init__(self) -> None:
        if not MIN_LENGTH <= len(self.symbols) <= MAX_LENGTH:
            raise ValueError(f"pattern length must be {MIN_LENGTH}-{MAX_LENGTH}")

    @property
    def codes(self) -> tuple[int, ...]:
        return tuple(TOKENS.index(s) for s in self.symbols)


def token_codes(arr: EventArrays, unit_mean_table: np.ndarray) -> np.ndarray:
    """Integer token per attempt event (completion events are skipped)."""
    att = arr.is_attempt
    dur = arr.duration[att]
    if len(dur) == 0:
        return np.zeros(0, dtype=np.int64)
    baseline = unit_mean_table[arr.unit[att]]
    speed = np.where(dur <= GUESS_THRESHOLD_S, 0, np.where(dur <= baseline, 1, 2))
    return arr.success[att].astype(np.int64) * 3 + speed


def tokenize_trajectory(traj: Trajectory, stats: PopulationTimeStats) -> list[str]:
    vocab: dict[str, int] = {}
    arr = EventArrays.from_events(traj.events, vocab)
    return [TOKENS[c] for c in token_codes(arr, stats.lookup(vocab))]


# n-grams of each length are packed into one integer: a base-6 number offset so
# that lengths never collide
_OFFSETS = {L: sum(N_TOKENS**j for j in range(MIN_LENGTH, L)) for L in range(MIN_LENGTH, MAX_LENGTH + 1)}


def _encode(codes: Sequence[int]) -> int:
    value = 0
    for c in codes:
        value = value * N_TOKENS + int(c)
    return value + _OFFSETS[len(codes)]


def _decode(key: int) -> tuple[str, ...]:
    for L in range(MAX_LENGTH, MIN_LENGTH - 1, -1):
        if key >= _OFFSETS[L]:
            value = key - _OFFSETS[L]
            digits = []
            for _ in range(L):
                value, d = divmod(value, N_TOKENS)
                digits.append(TOKENS[d])
            return tuple(reversed(digits))
    raise ValueError(key)


def ngram_keys(tokens: np.ndarray) -> np.ndarray:
    """Distinct packed n-grams (lengths 2-4) contained in one token sequence."""
    tokens = np.asarray(tokens, dtype=np.int64)
    parts = []
    for L in range(MIN_LENGTH, MAX_LENGTH + 1):
        if len(tokens) < L:
            break
        value = np.zeros(len(tokens) - L + 1, dtype=np.int64)
        for j in range(L):
            value = value * N_TOKENS + tokens[j:len(tokens) - L + 1 + j]
        parts.append(value + _OFFSETS[L])
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


def median_split(posttest: Sequence[float]) -> np.ndarray:
    """True for the above-median group; ties at the median go below."""
    y = np.asarray(posttest, dtype=float)
    return y > np.median(y)


def mine_frequent_patterns(
    token_sequences: Sequence[Sequence[int] | np.ndarray],
    above_median: Sequence[bool],
    min_support: float = DEFAULT_MIN_SUPPORT,
) -> list[PatternSpec]:
    """Candidates frequent (student-level occurrence) in at least one group.

    Token sequences are integer codes (see ``TOKENS``); candidates come back
    ordered by packed key, which is length then lexicographic.
    """
    return mine_from_keys([ngram_keys(np.asarray(s)) for s in token_sequences], above_median, min_support)


def mine_from_keys(
    key_sets: Sequence[np.ndarray], above_median: Sequence[bool], min_support: float = DEFAULT_MIN_SUPPORT
) -> list[PatternSpec]:
    """Same as ``mine_frequent_patterns`` on precomputed ``ngram_keys`` per student."""
    labels = np.asarray(above_median, dtype=bool)
    if len(labels) != len(key_sets):
        raise PatternMiningError("one group label per token sequence required")
    n_high = int(labels.sum())
    n_low = len(labels) - n_high
    if n_low < 2 or n_high < 2:
        raise PatternMiningError(f"need at least 2 students per group, got {n_low}/{n_high}")

    size = _OFFSETS[MAX_LENGTH] + N_TOKENS**MAX_LENGTH
    counts = np.zeros((2, size), dtype=np.int64)
    for keys, high in zip(key_sets, labels):
        counts[int(high), keys] += 1
    support_low = counts[0] / n_low
    support_high = counts[1] / n_high
    frequent = np.flatnonzero((support_low >= min_support) | (support_high >= min_support))
    out = []
    for key in frequent:
        table = [[counts[0, key], counts[1, key]], [n_low - counts[0, key], n_high - counts[1, key]]]
        out.append(PatternSpec(
            _decode(int(key)), float(support_low[key]), float(support_high[key]), chi2_statistic(table),
        ))
    return out


def pattern_key(pattern: PatternSpec) -> int:
    return _encode(pattern.codes)


def chi2_statistic(table: Sequence[Sequence[float]]) -> float:
    """Pearson chi-squared of a 2x2 table, no continuity correction; 0 if a margin is empty."""
    t = np.asarray(table, dtype=float)
    if t.shape != (2, 2) or (t < 0).any():
        raise ValueError("expected a 2x2 table of non-negative counts")
    total = t.sum()
    rows, cols = t.sum(axis=1), t.sum(axis=0)
    if total <= 0 or (rows == 0).any() or (cols == 0).any():
        return 0.0
    expected = np.outer(rows, cols) / total
    return float(((t - expected) ** 2 / expected).sum())


def chi2_critical(alpha: float = DEFAULT_ALPHA) -> float:
    return float(chi2_dist.ppf(1.0 - alpha, df=1))


def select_top_patterns(
    candidates: Iterable[PatternSpec], k: int = DEFAULT_TOP_K, alpha: float = DEFAULT_ALPHA
) -> list[PatternSpec]:
    """Significant candidates ranked by chi2, then shorter, then lexicographic."""
    threshold = chi2_critical(alpha)
    significant = [c for c in candidates if c.chi2 > threshold]
    significant.sort(key=lambda c: (-c.chi2, len(c.symbols), c.symbols))
    return significant[:k]


def pattern_indicators(tokens: np.ndarray, patterns: Sequence[PatternSpec]) -> np.ndarray:
    present = set(ngram_keys(tokens).tolist())
    return np.array([float(_encode(p.codes) in present) for p in patterns])


def pattern_indicator_features(tokens: Sequence[str], patterns: Sequence[PatternSpec]) -> list[int]:
    """1 where the pattern occurs contiguously in the token sequence."""
    codes = np.array([TOKENS.index(t) for t in tokens], dtype=np.int64)
    return [int(v) for v in pattern_indicators(codes, patterns)]


def pattern_feature_names(n: int) -> list[str]:
    return [f"pattern_{i + 1:02d}" for i in range(n)]


def dump_patterns(patterns: Sequence[PatternSpec], out: IO[str], **meta) -> None:
    rows = [{**asdict(p), "symbols": list(p.symbols), "rank": i + 1} for i, p in enumerate(patterns)]
    json.dump({**meta, "patterns": rows}, out, indent=2)


def load_patterns(stream: IO[str]) -> list[PatternSpec]:
    doc = json.load(stream)
    rows = sorted(doc["patterns"], key=lambda r: r["rank"])
    return [PatternSpec(tuple(r["symbols"]), r["support_low"], r["support_high"], r["chi2"]) for r in rows]
