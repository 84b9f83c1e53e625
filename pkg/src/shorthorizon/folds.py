"""Seeded k-fold assignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignment: dict[str, int]

    def test_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [sid for sid, f in self.assignment.items() if f != fold]

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignment.values():
            counts[f] += 1
        return counts


def kfold_assign(ids: Sequence[str], k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle with ``seed`` then deal ids round-robin into ``k`` folds.

    The result depends on the order of ``ids`` as given.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("student ids must be unique")
    if k < 2 or len(ids) < k:
        raise ValueError(f"cannot split {len(ids)} students into {k} folds")
    order = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF).permutation(len(ids))
    assignment = {ids[j]: int(pos % k) for pos, j in enumerate(order)}
    return FoldPlan(k, int(seed), {sid: assignment[sid] for sid in ids})


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, test) row-index pairs for ``n`` rows."""
    plan = kfold_assign([str(i) for i in range(n)], k, seed)
    fold = np.array([plan.assignment[str(i)] for i in range(n)])
    return [(np.flatnonzero(fold != f), np.flatnonzero(fold == f)) for f in range(k)]
