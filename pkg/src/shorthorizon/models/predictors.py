"""Regressor families: OLS, RBF-kernel SVR, bagged CART forest, and the mean baseline."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, Any, Sequence

import numpy as np

from ._cart import build_tree, predict_tree
from ._smo import smo_svr

MODEL_FORMAT_VERSION = 1
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 50.0, 100.0)
DEFAULT_EPSILON_GRID = (0.01, 0.1, 1.0)
DEFAULT_DEPTH_GRID = (2, 5, 10, 12, 15)
DEFAULT_N_TREES = 100
RIDGE_JITTER = 1e-8
KKT_TOL = 1e-3
AUTO = "auto"


class Family(str, Enum):
    LINEAR = "linear"
    SVR = "svr"
    FOREST = "forest"
    BASELINE = "baseline"


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    C: float = 1.0
    epsilon: float = 0.1
    gamma: float | str = AUTO
    max_depth: int = 10
    n_trees: int = DEFAULT_N_TREES
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        if self.family is Family.SVR:
            if not (self.C > 0 and self.epsilon > 0):
                raise ValueError("SVR needs C > 0 and epsilon > 0")
            if self.gamma != AUTO and not float(self.gamma) > 0:
                raise ValueError("gamma must be positive or 'auto'")
        if self.family is Family.FOREST and (self.max_depth < 1 or self.n_trees < 1):
            raise ValueError("forest needs max_depth >= 1 and n_trees >= 1")

    def hyperparameters(self) -> dict[str, Any]:
        if self.family is Family.SVR:
            return {"C": self.C, "epsilon": self.epsilon, "gamma": self.gamma}
        if self.family is Family.FOREST:
            return {"max_depth": self.max_depth, "n_trees": self.n_trees, "seed": self.seed}
        return {}

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family.value, **self.hyperparameters()}


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray  # 0 for constant columns

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        return cls(X.mean(axis=0), X.std(axis=0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        safe = np.where(self.scale > 0, self.scale, 1.0)
        return np.where(self.scale > 0, (X - self.mean) / safe, 0.0)

    @classmethod
    def identity(cls, p: int) -> "Standardizer":
        return cls(np.zeros(p), np.ones(p))


@dataclass
class TrainedPredictor:
    """Common surface of every fitted family."""

    spec: ModelSpec
    feature_names: list[str]
    metadata: dict[str, Any] = field(default_factory=dict, kw_only=True)

    @property
    def family(self) -> Family:
        return self.spec.family

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.feature_names):
            raise ValueError(f"expected {len(self.feature_names)} features, got {X.shape[1]}")
        return X

    def predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, Any]:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "family": self.family.value,
            "spec": self.spec.to_dict(),
            "feature_names": list(self.feature_names),
            "metadata": self.metadata,
            "params": self.params(),
        }


def _rows(X: np.ndarray, y: Sequence[float], minimum: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per target")
    if len(y) < minimum:
        raise ValueError(f"need at least {minimum} training rows, got {len(y)}")
    return X, y


def _names(names: Sequence[str] | None, p: int) -> list[str]:
    if names is None:
        return [f"x{i}" for i in range(p)]
    if len(names) != p:
        raise ValueError("one feature name per column required")
    return list(names)


# -- linear ---------------------------------------------------------------------------


@dataclass
class LinearPredictor(TrainedPredictor):
    weights: np.ndarray = field(kw_only=True)  # on standardized features
    intercept: float = field(kw_only=True)
    standardizer: Standardizer = field(kw_only=True)

    def predict(self, X):
        Z = self.standardizer.transform(self._check(X))
        return Z @ self.weights + self.intercept

    def raw_coefficients(self) -> tuple[np.ndarray, float]:
        """Weights and intercept in the original feature units."""
        sd = self.standardizer.scale
        w = np.where(sd > 0, self.weights / np.where(sd > 0, sd, 1.0), 0.0)
        return w, float(self.intercept - w @ self.standardizer.mean)

    def params(self):
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "standardization": _std_dict(self.standardizer),
        }


def fit_ols(X, y, feature_names=None, metadata=None) -> LinearPredictor:
    """Least squares with intercept on standardized features.

    A rank-deficient normal system gets ``1e-8`` added to its diagonal, which
    pins the weight of any constant column at exactly zero.
    """
    X, y = _rows(X, y, 2)
    std = Standardizer.fit(X)
    Z = std.transform(X)
    y_mean = float(y.mean())
    gram = Z.T @ Z
    rhs = Z.T @ (y - y_mean)
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        gram = gram + RIDGE_JITTER * np.eye(gram.shape[0])
    w = np.linalg.solve(gram, rhs) if gram.size else np.zeros(0)
    return LinearPredictor(
        ModelSpec(Family.LINEAR), _names(feature_names, X.shape[1]), metadata=dict(metadata or {}),
        weights=w, intercept=y_mean, standardizer=std,
    )


# -- SVR ------------------------------------------------------------------------------


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def default_gamma(Z: np.ndarray) -> float:
    var = float(Z.var()) if Z.size else 0.0
    return 1.0 / (Z.shape[1] * var) if var > 0 else 1.0


@dataclass
class SVRPredictor(TrainedPredictor):
    dual_coef: np.ndarray = field(kw_only=True)  # alpha - alpha*, support vectors only
    support: np.ndarray = field(kw_only=True)  # standardized support points
    bias: float = field(kw_only=True)
    gamma: float = field(kw_only=True)
    standardizer: Standardizer = field(kw_only=True)
    converged: bool = field(default=True, kw_only=True)
    iterations: int = field(default=0, kw_only=True)

    def decision(self, Z: np.ndarray) -> np.ndarray:
        if len(self.dual_coef) == 0:
            return np.full(len(Z), self.bias)
        return rbf_kernel(Z, self.support, self.gamma) @ self.dual_coef + self.bias

    def predict(self, X):
        return self.decision(self.standardizer.transform(self._check(X)))

    def params(self):
        return {
            "dual_coef": self.dual_coef.tolist(),
            "support": self.support.tolist(),
            "bias": self.bias,
            "gamma": self.gamma,
            "converged": self.converged,
            "iterations": self.iterations,
            "standardization": _std_dict(self.standardizer),
        }


def solve_svr_dual(K, y, C, epsilon, tol=KKT_TOL, max_iter=None):
    """Run SMO on a precomputed kernel; returns (beta, bias, iterations, converged)."""
    K = np.ascontiguousarray(K, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n = len(y)
    if max_iter is None:
        # 10*n passes of n pair updates each
        max_iter = 10 * n * max(n, 1)
    return smo_svr(K, y, float(C), float(epsilon), float(tol), int(max_iter))


def fit_svr(X, y, spec: ModelSpec, feature_names=None, metadata=None) -> SVRPredictor:
    """Epsilon-insensitive SVR with an RBF kernel, fitted in the dual by SMO."""
    if spec.family is not Family.SVR:
        raise ValueError("fit_svr needs an svr spec")
    X, y = _rows(X, y, 1)
    std = Standardizer.fit(X)
    Z = std.transform(X)
    gamma = default_gamma(Z) if spec.gamma == AUTO else float(spec.gamma)
    K = rbf_kernel(Z, Z, gamma)
    beta, bias, iters, converged = solve_svr_dual(K, y, spec.C, spec.epsilon)
    if not converged:
        warnings.warn(f"SMO hit its iteration cap ({iters}) before reaching KKT tolerance",
                      ConvergenceWarning, stacklevel=2)
    sv = np.flatnonzero(beta != 0.0)
    return SVRPredictor(
        spec, _names(feature_names, X.shape[1]), metadata=dict(metadata or {}),
        dual_coef=beta[sv].copy(), support=Z[sv].copy(), bias=float(bias), gamma=gamma,
        standardizer=std, converged=bool(converged), iterations=int(iters),
    )


def kkt_violations(K, y, beta, bias, C, epsilon, tol=KKT_TOL) -> np.ndarray:
    """Indices of training points whose dual coefficient breaks a KKT condition by more than ``tol``."""
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    r = K @ beta + bias - y
    bad = np.zeros(len(y), dtype=bool)
    zero = beta == 0
    up_free = (beta > 0) & (beta < C)
    up_bound = beta >= C
    lo_free = (beta < 0) & (beta > -C)
    lo_bound = beta <= -C
    bad |= zero & (np.abs(r) > epsilon + tol)
    bad |= up_free & (np.abs(r + epsilon) > tol)
    bad |= up_bound & (r > -epsilon + tol)
    bad |= lo_free & (np.abs(r - epsilon) > tol)
    bad |= lo_bound & (r < epsilon - tol)
    bad |= np.abs(beta) > C * (1 + 1e-12)
    return np.flatnonzero(bad)


# -- forest ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    gain: np.ndarray

    def predict(self, X: np.ndarray, depth_limit: int | None = None) -> np.ndarray:
        limit = np.iinfo(np.int64).max if depth_limit is None else int(depth_limit)
        return predict_tree(X, self.feature, self.threshold, self.left, self.right,
                            self.value, self.depth, limit)

    def pruned(self, depth_limit: int) -> "Tree":
        """The subtree above ``depth_limit``; identical to growing with that depth cap."""
        keep = self.depth <= depth_limit
        new_index = np.cumsum(keep) - 1
        feature = self.feature.copy()
        threshold = self.threshold.copy()
        left = self.left.copy()
        right = self.right.copy()
        gain = self.gain.copy()
        cut = self.depth >= depth_limit
        feature[cut] = -1
        threshold[cut] = 0.0
        left[cut] = -1
        right[cut] = -1
        gain[cut] = 0.0
        internal = feature >= 0
        left[internal] = new_index[left[internal]]
        right[internal] = new_index[right[internal]]
        return Tree(feature[keep], threshold[keep], left[keep], right[keep],
                    self.value[keep], self.depth[keep], gain[keep])

    def to_dict(self) -> dict[str, list]:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "depth", "gain")}

    @classmethod
    def from_dict(cls, d: dict[str, list]) -> "Tree":
        ints = {"feature", "left", "right", "depth"}
        return cls(**{k: np.asarray(v, dtype=np.int64 if k in ints else float) for k, v in d.items()})


def bootstrap_indices(n: int, seed: int, tree_index: int) -> np.ndarray:
    """Bootstrap draw for one tree; seeded by (seed, tree index) only."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, tree_index])
    return rng.integers(0, n, size=n)


@dataclass
class ForestPredictor(TrainedPredictor):
    trees: list[Tree] = field(kw_only=True)

    def predict(self, X):
        X = np.ascontiguousarray(self._check(X))
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def pruned(self, max_depth: int) -> "ForestPredictor":
        return ForestPredictor(
            replace(self.spec, max_depth=max_depth), list(self.feature_names),
            metadata=dict(self.metadata), trees=[t.pruned(max_depth) for t in self.trees],
        )

    def params(self):
        return {"trees": [t.to_dict() for t in self.trees]}


def fit_forest(X, y, spec: ModelSpec, feature_names=None, metadata=None) -> ForestPredictor:
    """Bagged regression trees; each split searches every feature."""
    if spec.family is not Family.FOREST:
        raise ValueError("fit_forest needs a forest spec")
    X, y = _rows(X, y, 1)
    X = np.ascontiguousarray(X)
    trees = []
    for t in range(spec.n_trees):
        sample = bootstrap_indices(len(y), spec.seed, t)
        trees.append(Tree(*build_tree(X, y, sample, spec.max_depth)))
    return ForestPredictor(spec, _names(feature_names, X.shape[1]), metadata=dict(metadata or {}),
                           trees=trees)


def rf_feature_importance(predictor: TrainedPredictor) -> dict[str, float]:
    """Split-variance decrease per feature, summed over trees and normalized to 1."""
    if not isinstance(predictor, ForestPredictor):
        raise TypeError("feature importance is defined for forest predictors only")
    p = len(predictor.feature_names)
    total = np.zeros(p)
    for tree in predictor.trees:
        internal = tree.feature >= 0
        total += np.bincount(tree.feature[internal], weights=tree.gain[internal], minlength=p)
    s = total.sum()
    norm = total / s if s > 0 else total
    return dict(zip(predictor.feature_names, norm.tolist()))


def top_features(importance: dict[str, float], k: int = 5) -> list[str]:
    return [name for name, _ in sorted(importance.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


# -- baseline -------------------------------------------------------------------------


@dataclass
class BaselinePredictor(TrainedPredictor):
    mean: float = field(kw_only=True)

    def predict(self, X):
        return np.full(len(self._check(X)), self.mean)

    def params(self):
        return {"mean": self.mean}


def fit_baseline(y, feature_names=(), metadata=None) -> BaselinePredictor:
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("baseline needs at least one training target")
    return BaselinePredictor(ModelSpec(Family.BASELINE), list(feature_names),
                             metadata=dict(metadata or {}), mean=float(y.mean()))


# -- dispatch and serialization ---------------------------------------------------------


def fit(spec: ModelSpec, X, y, feature_names=None, metadata=None) -> TrainedPredictor:
    if spec.family is Family.LINEAR:
        return fit_ols(X, y, feature_names, metadata)
    if spec.family is Family.SVR:
        return fit_svr(X, y, spec, feature_names, metadata)
    if spec.family is Family.FOREST:
        return fit_forest(X, y, spec, feature_names, metadata)
    names = feature_names if feature_names is not None else _names(None, np.asarray(X).shape[1])
    return fit_baseline(y, names, metadata)


def _std_dict(std: Standardizer) -> dict[str, list]:
    return {"mean": std.mean.tolist(), "scale": std.scale.tolist()}


def _std_from(d: dict[str, list]) -> Standardizer:
    return Standardizer(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))


def save_model(predictor: TrainedPredictor, out: IO[str]) -> None:
    json.dump(predictor.to_dict(), out)


def load_model(stream: IO[str]) -> TrainedPredictor:
    doc = json.load(stream)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {doc.get('format_version')!r}")
    spec = ModelSpec(**doc["spec"])
    names, meta, prm = doc["feature_names"], doc.get("metadata", {}), doc["params"]
    family = spec.family
    if family is Family.LINEAR:
        return LinearPredictor(spec, names, metadata=meta, weights=np.asarray(prm["weights"], dtype=float),
                               intercept=prm["intercept"], standardizer=_std_from(prm["standardization"]))
    if family is Family.SVR:
        p = len(names)
        return SVRPredictor(
            spec, names, metadata=meta, dual_coef=np.asarray(prm["dual_coef"], dtype=float),
            support=np.asarray(prm["support"], dtype=float).reshape(-1, p), bias=prm["bias"],
            gamma=prm["gamma"], standardizer=_std_from(prm["standardization"]),
            converged=prm["converged"], iterations=prm["iterations"],
        )
    if family is Family.FOREST:
        return ForestPredictor(spec, names, metadata=meta, trees=[Tree.from_dict(t) for t in prm["trees"]])
    return BaselinePredictor(spec, names, metadata=meta, mean=prm["mean"])
