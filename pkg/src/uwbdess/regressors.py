"""Native regressors behind a common train/predict interface.

``train`` replaces any previous fit; ``predict`` takes one feature vector and
``predict_many`` a 2-D block.  Training is deterministic everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, EmptyMatrix, KTooLarge, SingularDesign, Untrained, UnknownRegressor
from .features import FeatureMatrix


class Regressor:
    name = "regressor"

    def __init__(self):
        self._n_features = None

    @property
    def trained(self) -> bool:
        return self._n_features is not None

    def train(self, matrix: FeatureMatrix) -> "Regressor":
        if len(matrix) == 0:
            raise EmptyMatrix("cannot train on an empty matrix")
        self._fit(np.asarray(matrix.X, dtype=np.float64), np.asarray(matrix.targets, dtype=np.float64))
        self._n_features = matrix.n_features
        return self

    def _check(self, X):
        if not self.trained:
            raise Untrained(f"{self.name} model has not been trained")
        if X.shape[-1] != self._n_features:
            raise DimensionMismatch(f"expected {self._n_features} features, got {X.shape[-1]}")

    def predict(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionMismatch("predict takes a single feature vector")
        return float(self.predict_many(x[None, :])[0])

    def predict_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self._check(X)
        return self._predict(X)

    def _fit(self, X, y):
        raise NotImplementedError

    def _predict(self, X):
        raise NotImplementedError


# --- k nearest neighbours ------------------------------------------------------

WEIGHTINGS = ("uniform", "inverse_distance")


@dataclass(frozen=True)
class KnnConfig:
    k: int = 2
    weighting: str = "inverse_distance"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")


class KnnRegressor(Regressor):
    """Brute-force Euclidean KNN.

    Neighbours are ranked by distance with ties going to the earlier
    training row.  If any of the k neighbours sits at distance 0 the
    prediction is the mean target of those zero-distance neighbours;
    otherwise targets are averaged with weights 1/d (or uniformly).
    Sums run in neighbour order so results are reproducible to the bit.
    """

    name = "knn"
    chunk_rows = 256

    def __init__(self, config: KnnConfig = KnnConfig()):
        super().__init__()
        self.config = config

    def _fit(self, X, y):
        if self.config.k > X.shape[0]:
            raise KTooLarge(f"k={self.config.k} exceeds {X.shape[0]} training rows")
        self._X = X.copy()
        self._y = y.copy()

    def _distances(self, Q):
        d2 = np.zeros((Q.shape[0], self._X.shape[0]))
        for j in range(Q.shape[1]):
            diff = Q[:, j, None] - self._X[None, :, j]
            d2 += diff * diff
        return np.sqrt(d2)

    def _predict(self, X):
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], self.chunk_rows):
            block = X[start:start + self.chunk_rows]
            out[start:start + len(block)] = self._predict_block(block)
        return out

    def _predict_block(self, Q):
        k = self.config.k
        dist = self._distances(Q)
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        nd = np.take_along_axis(dist, order, axis=1)
        ny = self._y[order]

        zero = nd == 0.0
        zsum = np.zeros(len(Q))
        zcount = np.zeros(len(Q))
        for j in range(k):
            zsum += np.where(zero[:, j], ny[:, j], 0.0)
            zcount += zero[:, j]

        num = np.zeros(len(Q))
        den = np.zeros(len(Q))
        if self.config.weighting == "uniform":
            for j in range(k):
                num += ny[:, j]
            den[:] = k
        else:
            # rows with a zero distance get infinite weights; their sums are discarded below
            with np.errstate(divide="ignore", invalid="ignore"):
                w = 1.0 / nd
                for j in range(k):
                    num += w[:, j] * ny[:, j]
                    den += w[:, j]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(zcount > 0, zsum / np.maximum(zcount, 1), num / den)


# --- linear models ---------------------------------------------------------------

@dataclass(frozen=True)
class RidgeConfig:
    lam: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lambda must be finite and >= 0")


class LinearRegressor(Regressor):
    """Least squares with optional L2 penalty on the slopes (intercept free).

    Solved through the centred normal equations and a Cholesky factorization.
    """

    def __init__(self, config: RidgeConfig = RidgeConfig()):
        super().__init__()
        self.config = config
        self.coef_ = None
        self.intercept_ = None

    @property
    def name(self):
        return "ols" if self.config.lam == 0 else "ridge"

    def _fit(self, X, y):
        n, p = X.shape
        lam = self.config.lam
        if lam == 0 and n < p + 1:
            raise SingularDesign(f"OLS needs at least {p + 1} rows for {p} features, got {n}; "
                                 "use ridge with lambda > 0")
        x_mean = X.mean(axis=0)
        y_mean = y.mean()
        Xc = X - x_mean
        yc = y - y_mean
        if lam == 0 and np.linalg.matrix_rank(Xc) < p:
            raise SingularDesign("design matrix is rank deficient; use ridge with lambda > 0")
        gram = Xc.T @ Xc
        gram[np.diag_indices_from(gram)] += lam
        try:
            factor = linalg.cho_factor(gram, lower=True)
        except linalg.LinAlgError:
            raise SingularDesign("normal equations are not positive definite; "
                                 "use ridge with lambda > 0") from None
        self.coef_ = linalg.cho_solve(factor, Xc.T @ yc)
        self.intercept_ = float(y_mean - x_mean @ self.coef_)

    def _predict(self, X):
        return X @ self.coef_ + self.intercept_


# --- regression tree -------------------------------------------------------------

@dataclass(frozen=True)
class TreeConfig:
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


class TreeRegressor(Regressor):
    """CART with squared-error splits.

    Rows with ``x[feature] <= threshold`` go left.  Among equally good splits
    the lower column index wins, then the lower threshold.
    """

    name = "tree"

    def __init__(self, config: TreeConfig = TreeConfig()):
        super().__init__()
        self.config = config

    def _best_split(self, X, y):
        n = len(y)
        leaf = self.config.min_samples_leaf
        best = None
        for j in range(X.shape[1]):
            order = np.argsort(X[:, j], kind="stable")
            xs = X[order, j]
            ys = y[order]
            csum = np.cumsum(ys)
            csq = np.cumsum(ys * ys)
            nl = np.arange(1, n)
            sl, ql = csum[:-1], csq[:-1]
            sr, qr = csum[-1] - sl, csq[-1] - ql
            nr = n - nl
            sse = (ql - sl * sl / nl) + (qr - sr * sr / nr)
            valid = (xs[:-1] < xs[1:]) & (nl >= leaf) & (nr >= leaf)
            if not valid.any():
                continue
            cand = np.flatnonzero(valid)
            i = cand[np.argmin(sse[cand])]
            if best is None or sse[i] < best[0]:
                lo, hi = xs[i], xs[i + 1]
                thr = 0.5 * (lo + hi)
                if not lo <= thr < hi:
                    thr = lo
                best = (sse[i], j, thr)
        return best

    def _fit(self, X, y):
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(idx):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(y[idx].mean()))
            return len(value) - 1

        root = new_node(np.arange(len(y)))
        stack = [(root, np.arange(len(y)), 0)]
        max_depth = self.config.max_depth
        while stack:
            node, idx, depth = stack.pop()
            ys = y[idx]
            if (max_depth is not None and depth >= max_depth) or np.all(ys == ys[0]):
                continue
            split = self._best_split(X[idx], ys)
            if split is None:
                continue
            _, j, thr = split
            go_left = X[idx, j] <= thr
            li, ri = idx[go_left], idx[~go_left]
            feature[node], threshold[node] = j, thr
            left[node], right[node] = new_node(li), new_node(ri)
            stack.append((right[node], ri, depth + 1))
            stack.append((left[node], li, depth + 1))

        self._feature = np.array(feature)
        self._threshold = np.array(threshold)
        self._left = np.array(left)
        self._right = np.array(right)
        self._value = np.array(value)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self._feature < 0))

    def _predict(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self._feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self._feature[nd]] <= self._threshold[nd]
            node[r] = np.where(go_left, self._left[nd], self._right[nd])
            active = self._feature[node] >= 0
        return self._value[node]


# --- registry --------------------------------------------------------------------

def _knn(k=2, weighting="inverse_distance"):
    return KnnRegressor(KnnConfig(int(k), weighting))


def _ols():
    return LinearRegressor(RidgeConfig(0.0))


def _ridge(lam=1.0, **kw):
    lam = kw.pop("lambda", lam)
    if kw:
        raise TypeError(f"unexpected ridge parameters {sorted(kw)}")
    return LinearRegressor(RidgeConfig(float(lam)))


def _tree(max_depth=None, min_samples_leaf=1):
    return TreeRegressor(TreeConfig(None if max_depth is None else int(max_depth), int(min_samples_leaf)))


REGISTRY: dict = {"knn": _knn, "ols": _ols, "ridge": _ridge, "tree": _tree}


def register(name: str, factory: Callable[..., Regressor]) -> None:
    REGISTRY[name] = factory


def registry_lookup(name: str) -> Callable[..., Regressor]:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownRegressor(name, REGISTRY) from None


def make_regressor(model) -> Regressor:
    """Build a model from a name or a ``{"name": ..., **params}`` mapping."""
    if isinstance(model, Regressor):
        return model
    if isinstance(model, str):
        return registry_lookup(model)()
    params = dict(model)
    name = params.pop("name")
    return registry_lookup(name)(**params)
