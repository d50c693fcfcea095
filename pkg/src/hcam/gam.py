"""Higher-order additive regression with centered tensor-product B-splines.

Each additive term ``f_S`` is expanded in a block of basis columns: a cubic
B-spline basis per coordinate (knots at empirical quantiles), centered per
coordinate, then combined by a row-wise tensor product, centered again and
scaled to unit column variance so the ridge penalty acts evenly.
Centering each marginal before the product keeps a block for ``{a, b}`` free
of pure main effects, so its fitted variance measures the interaction that
the singleton blocks cannot carry. The blocks are fitted jointly by ridge
regression with an unpenalised intercept.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_data, check_target
from .exceptions import DegenerateColumn, InvalidConfig, SingularSystem, UnknownTail

__all__ = [
    "BasisSpec",
    "NodeModel",
    "DesignCache",
    "Design",
    "FitSummary",
    "NodeScorer",
    "build_design",
    "fit_node",
    "score_gain",
    "term_variance",
    "AdditiveSplineRegressor",
]

MAX_BLOCK_COLUMNS = 10_000
FORMAT_VERSION = 1
KNOT_JITTER = 1e-9

Tail = tuple[int, ...]


@dataclass(frozen=True)
class BasisSpec:
    knots_per_dim: int = 8
    degree: int = 3
    ridge_lambda: float = 1e-3
    max_tensor_order: int = 3

    def __post_init__(self):
        if self.knots_per_dim < 4:
            raise InvalidConfig("knots_per_dim must be >= 4")
        if self.ridge_lambda < 0:
            raise InvalidConfig("ridge_lambda must be >= 0")
        if self.n_basis ** self.max_tensor_order > MAX_BLOCK_COLUMNS:
            raise InvalidConfig(
                f"{self.n_basis}^{self.max_tensor_order} basis columns exceeds {MAX_BLOCK_COLUMNS}"
            )

    @property
    def n_basis(self) -> int:
        """B-spline functions per coordinate."""
        return self.knots_per_dim + self.degree - 1

    def cheap(self) -> "BasisSpec":
        """Coarser, more strongly regularised basis used while scoring candidates."""
        return replace(self, knots_per_dim=5, ridge_lambda=self.ridge_lambda * 10)

    def for_budget(self, budget: str) -> "BasisSpec":
        if budget == "cheap":
            return self.cheap()
        if budget == "full":
            return self
        raise ValueError(f"unknown budget {budget!r}")


def _canon(tail: Iterable[int]) -> Tail:
    return tuple(sorted(int(v) for v in tail))


def _quantile_knots(x: np.ndarray, n_knots: int) -> np.ndarray:
    if np.unique(x).size < n_knots:
        raise DegenerateColumn(f"column has fewer than {n_knots} distinct values")
    knots = np.quantile(x, np.linspace(0.0, 1.0, n_knots))
    for i in range(1, n_knots):
        if knots[i] <= knots[i - 1]:
            knots[i] = knots[i - 1] + KNOT_JITTER
    return knots


def _clamped(knots: np.ndarray, degree: int) -> np.ndarray:
    return np.concatenate([[knots[0]] * degree, knots, [knots[-1]] * degree])


def _bspline_matrix(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    x = np.clip(x, knots[0], knots[-1])
    return BSpline.design_matrix(x, _clamped(knots, degree), degree).toarray()


def _row_tensor(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, :, None] * m[:, None, :]).reshape(out.shape[0], -1)
    return out


@dataclass
class _Marginal:
    knots: np.ndarray
    means: np.ndarray


class DesignCache:
    """Per-dataset cache of basis blocks and their Gram products.

    Tails index columns of ``X``. Blocks, cross products ``B_s' B_t / n`` and
    ``B_t' y / n`` are computed once and reused by every fit on this data.
    """

    def __init__(self, X: np.ndarray, spec: BasisSpec):
        self.X = np.asarray(X, dtype=float)
        self.n = self.X.shape[0]
        self.spec = spec
        self._marginals: dict[int, _Marginal] = {}
        self._centered: dict[int, np.ndarray] = {}
        self._blocks: dict[Tail, np.ndarray] = {}
        self._block_means: dict[Tail, np.ndarray] = {}
        self._block_scales: dict[Tail, np.ndarray] = {}
        self._gram: dict[tuple[Tail, Tail], np.ndarray] = {}
        self._xty: dict[tuple[Tail, object], np.ndarray] = {}
        self._targets: dict[object, tuple[np.ndarray, float, float]] = {}

    def marginal(self, c: int) -> np.ndarray:
        if c not in self._centered:
            x = self.X[:, c]
            knots = _quantile_knots(x, self.spec.knots_per_dim)
            B = _bspline_matrix(x, knots, self.spec.degree)
            means = B.mean(axis=0)
            self._marginals[c] = _Marginal(knots, means)
            self._centered[c] = B - means
        return self._centered[c]

    def block(self, tail: Tail) -> np.ndarray:
        tail = _canon(tail)
        if tail not in self._blocks:
            if len(tail) > self.spec.max_tensor_order:
                raise ValueError(f"tail {tail} exceeds max_tensor_order={self.spec.max_tensor_order}")
            T = _row_tensor([self.marginal(c) for c in tail])
            means = T.mean(axis=0)
            T = T - means
            scales = T.std(axis=0)
            scales[scales < 1e-12] = 1.0
            self._block_means[tail] = means
            self._block_scales[tail] = scales
            self._blocks[tail] = T / scales
        return self._blocks[tail]

    def gram(self, s: Tail, t: Tail) -> np.ndarray:
        key = (s, t) if s <= t else (t, s)
        if key not in self._gram:
            self._gram[key] = self.block(key[0]).T @ self.block(key[1]) / self.n
        G = self._gram[key]
        return G if key == (s, t) else G.T

    def target(self, key, y=None):
        """Centered target with its mean and mean square, keyed by ``key``."""
        if key not in self._targets:
            if y is None:
                y = self.X[:, key]
            y = np.asarray(y, dtype=float)
            ybar = float(y.mean())
            yc = y - ybar
            self._targets[key] = (yc, ybar, float(yc @ yc) / self.n)
        return self._targets[key]

    def xty(self, tail: Tail, key) -> np.ndarray:
        k = (tail, key)
        if k not in self._xty:
            yc = self.target(key)[0]
            self._xty[k] = self.block(tail).T @ yc / self.n
        return self._xty[k]

    def basis_state(self, tails: Iterable[Tail]) -> dict:
        cols = sorted({c for t in tails for c in t})
        for c in cols:
            self.marginal(c)
        return {c: self._marginals[c] for c in cols}


@dataclass
class Design:
    """Concatenated, centered design matrix with the column range of each tail."""

    matrix: np.ndarray
    index: dict
    spec: BasisSpec


def build_design(data, tails, spec: BasisSpec = BasisSpec(), cache: DesignCache | None = None) -> Design:
    X = _values(data)
    cache = cache or DesignCache(X, spec)
    tails = _unique_tails(tails)
    for t in tails:
        if any(not 0 <= c < X.shape[1] for c in t):
            raise IndexError(f"tail {t} references a column outside 0..{X.shape[1] - 1}")
    blocks, index, start = [], {}, 0
    for t in tails:
        B = cache.block(t)
        blocks.append(B)
        index[t] = slice(start, start + B.shape[1])
        start += B.shape[1]
    M = np.hstack(blocks) if blocks else np.zeros((cache.n, 0))
    return Design(M, index, spec)


@dataclass(frozen=True)
class FitSummary:
    sigma2: float
    edf: float


def _unique_tails(tails) -> list[Tail]:
    seen, out = set(), []
    for t in tails:
        t = _canon(t)
        if not t:
            raise ValueError("empty tail")
        if t not in seen:
            seen.add(t)
            out.append(t)
    return sorted(out, key=lambda t: (len(t), t))


def _solve(cache: DesignCache, key, tails: list[Tail], lam: float):
    """Ridge normal equations over the joint blocks; returns coefficients and fit stats."""
    yc, ybar, yy = cache.target(key)
    if not tails:
        return {}, ybar, FitSummary(yy, 0.0)
    sizes = [cache.block(t).shape[1] for t in tails]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    p = int(offs[-1])
    G = np.empty((p, p))
    b = np.empty(p)
    for a, s in enumerate(tails):
        b[offs[a]:offs[a + 1]] = cache.xty(s, key)
        for c in range(a, len(tails)):
            blk = cache.gram(s, tails[c])
            G[offs[a]:offs[a + 1], offs[c]:offs[c + 1]] = blk
            G[offs[c]:offs[c + 1], offs[a]:offs[a + 1]] = blk.T
    A = G + lam * np.eye(p)
    try:
        cf = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularSystem("regularised normal matrix is not positive definite") from exc
    coef = linalg.cho_solve(cf, b, check_finite=False)
    rss = yy - 2.0 * coef @ b + coef @ G @ coef
    # tr(A^-1 G) = p - lam * tr(A^-1)
    if lam > 0:
        edf = p - lam * float(np.trace(linalg.cho_solve(cf, np.eye(p), check_finite=False)))
    else:
        edf = float(np.linalg.matrix_rank(G))
    terms = {t: coef[offs[a]:offs[a + 1]].copy() for a, t in enumerate(tails)}
    return terms, ybar, FitSummary(max(float(rss), 0.0), edf)


@dataclass
class NodeModel:
    """Fitted additive equation for one node.

    ``terms`` maps each tail to its coefficient vector over that tail's
    centered tensor basis; ``sigma2_hat`` is the mean squared residual.
    """

    child: int
    terms: dict
    intercept: float
    sigma2_hat: float
    spec: BasisSpec = field(default_factory=BasisSpec)
    knots: dict = field(default_factory=dict)
    marginal_means: dict = field(default_factory=dict)
    block_means: dict = field(default_factory=dict)
    block_scales: dict = field(default_factory=dict)
    edf: float = 0.0

    @property
    def tails(self) -> list[Tail]:
        return sorted(self.terms, key=lambda t: (len(t), t))

    def _block(self, X: np.ndarray, tail: Tail) -> np.ndarray:
        mats = [
            _bspline_matrix(X[:, c], self.knots[c], self.spec.degree) - self.marginal_means[c]
            for c in tail
        ]
        return (_row_tensor(mats) - self.block_means[tail]) / self.block_scales[tail]

    def term_values(self, X, tail) -> np.ndarray:
        tail = _canon(tail)
        if tail not in self.terms:
            raise UnknownTail(tail)
        X = _values(X)
        return self._block(X, tail) @ self.terms[tail]

    def predict(self, X) -> np.ndarray:
        X = _values(X)
        out = np.full(X.shape[0], self.intercept)
        for t in self.tails:
            out += self._block(X, t) @ self.terms[t]
        return out

    def to_dict(self) -> dict:
        return {
            "format": "hcam-node-model",
            "version": FORMAT_VERSION,
            "child": self.child,
            "intercept": self.intercept,
            "sigma2_hat": self.sigma2_hat,
            "edf": self.edf,
            "spec": asdict(self.spec),
            "basis": [
                {"column": c, "knots": self.knots[c].tolist(), "means": self.marginal_means[c].tolist()}
                for c in sorted(self.knots)
            ],
            "terms": [
                {
                    "tail": list(t),
                    "coef": self.terms[t].tolist(),
                    "means": self.block_means[t].tolist(),
                    "scales": self.block_scales[t].tolist(),
                }
                for t in self.tails
            ],
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "NodeModel":
        if blob.get("format") != "hcam-node-model":
            raise ValueError("not a serialised node model")
        if blob.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported node model version {blob.get('version')}")
        return cls(
            child=int(blob["child"]),
            terms={tuple(t["tail"]): np.array(t["coef"], dtype=float) for t in blob["terms"]},
            intercept=float(blob["intercept"]),
            sigma2_hat=float(blob["sigma2_hat"]),
            spec=BasisSpec(**blob["spec"]),
            knots={int(b["column"]): np.array(b["knots"], dtype=float) for b in blob["basis"]},
            marginal_means={int(b["column"]): np.array(b["means"], dtype=float) for b in blob["basis"]},
            block_means={tuple(t["tail"]): np.array(t["means"], dtype=float) for t in blob["terms"]},
            block_scales={tuple(t["tail"]): np.array(t["scales"], dtype=float) for t in blob["terms"]},
            edf=float(blob["edf"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NodeModel":
        return cls.from_dict(json.loads(text))


def _values(data) -> np.ndarray:
    return np.asarray(getattr(data, "values", data), dtype=float)


def _node_model(cache: DesignCache, child, key, tails, spec) -> NodeModel:
    terms, ybar, summary = _solve(cache, key, tails, spec.ridge_lambda)
    state = cache.basis_state(tails)
    return NodeModel(
        child=child,
        terms=terms,
        intercept=ybar,
        sigma2_hat=summary.sigma2,
        spec=spec,
        knots={c: m.knots for c, m in state.items()},
        marginal_means={c: m.means for c, m in state.items()},
        block_means={t: cache._block_means[t] for t in tails},
        block_scales={t: cache._block_scales[t] for t in tails},
        edf=summary.edf,
    )


def fit_node(data, child: int, tails, spec: BasisSpec = BasisSpec(), cache: DesignCache | None = None) -> NodeModel:
    """Jointly fit ``X_child`` on the blocks for ``tails``.

    Raises
    ------
    SingularSystem
        If the ridge-regularised normal matrix is not positive definite.
    """
    X = _values(data)
    tails = _unique_tails(tails)
    for t in tails:
        if child in t:
            raise ValueError(f"child {child} appears in tail {t}")
    cache = cache or DesignCache(X, spec)
    return _node_model(cache, child, child, tails, spec)


def term_variance(model: NodeModel, data, tail) -> float:
    """Empirical variance of one fitted term over the rows of ``data``."""
    return float(np.var(model.term_values(data, tail)))


class NodeScorer:
    """Memoised residual variances for a dataset, one cache per budget."""

    def __init__(self, data, spec: BasisSpec = BasisSpec()):
        self.X = _values(data)
        self.spec = spec
        self._caches: dict[str, DesignCache] = {}
        self._fits: dict = {}

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def cache(self, budget: str) -> DesignCache:
        if budget not in self._caches:
            self._caches[budget] = DesignCache(self.X, self.spec.for_budget(budget))
        return self._caches[budget]

    def summary(self, child: int, tails, budget: str = "cheap", target=None) -> FitSummary:
        """Residual variance and effective degrees of freedom of a fit.

        ``target`` overrides the regressand (keyed by ``(child, "alt")``),
        which screening uses to fit residuals.
        """
        tails = _unique_tails(tails)
        key = child if target is None else (child, "alt")
        memo = (budget, key, tuple(tails))
        if memo not in self._fits:
            cache = self.cache(budget)
            if target is not None:
                cache.target(key, target)
            lam = cache.spec.ridge_lambda
            self._fits[memo] = _solve(cache, key, tails, lam)[2]
        return self._fits[memo]

    def model(self, child: int, tails, budget: str = "full") -> NodeModel:
        cache = self.cache(budget)
        return _node_model(cache, child, child, _unique_tails(tails), cache.spec)


def score_gain(data, child: int, base_tails, candidate_tail, spec: BasisSpec = BasisSpec(),
               budget: str = "cheap", scorer: NodeScorer | None = None) -> float:
    """Drop in residual variance from adding ``candidate_tail`` to ``base_tails``.

    Returns 0 when the candidate is already in the base.
    """
    base = _unique_tails(base_tails)
    cand = _canon(candidate_tail)
    if cand in base:
        return 0.0
    scorer = scorer or NodeScorer(data, spec)
    before = scorer.summary(child, base, budget).sigma2
    after = scorer.summary(child, base + [cand], budget).sigma2
    return before - after


class AdditiveSplineRegressor(RegressorMixin, BaseEstimator):
    """Ridge-penalised additive model over tensor-product spline terms.

    Parameters
    ----------
    tails : list of tuple of int, optional
        Column subsets of ``X`` receiving an additive term. Defaults to one
        singleton term per column.
    knots_per_dim : int
        Quantile knots per coordinate, boundaries included.
    degree : int
        B-spline degree.
    ridge_lambda : float
        Ridge penalty on the basis coefficients (intercept unpenalised).
    max_tensor_order : int
        Largest tail size accepted.

    Attributes
    ----------
    model_ : NodeModel
    sigma2_ : float
        Training mean squared residual.
    """

    def __init__(self, tails=None, knots_per_dim=8, degree=3, ridge_lambda=1e-3, max_tensor_order=3):
        self.tails = tails
        self.knots_per_dim = knots_per_dim
        self.degree = degree
        self.ridge_lambda = ridge_lambda
        self.max_tensor_order = max_tensor_order

    def _spec(self) -> BasisSpec:
        return BasisSpec(self.knots_per_dim, self.degree, self.ridge_lambda, self.max_tensor_order)

    def fit(self, X, y):
        X = check_data(X, min_samples=2)
        y = check_target(y, X.shape[0])
        tails = self.tails if self.tails is not None else [(c,) for c in range(X.shape[1])]
        tails = _unique_tails(tails)
        cache = DesignCache(X, self._spec())
        cache.target("y", y)
        self.model_ = _node_model(cache, -1, "y", tails, cache.spec)
        self.sigma2_ = self.model_.sigma2_hat
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_data(X, n_features=self.n_features_in_)
        return self.model_.predict(X)

    def term_variance(self, X, tail) -> float:
        check_is_fitted(self, "model_")
        return term_variance(self.model_, check_data(X, n_features=self.n_features_in_), tail)


def log_ratio(before: float, after: float) -> float:
    """``log(before / after)`` guarded against non-positive variances."""
    tiny = 1e-300
    return math.log(max(before, tiny)) - math.log(max(after, tiny))
