"""Synthetic higher-order additive noise models.

Pipeline: an Erdos-Renyi DAG, a hierarchical hypergraph built over it by
grouping each child's parents cyclically, one shape function per maximal
hyperedge (Gaussian-process draws for singletons, multilinear monomials for
larger tails) and Gaussian noise, sampled ancestrally.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._utils import as_rng, config_hash
from .exceptions import DimensionMismatch, InvalidDensity
from .graphs import Dag, HDag, Hyperedge, hierarchical_closure

__all__ = [
    "ShapeFunction",
    "GpInterp",
    "Multilinear",
    "RadialBumps",
    "SemModel",
    "Dataset",
    "sample_er_dag",
    "sample_hdag",
    "sample_gp_function",
    "sample_bump_function",
    "sample_multilinear_terms",
    "sample_noise_variances",
    "sample_sem",
    "generate",
    "analytic_log_density",
    "node_log_density",
    "MULTILINEAR_MOMENTS",
]

GP_GRID = np.linspace(-5.0, 5.0, 100)
GP_LENGTH_SCALE = 1.0
GP_SIGNAL_VARIANCE = 1.0
GP_JITTER = 1e-8

# Normalising second moments per tail size for multilinear coefficients.
MULTILINEAR_MOMENTS = {2: 3.0, 3: 15.0}

LOG_UNIFORM_RANGE = (0.5, 2.0)


class ShapeFunction:
    """Additive term ``f_S`` evaluated on the columns ``subset`` of a data matrix."""

    subset: tuple[int, ...]

    def __call__(self, xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self(X[..., list(self.subset)])


@dataclass(frozen=True, eq=False)
class GpInterp(ShapeFunction):
    """Piecewise-linear interpolant of a GP draw on a fixed grid, linear beyond it."""

    subset: tuple[int, ...]
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.subset) != 1:
            raise ValueError("GP shape functions are one-dimensional")
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("GP grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __call__(self, xs):
        x = np.asarray(xs, dtype=float)[..., 0]
        g, v = self.grid, self.values
        out = np.interp(x, g, v)
        lo = x < g[0]
        hi = x > g[-1]
        if np.any(lo):
            out = np.where(lo, v[0] + (x - g[0]) * (v[1] - v[0]) / (g[1] - g[0]), out)
        if np.any(hi):
            out = np.where(hi, v[-1] + (x - g[-1]) * (v[-1] - v[-2]) / (g[-1] - g[-2]), out)
        return out


@dataclass(frozen=True, eq=False)
class Multilinear(ShapeFunction):
    """``coef * prod(x_s for s in subset)``."""

    subset: tuple[int, ...]
    coef: float

    def __post_init__(self):
        if len(self.subset) < 2:
            raise ValueError("multilinear terms need a tail of size >= 2")
        if not math.isfinite(self.coef) or self.coef == 0.0:
            raise ValueError(f"multilinear coefficient must be finite and nonzero, got {self.coef}")

    def __call__(self, xs):
        return self.coef * np.prod(np.asarray(xs, dtype=float), axis=-1)


@dataclass(frozen=True, eq=False)
class RadialBumps(ShapeFunction):
    """Smooth 1-D surrogate: a weighted sum of Gaussian bumps."""

    subset: tuple[int, ...]
    centers: np.ndarray
    widths: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if len(self.subset) != 1:
            raise ValueError("radial bump shapes are one-dimensional")

    def __call__(self, xs):
        x = np.asarray(xs, dtype=float)[..., :1]
        z = (x - self.centers) / self.widths
        return np.sum(self.weights * np.exp(-0.5 * z * z), axis=-1)


@dataclass(frozen=True, eq=False)
class SemModel:
    """Additive structural equations over a hierarchical hypergraph.

    ``terms`` maps hyperedges to shape functions and must cover every
    maximal hyperedge of ``hdag``; ``noise_vars`` holds one Gaussian noise
    variance per node.
    """

    hdag: HDag
    terms: Mapping[Hyperedge, ShapeFunction]
    noise_vars: np.ndarray

    def __post_init__(self):
        noise = np.asarray(self.noise_vars, dtype=float)
        if noise.shape != (self.hdag.d,):
            raise DimensionMismatch(f"need {self.hdag.d} noise variances, got {noise.shape}")
        if np.any(~np.isfinite(noise)) or np.any(noise <= 0):
            raise ValueError("noise variances must be positive and finite")
        object.__setattr__(self, "noise_vars", noise)
        for e, f in self.terms.items():
            if e not in self.hdag.edges:
                raise ValueError(f"term for {e} which is not a hyperedge")
            if tuple(f.subset) != e.tail:
                raise ValueError(f"term subset {f.subset} does not match tail {e.tail}")
        for e in self.hdag.maximal_edges():
            if e not in self.terms:
                raise ValueError(f"maximal hyperedge {e} has no shape function")

    @property
    def d(self) -> int:
        return self.hdag.d

    def node_terms(self, j: int) -> list[ShapeFunction]:
        return [self.terms[e] for e in sorted(self.terms) if e.head == j]

    def node_mean(self, X: np.ndarray, j: int) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[:-1])
        for f in self.node_terms(j):
            out = out + f.evaluate(X)
        return out


@dataclass(eq=False)
class Dataset:
    """An ``n x d`` sample with its generation metadata."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("dataset values must be a 2-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains NaN or Inf")
        self.values = values

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def columns(self) -> list[str]:
        return [f"x{i}" for i in range(self.d)]

    def to_csv(self, path, meta_path=None):
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.values:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        if meta_path is not None:
            with open(meta_path, "w", newline="\n") as fh:
                json.dump(self.meta, fh, indent=2, sort_keys=True)
                fh.write("\n")

    @classmethod
    def from_csv(cls, path, meta_path=None) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        values = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if values.shape[1] != len(header):
            raise ValueError("header and row widths differ")
        meta = {}
        if meta_path is not None:
            with open(meta_path) as fh:
                meta = json.load(fh)
        return cls(values, meta)


# ---------------------------------------------------------------- structure


def sample_er_dag(d: int, avg_parents: float, rng=None) -> Dag:
    """Erdos-Renyi DAG with ``avg_parents * d`` expected edges.

    A uniformly random vertex ordering is drawn and every order-respecting
    pair is kept independently with probability ``2 * avg_parents / (d - 1)``.
    """
    rng = as_rng(rng)
    if d < 2:
        raise InvalidDensity("need at least two vertices")
    if avg_parents < 0 or avg_parents * d > d * (d - 1) / 2:
        raise InvalidDensity(f"avg_parents={avg_parents} infeasible for d={d}")
    p = 2.0 * avg_parents / (d - 1)
    perm = rng.permutation(d)
    iu, ju = np.triu_indices(d, k=1)
    keep = rng.random(len(iu)) < p
    return Dag(d, [(int(perm[a]), int(perm[b])) for a, b in zip(iu[keep], ju[keep])])


def sample_hdag(g: Dag, order: int, rng=None) -> HDag:
    """Group each child's parents into cyclic consecutive k-tuples.

    With parents shuffled to ``(p_0, ..., p_{m-1})`` the maximal tails are
    ``{p_i, ..., p_{i+k-1 mod m}}`` for ``i < m``, deduplicated, where
    ``k = min(order, m)``.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    rng = as_rng(rng)
    raw = []
    for j in range(g.d):
        pa = sorted(g.parents(j))
        if not pa:
            continue
        pa = [pa[i] for i in rng.permutation(len(pa))]
        m = len(pa)
        k = min(order, m)
        tails = {tuple(sorted(pa[(i + r) % m] for r in range(k))) for i in range(m)}
        raw.extend(Hyperedge(t, j) for t in tails)
    return hierarchical_closure(raw, g.d)


# ---------------------------------------------------------------- parameters


def _log_uniform(rng, size=None):
    lo, hi = LOG_UNIFORM_RANGE
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size=size))


def sample_gp_function(rng=None, subset=(0,)) -> GpInterp:
    """Zero-mean squared-exponential GP draw on a 100-point grid over [-5, 5]."""
    rng = as_rng(rng)
    diff = GP_GRID[:, None] - GP_GRID[None, :]
    K = GP_SIGNAL_VARIANCE * np.exp(-0.5 * (diff / GP_LENGTH_SCALE) ** 2)
    L = np.linalg.cholesky(K + GP_JITTER * np.eye(len(GP_GRID)))
    values = L @ rng.standard_normal(len(GP_GRID))
    return GpInterp(tuple(subset), GP_GRID.copy(), values)


def sample_bump_function(rng=None, subset=(0,), n_bumps: int = 5) -> RadialBumps:
    rng = as_rng(rng)
    return RadialBumps(
        tuple(subset),
        centers=rng.uniform(-3.0, 3.0, n_bumps),
        widths=rng.uniform(0.5, 1.5, n_bumps),
        weights=rng.standard_normal(n_bumps),
    )


def sample_multilinear_terms(child: int, tails, rng=None) -> dict[tuple[int, ...], float]:
    """Signed log-uniform coefficients rescaled by moment and tail count.

    ``beta = raw / (sqrt(m_k) * sqrt(T))`` with ``m_2 = 3``, ``m_3 = 15`` and
    ``T`` the number of tails feeding ``child``.
    """
    rng = as_rng(rng)
    tails = [tuple(sorted(t)) for t in tails]
    if not tails:
        raise ValueError("need at least one tail")
    out = {}
    for t in tails:
        if len(t) not in MULTILINEAR_MOMENTS:
            raise ValueError(f"multilinear tails must have size 2 or 3, got {t}")
        if child in t:
            raise ValueError(f"child {child} inside tail {t}")
        raw = float(_log_uniform(rng)) * (1.0 if rng.random() < 0.5 else -1.0)
        out[t] = _rescale_multilinear(raw, len(t), len(tails))
    return out


def _rescale_multilinear(raw: float, size: int, n_tails: int) -> float:
    return raw / (math.sqrt(MULTILINEAR_MOMENTS[size]) * math.sqrt(n_tails))


def sample_noise_variances(d: int, rng=None) -> np.ndarray:
    return _log_uniform(as_rng(rng), size=d)


def sample_sem(d: int, avg_parents: float, order: int, rng=None, smooth: bool = False) -> SemModel:
    """Full generator pipeline: ER DAG -> HDAG -> shape functions -> noise.

    ``smooth=True`` swaps the interpolated GP draws for radial-bump
    surrogates, which keeps every term infinitely differentiable.
    """
    rng = as_rng(rng)
    g = sample_er_dag(d, avg_parents, rng)
    h = sample_hdag(g, order, rng)
    noise = sample_noise_variances(d, rng)
    terms: dict[Hyperedge, ShapeFunction] = {}
    for j in range(d):
        tails = h.maximal_tails(j)
        for t in tails:
            if len(t) == 1:
                f = sample_bump_function(rng, t) if smooth else sample_gp_function(rng, t)
                terms[Hyperedge(t, j)] = f
        multi = [t for t in tails if len(t) > 1]
        if multi:
            for t, coef in sample_multilinear_terms(j, multi, rng).items():
                terms[Hyperedge(t, j)] = Multilinear(t, coef)
    return SemModel(h, terms, noise)


# ---------------------------------------------------------------- sampling


def generate(model: SemModel, n: int, rng=None, meta: dict | None = None) -> Dataset:
    """Ancestral sampling ``X_j = sum_S f_S(X_S) + eps_j`` in topological order."""
    rng = as_rng(rng)
    d = model.d
    eps = rng.standard_normal((n, d)) * np.sqrt(model.noise_vars)
    X = np.zeros((n, d))
    for j in model.hdag.topological_order():
        X[:, j] = model.node_mean(X, j) + eps[:, j]
    meta = dict(meta or {})
    meta.setdefault("n", n)
    meta.setdefault("d", d)
    return Dataset(X, meta)


def node_log_density(model: SemModel, X: np.ndarray, j: int) -> np.ndarray:
    """Gaussian log density of node ``j`` given its parents, at rows of ``X``."""
    X = np.asarray(X, dtype=float)
    s2 = model.noise_vars[j]
    r = X[..., j] - model.node_mean(X, j)
    return -0.5 * math.log(2 * math.pi * s2) - r * r / (2 * s2)


def analytic_log_density(model: SemModel, x: np.ndarray):
    """Exact joint log density; ``x`` is one point ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.d:
        raise DimensionMismatch(f"expected last axis {model.d}, got {x.shape}")
    total = sum(node_log_density(model, x, j) for j in range(model.d))
    return float(total) if x.ndim == 1 else total


def dataset_meta(config: dict, seed: int) -> dict:
    return {"seed": int(seed), "config_hash": config_hash(config), "config": config}

