"""Exact checks of hyper-Markov structure.

The discrete half works on full probability tables over small alphabets:
a zero-marginal ANOVA split of ``log p``, conditional multi-independence
tests, the higher-order information ``omega_T``, distributions built from
an HDag and random interaction tables, and brute-force enumeration of
HDags grouped into hyper-Markov equivalence classes.

The continuous half estimates mixed partial derivatives of a log density
by finite differences.

Notation: ``(I - M_t)`` removes the mean over axis ``t``. Applying it for
every ``t`` in ``T`` to a table keeps exactly the ANOVA components whose
index set contains ``T``.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.special import logsumexp

from ._utils import as_rng
from .dgp import GpInterp, SemModel, analytic_log_density
from .exceptions import DimensionGuard, InvalidConfig, NumericalInstability
from .graphs import Dag, HDag, Hyperedge, body, format_hdag, hmec_key, immoralize, unshielded_multicolliders

__all__ = [
    "ZERO_TOL",
    "FD_ZERO_TOL",
    "FAITHFUL_FLOOR",
    "DiscreteDist",
    "AnovaDecomposition",
    "anova_decompose",
    "anova_log_decompose",
    "top_component",
    "multi_independent",
    "omega_T",
    "hdag_discrete_dist",
    "random_theta_tables",
    "multi_independence_fingerprint",
    "hdag_fingerprint",
    "inside_immoralization",
    "enumerate_hdags",
    "enumerate_hmec",
    "HmecPartition",
    "hmec_report",
    "generalized_precision",
    "mixed_partial_norm",
]

ZERO_TOL = 1e-9  # exact discrete components
FD_ZERO_TOL = 1e-5  # finite-difference partials
FAITHFUL_FLOOR = 0.05
MAX_ENUM_D = 4


def _subsets(items, min_size=0, max_size=None):
    items = tuple(sorted(items))
    top = len(items) if max_size is None else min(max_size, len(items))
    for k in range(min_size, top + 1):
        yield from itertools.combinations(items, k)


# ---------------------------------------------------------------- tables


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """Strictly positive joint probability table; axis ``i`` is variable ``i``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim < 1 or any(k < 2 for k in t.shape):
            raise ValueError(f"every alphabet needs at least 2 symbols, got {t.shape}")
        if not np.all(np.isfinite(t)) or np.any(t <= 0):
            raise ValueError("probabilities must be finite and strictly positive")
        if abs(t.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {t.sum()!r}, not 1")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def from_log(cls, logp: np.ndarray) -> "DiscreteDist":
        logp = np.asarray(logp, dtype=float)
        return cls(np.exp(logp - logsumexp(logp)))

    @property
    def alphabets(self) -> tuple[int, ...]:
        return self.table.shape

    @property
    def d(self) -> int:
        return self.table.ndim

    @property
    def log(self) -> np.ndarray:
        return np.log(self.table)

    def marginal_log(self, keep: Iterable[int]) -> np.ndarray:
        """log of the marginal on ``keep``, broadcastable against the full table."""
        drop = tuple(a for a in range(self.d) if a not in set(keep))
        return np.log(self.table.sum(axis=drop, keepdims=True)) if drop else self.log


@dataclass(frozen=True, eq=False)
class AnovaDecomposition:
    """Components ``theta_S`` keyed by sorted axis tuples, ``()`` the constant.

    Each component keeps the full number of axes (size 1 off ``S``) so
    components add by broadcasting.
    """

    components: dict
    shape: tuple[int, ...]

    def reconstruct(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for comp in self.components.values():
            out = out + comp
        return out

    def __getitem__(self, S) -> np.ndarray:
        return self.components[tuple(sorted(S))]

    def norm(self, S) -> float:
        """Root mean square of ``theta_S`` over the uniform grid."""
        return float(np.sqrt(np.mean(self[S] ** 2)))


def _center(f: np.ndarray, axes) -> np.ndarray:
    for a in axes:
        f = f - f.mean(axis=a, keepdims=True)
    return f


def top_component(f: np.ndarray, T) -> np.ndarray:
    """``prod_{t in T} (I - M_t) f``: the sum of all components containing ``T``."""
    return _center(np.asarray(f, dtype=float), T)


def anova_decompose(f: np.ndarray) -> AnovaDecomposition:
    """Zero-marginal functional ANOVA split of an array over a product grid."""
    f = np.asarray(f, dtype=float)
    axes = range(f.ndim)
    comps = {}
    for S in _subsets(axes):
        outside = tuple(a for a in axes if a not in S)
        g = f.mean(axis=outside, keepdims=True) if outside else f
        comps[S] = _center(g, S)
    return AnovaDecomposition(comps, f.shape)


def anova_log_decompose(dist: DiscreteDist) -> AnovaDecomposition:
    return anova_decompose(dist.log)


def _check_T(dist: DiscreteDist, T, Z=()):
    T, Z = tuple(sorted(set(T))), tuple(sorted(set(Z)))
    if len(T) < 2:
        raise ValueError("T needs at least two variables")
    if set(T) & set(Z):
        raise ValueError("T and Z must be disjoint")
    if any(not 0 <= v < dist.d for v in T + Z):
        raise ValueError(f"variables must lie in 0..{dist.d - 1}")
    return T, Z


def multi_independent(dist: DiscreteDist, T, Z=(), tol: float = ZERO_TOL) -> bool:
    """Whether the top ANOVA component over ``T`` of ``log p(x_T | x_Z)`` vanishes.

    ``log p(z)`` is constant along every ``T`` axis, so the joint marginal on
    ``T | Z`` gives the same top component as the conditional.
    """
    T, Z = _check_T(dist, T, Z)
    top = top_component(dist.marginal_log(T + Z), T)
    return bool(np.max(np.abs(top)) <= tol)


def omega_T(dist: DiscreteDist, T) -> float:
    """RMS under ``p`` of the sum of ANOVA components of ``log p`` containing ``T``."""
    T, _ = _check_T(dist, T)
    g = top_component(dist.log, T)
    return float(np.sqrt(np.sum(dist.table * g * g)))


# ---------------------------------------------------------------- HDag tables


def _table_key(key) -> tuple[tuple[int, ...], int]:
    if isinstance(key, Hyperedge):
        return key.tail, key.head
    tail, head = key
    return tuple(sorted(tail)), int(head)


def hdag_discrete_dist(h: HDag, theta_tables: Mapping, alphabets) -> DiscreteDist:
    """Joint table of an HDag with interaction tables ``theta(x_j; x_S)``.

    ``theta_tables`` maps ``(tail, head)`` (or a Hyperedge) to an array with
    axes ``(*tail, head)``. An empty tail gives the unary term of a node.
    Every maximal hyperedge needs a table; other hyperedges default to zero.
    Each node's conditional is ``exp(sum of its tables)`` normalised over
    ``x_j``.
    """
    alphabets = tuple(int(a) for a in alphabets)
    if len(alphabets) != h.d or any(a < 2 for a in alphabets):
        raise ValueError("need one alphabet size >= 2 per vertex")
    tables = {_table_key(k): np.asarray(v, dtype=float) for k, v in theta_tables.items()}
    for e in h.maximal_edges():
        if (e.tail, e.head) not in tables:
            raise ValueError(f"missing table for maximal hyperedge {e}")
    logp = np.zeros(alphabets)
    for j in range(h.d):
        node = np.zeros(alphabets)
        for (tail, head), tab in tables.items():
            if head != j:
                continue
            if tail and tail not in h.hyperparents(j):
                raise ValueError(f"table for ({tail}, {j}) is not a hyperedge")
            axes = tail + (j,)
            want = tuple(alphabets[a] for a in axes)
            if tab.shape != want:
                raise ValueError(f"table ({tail}, {j}) has shape {tab.shape}, expected {want}")
            # move table axes into place, size 1 elsewhere
            order = np.argsort(axes)
            shape = [1] * h.d
            for a in axes:
                shape[a] = alphabets[a]
            node = node + np.transpose(tab, order).reshape(shape)
        logp = logp + node - logsumexp(node, axis=j, keepdims=True)
    return DiscreteDist(np.exp(logp - logsumexp(logp)))


def random_theta_tables(h: HDag, alphabets, rng=None, floor: float = FAITHFUL_FLOOR) -> dict:
    """Gaussian interaction tables for every hyperedge plus unary node terms.

    A table is redrawn while its top component (interaction over all of its
    axes) has RMS below ``floor``.
    """
    rng = as_rng(rng)
    out = {}
    keys = [((), j) for j in range(h.d)] + [(e.tail, e.head) for e in h.sorted_edges()]
    for tail, head in keys:
        axes = tail + (head,)
        shape = tuple(alphabets[a] for a in axes)
        while True:
            tab = rng.standard_normal(shape)
            top = top_component(tab, range(len(axes)))
            if np.sqrt(np.mean(top**2)) >= floor:
                break
        out[(tail, head)] = tab
    return out


def _all_tests(d: int):
    for T in _subsets(range(d), min_size=2):
        rest = [v for v in range(d) if v not in T]
        for Z in _subsets(rest):
            yield T, Z


def multi_independence_fingerprint(dist: DiscreteDist, tol: float = ZERO_TOL) -> frozenset:
    """Every ``(T, Z)`` with ``T`` multi-independent given ``Z``."""
    return frozenset((T, Z) for T, Z in _all_tests(dist.d) if multi_independent(dist, T, Z, tol))


def hdag_fingerprint(h: HDag, n_draws: int = 20, rng=None, alphabets=None) -> frozenset:
    """Multi-independences holding in every one of ``n_draws`` random parametrizations."""
    rng = as_rng(rng)
    alphabets = alphabets or (2,) * h.d
    fps = [
        multi_independence_fingerprint(hdag_discrete_dist(h, random_theta_tables(h, alphabets, rng), alphabets))
        for _ in range(n_draws)
    ]
    return reduce(frozenset.intersection, fps)


# ---------------------------------------------------------------- enumeration


def _down_closed_families(vertices, max_order):
    """Every subset-closed family of nonempty tails over ``vertices``."""
    cands = list(_subsets(vertices, 1, max_order))
    out = []
    for mask in itertools.product((False, True), repeat=len(cands)):
        fam = {c for c, m in zip(cands, mask) if m}
        if all(s in fam for t in fam for s in _subsets(t, 1, len(t) - 1)):
            out.append(frozenset(fam))
    return out


FAMILIES = ("all", "singleton", "complete", "full")


def _dags(d: int):
    pairs = list(itertools.combinations(range(d), 2))
    for states in itertools.product((0, 1, 2), repeat=len(pairs)):
        edges = [(i, j) if s == 1 else (j, i) for (i, j), s in zip(pairs, states) if s]
        try:
            yield Dag(d, edges)
        except ValueError:
            continue


def _complete_hdag(g: Dag, max_order: int) -> HDag:
    edges = [Hyperedge(t, j) for j in range(g.d) for t in _subsets(g.parents(j), 1, max_order)]
    return HDag(g.d, edges)


def enumerate_hdags(d: int, max_order: int = 2, family: str = "all") -> list[HDag]:
    """All hierarchical acyclic HDags on ``d <= 4`` vertices in a family.

    ``all``: any hierarchical tails up to ``max_order``.
    ``singleton``: singleton tails only (ordinary DAGs).
    ``complete``: every DAG with all parent subsets up to ``max_order`` as tails.
    ``full``: ``complete`` restricted to DAGs with every pair adjacent.
    """
    if d > MAX_ENUM_D:
        raise DimensionGuard(f"enumeration is limited to d <= {MAX_ENUM_D}, got {d}")
    if d < 1 or max_order < 1:
        raise InvalidConfig("need d >= 1 and max_order >= 1")
    if family not in FAMILIES:
        raise InvalidConfig(f"family must be one of {FAMILIES}")
    if family == "singleton":
        return sorted((g.to_hdag() for g in _dags(d)), key=format_hdag)
    if family in ("complete", "full"):
        full_edges = d * (d - 1) // 2
        gs = [g for g in _dags(d) if family == "complete" or len(_edge_list(g)) == full_edges]
        return sorted((_complete_hdag(g, max_order) for g in gs), key=format_hdag)
    per_node = [_down_closed_families([v for v in range(d) if v != j], max_order) for j in range(d)]
    out = []
    for combo in itertools.product(*per_node):
        edges = [Hyperedge(t, j) for j, fam in enumerate(combo) for t in fam]
        try:
            out.append(HDag(d, edges))
        except ValueError:
            continue
    return sorted(out, key=format_hdag)


def _edge_list(g: Dag):
    return [(k, j) for j in range(g.d) for k in g.parents(j)]


@dataclass(frozen=True)
class HmecPartition:
    """HDags grouped by hyper-Markov equivalence, in a stable order."""

    d: int
    classes: tuple[tuple[HDag, ...], ...]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def sizes(self) -> list[int]:
        return [len(c) for c in self.classes]

    def class_of(self, h: HDag) -> int:
        for k, members in enumerate(self.classes):
            if h in members:
                return k
        raise KeyError(h)


def enumerate_hmec(d: int, max_order: int = 2, family: str = "all", hdags=None) -> HmecPartition:
    """Partition an HDag family into hyper-Markov equivalence classes.

    Classes are ordered by the text form of their first member; members by
    their own text form.
    """
    hdags = enumerate_hdags(d, max_order, family) if hdags is None else list(hdags)
    groups: dict = {}
    for h in hdags:
        groups.setdefault(hmec_key(h), []).append(h)
    classes = [tuple(sorted(g, key=format_hdag)) for g in groups.values()]
    classes.sort(key=lambda c: format_hdag(c[0]))
    return HmecPartition(d, tuple(classes))


def hmec_report(part: HmecPartition) -> str:
    """Text listing of every class: summary lines, then members in graph format."""
    lines = [f"classes={part.n_classes} members={sum(part.sizes())}"]
    for k, members in enumerate(part.classes):
        rep = members[0]
        sets = sorted(tuple(sorted(s)) for s in body(rep).sets)
        mcs = sorted(unshielded_multicolliders(rep))
        lines.append(f"class {k}: size={len(members)}")
        lines.append("  body: " + " ".join("{" + ",".join(map(str, s)) + "}" for s in sets))
        lines.append("  multicolliders: " + (" ".join(f"{list(s)}->{j}" for s, j in mcs) or "-"))
        for m, h in enumerate(members):
            lines.append(f"  member {m}:")
            lines.extend("    " + ln for ln in format_hdag(h).splitlines())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- derivatives


def _as_points(points, d=None) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if d is not None and P.shape[1] != d:
        raise ValueError(f"points have {P.shape[1]} coordinates, expected {d}")
    return P


def _mixed(f: Callable, P: np.ndarray, axes, h: float) -> np.ndarray:
    """Nested central difference of ``f`` over ``axes`` at every row of ``P``."""
    total = np.zeros(P.shape[0])
    for signs in itertools.product((1, -1), repeat=len(axes)):
        Q = P.copy()
        for a, s in zip(axes, signs):
            Q[:, a] += s * h
        total += np.prod(signs) * np.asarray(f(Q), dtype=float)
    return total / (2 * h) ** len(axes)


def generalized_precision(logp: Callable, i: int, j: int, points, scale: float = 1.0,
                          rtol: float = 1e-2, atol: float = 1e-6) -> float:
    """RMS over ``points`` of the mixed partial ``d2 logp / dx_i dx_j``.

    ``logp`` maps an ``(n, d)`` batch to ``n`` values. Uses the 4-point
    stencil with step ``1e-3 * scale`` and checks it against the doubled
    step; a disagreement beyond ``atol + rtol * |estimate|`` raises
    :class:`NumericalInstability`.
    """
    if i == j:
        raise ValueError("i and j must differ")
    P = _as_points(points)
    h = 1e-3 * scale
    est = _mixed(logp, P, (i, j), h)
    check = _mixed(logp, P, (i, j), 2 * h)
    resid = np.max(np.abs(est - check))
    if resid > atol + rtol * np.max(np.abs(est)):
        raise NumericalInstability(f"stencil residual {resid:.3g} at step {h}")
    return float(np.sqrt(np.mean(est**2)))


def mixed_partial_norm(model: SemModel, R, points, h: float = 1e-2) -> float:
    """RMS over ``points`` of the ``|R|``-th mixed partial of the model's log density.

    Interpolated GP terms are only piecewise linear, so models containing
    them are rejected; use the smooth generator instead.
    """
    R = tuple(sorted(set(R)))
    if not 2 <= len(R) <= 4:
        raise ValueError("R must have 2 to 4 variables")
    if any(isinstance(f, GpInterp) for f in model.terms.values()):
        raise NumericalInstability("piecewise-linear GP terms have no stable higher derivatives")
    P = _as_points(points, model.d)
    vals = _mixed(lambda Q: analytic_log_density(model, Q), P, R, h)
    if not np.all(np.isfinite(vals)):
        raise NumericalInstability("non-finite finite-difference estimate")
    return float(np.sqrt(np.mean(vals**2)))


def inside_immoralization(h: HDag, R) -> bool:
    R = frozenset(R)
    return any(R <= s for s in immoralize(h).sets)
