"""Three-stage hypergraph structure search.

``screen`` ranks candidate tails per child, ``greedy_select`` adds
hyperedges one at a time while keeping the reduced DAG acyclic, and
``prune`` refits every node and removes terms that carry no signal.
``run_cam`` is the same pipeline restricted to singleton tails and
``run_zero`` returns the empty graph.

Scores
------
For a child ``j`` with accepted tails ``B`` and a candidate tail ``S`` the
raw *gain* is the drop in residual variance ``s2(B) - s2(B + S)``, in the
data's own units. Acceptance also needs the penalised log-likelihood gain

    log(s2(B) / s2(B + S)) - penalty * (edf(B + S) - edf(B)) * log(n) / n

to be positive, and candidates are ranked by that penalised value. With
``penalty=0`` the ranking is a plain Gaussian likelihood ratio.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._utils import config_hash
from ._validation import check_data
from .exceptions import InvalidConfig
from .gam import BasisSpec, NodeModel, NodeScorer, term_variance
from .graphs import AncestorMatrix, HDag, Hyperedge, hierarchical_closure

__all__ = [
    "DiscoveryConfig",
    "CandidatePool",
    "TraceStep",
    "DiscoveryResult",
    "screen",
    "greedy_select",
    "prune",
    "run_hcam",
    "run_cam",
    "run_zero",
    "HCAM",
    "CAM",
    "ZeroBaseline",
]

Tail = tuple[int, ...]
HIERARCHY_MODES = ("strict", "closure")


@dataclass(frozen=True)
class DiscoveryConfig:
    """Settings for the search.

    Parameters
    ----------
    max_order : int
        Largest tail size considered (1, 2 or 3).
    basis : BasisSpec
        Spline basis for the full-budget fits; the cheap budget derives
        from it.
    gain_floor : float
        Minimum drop in residual variance for an acceptance.
    prune_threshold : float
        Terms with fitted variance below this are removed.
    max_hyperedges : int or None
        Cap on greedy acceptances.
    seed : int
        Stored with the results; the search itself is deterministic.
    window, replenish_floor : int
        Active candidates per child and the viable count that triggers a
        refill.
    penalty : float
        Multiplier on the ``edf * log(n) / n`` complexity charge.
    hierarchy : {"strict", "closure"}
        ``strict`` admits a tail only once all its proper subsets are
        accepted. ``closure`` admits it directly and adds the missing
        subsets along with it.
    prune_test : bool
        Also drop terms whose removal improves the penalised score.
    pair_pool, triple_pool : int
        How many top singleton parents seed pair and triple screening.
    """

    max_order: int = 2
    basis: BasisSpec = field(default_factory=BasisSpec)
    gain_floor: float = 1e-3
    prune_threshold: float = 1e-4
    max_hyperedges: int | None = None
    seed: int = 0
    window: int = 10
    replenish_floor: int = 5
    penalty: float = 1.0
    hierarchy: str = "strict"
    prune_test: bool = True
    pair_pool: int = 8
    triple_pool: int = 5

    def __post_init__(self):
        if self.max_order not in (1, 2, 3):
            raise InvalidConfig(f"max_order must be 1, 2 or 3, got {self.max_order}")
        if self.max_order > self.basis.max_tensor_order:
            raise InvalidConfig("max_order exceeds the basis tensor order")
        if not self.gain_floor > 0:
            raise InvalidConfig("gain_floor must be positive")
        if not self.prune_threshold > 0:
            raise InvalidConfig("prune_threshold must be positive")
        if self.max_hyperedges is not None and self.max_hyperedges < 0:
            raise InvalidConfig("max_hyperedges must be non-negative")
        if self.window < 1 or not 0 <= self.replenish_floor <= self.window:
            raise InvalidConfig("need window >= 1 and 0 <= replenish_floor <= window")
        if self.penalty < 0:
            raise InvalidConfig("penalty must be non-negative")
        if self.hierarchy not in HIERARCHY_MODES:
            raise InvalidConfig(f"hierarchy must be one of {HIERARCHY_MODES}")
        if self.pair_pool < 2 or self.triple_pool < 3:
            raise InvalidConfig("pair_pool >= 2 and triple_pool >= 3 required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, blob: dict) -> "DiscoveryConfig":
        blob = dict(blob)
        if isinstance(blob.get("basis"), dict):
            blob["basis"] = BasisSpec(**blob["basis"])
        return cls(**blob)

    def hash(self) -> str:
        return config_hash(self.to_dict())


# ---------------------------------------------------------------- pool


@dataclass
class CandidatePool:
    """Ranked candidate tails per child.

    ``ranked[j]`` is a list of ``(tail, score)`` sorted by descending score
    with ties broken on the tail.
    """

    d: int
    ranked: dict[int, list[tuple[Tail, float]]]
    window: int = 10
    replenish_floor: int = 5

    def __post_init__(self):
        for j, items in self.ranked.items():
            for t, _ in items:
                if j in t:
                    raise ValueError(f"tail {t} contains its child {j}")
            scores = [s for _, s in items]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise ValueError(f"candidates for child {j} are not ranked")

    def candidates(self, j: int) -> list[Tail]:
        return [t for t, _ in self.ranked.get(j, [])]

    def max_order(self) -> int:
        return max((len(t) for items in self.ranked.values() for t, _ in items), default=0)


def _rank(scored: dict[Tail, float]) -> list[tuple[Tail, float]]:
    return sorted(scored.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))


def screen(data, cfg: DiscoveryConfig = DiscoveryConfig(), scorer: NodeScorer | None = None) -> CandidatePool:
    """Rank singleton, pair and triple tails for every child.

    Singletons are scored by their term variance in a full-budget fit on
    all other columns. Pairs and triples are scored by the cheap-budget
    drop in residual variance they achieve on the residuals of that fit,
    searched among the strongest singleton parents only.
    """
    X = check_data(data, min_samples=2, min_features=2)
    n, d = X.shape
    if n < 10 * d:
        raise ValueError(f"screening needs n >= 10*d, got n={n}, d={d}")
    scorer = scorer or NodeScorer(X, cfg.basis)
    ranked = {}
    for j in range(d):
        others = [c for c in range(d) if c != j]
        model = scorer.model(j, [(c,) for c in others], "full")
        scored = {(c,): term_variance(model, X, (c,)) for c in others}
        if cfg.max_order >= 2 and len(others) >= 2:
            resid = X[:, j] - model.predict(X)
            top = [t[0] for t, _ in _rank(scored)]
            base = scorer.summary(j, [], "cheap", target=resid).sigma2
            groups = [(2, min(cfg.pair_pool, d - 1))]
            if cfg.max_order >= 3:
                groups.append((3, min(cfg.triple_pool, d - 1)))
            for size, q in groups:
                for tail in itertools.combinations(sorted(top[:q]), size):
                    after = scorer.summary(j, [tail], "cheap", target=resid).sigma2
                    scored[tail] = base - after
        ranked[j] = _rank(scored)
    return CandidatePool(d, ranked, cfg.window, cfg.replenish_floor)


# ---------------------------------------------------------------- greedy


@dataclass(frozen=True)
class TraceStep:
    step: int
    child: int
    tail: Tail
    gain: float
    sigma2_before: float
    sigma2_after: float
    score: float
    n_admissible: int

    def to_line(self) -> str:
        tail = ";".join(map(str, self.tail))
        return (f"{self.step},{self.child},{tail},{self.gain!r},"
                f"{self.sigma2_before!r},{self.sigma2_after!r}")


TRACE_HEADER = "step,child,tail,gain,sigma2_before,sigma2_after"


def _subsets(t: Tail) -> list[Tail]:
    return [s for k in range(1, len(t) + 1) for s in itertools.combinations(t, k)]


class _Search:
    """Mutable state of one greedy run."""

    def __init__(self, scorer: NodeScorer, pool: CandidatePool, cfg: DiscoveryConfig):
        self.scorer = scorer
        self.pool = pool
        self.cfg = cfg
        self.d = pool.d
        self.log_n = math.log(scorer.n)
        self.tails: dict[int, set[Tail]] = {j: set() for j in range(self.d)}
        self.anc = AncestorMatrix.empty(self.d)
        self.dead: set[tuple[int, Tail]] = set()
        self.failed_bases: dict[tuple[int, Tail], set] = {}
        self.queue = {j: list(pool.candidates(j)) for j in range(self.d)}
        self.active: dict[int, list[Tail]] = {j: [] for j in range(self.d)}
        for j in range(self.d):
            self._fill(j, pool.window)

    def _enter(self, j: int, tail: Tail):
        # a tail arrives together with any missing subsets so hierarchy can be met
        for sub in _subsets(tail):
            if sub not in self.active[j] and sub not in self.tails[j]:
                self.active[j].append(sub)
                if sub in self.queue[j]:
                    self.queue[j].remove(sub)

    def _viable(self, j: int) -> list[Tail]:
        return [t for t in self.active[j] if (j, t) not in self.dead and t not in self.tails[j]]

    def _fill(self, j: int, target: int) -> bool:
        added = False
        while len(self._viable(j)) < target and self.queue[j]:
            self._enter(j, self.queue[j].pop(0))
            added = True
        return added

    def replenish(self) -> bool:
        added = False
        for j in range(self.d):
            if len(self._viable(j)) < self.pool.replenish_floor:
                added |= self._fill(j, self.pool.window)
        return added

    def _cyclic(self, j: int, tail: Tail) -> bool:
        return any(self.anc.would_create_cycle((k, j)) for k in tail if k not in self._parents(j))

    def _parents(self, j: int) -> set[int]:
        return {k for t in self.tails[j] for k in t}

    def _admissible(self, j: int, tail: Tail) -> bool:
        if self.cfg.hierarchy == "closure":
            return True
        return all(s in self.tails[j] for s in _subsets(tail) if s != tail)

    def evaluate(self, j: int, tail: Tail):
        base = sorted(self.tails[j])
        new = sorted(self.tails[j] | set(_subsets(tail)))
        before = self.scorer.summary(j, base, "cheap")
        after = self.scorer.summary(j, new, "cheap")
        gain = before.sigma2 - after.sigma2
        ll = math.log(before.sigma2 / after.sigma2) if after.sigma2 > 0 else math.inf
        score = ll - self.cfg.penalty * (after.edf - before.edf) * self.log_n / self.scorer.n
        return gain, score, before.sigma2, after.sigma2

    def step(self):
        """Best admissible candidate, or None. Marks non-viable ones."""
        best, n_adm = None, 0
        for j in range(self.d):
            for tail in list(self._viable(j)):
                if self._cyclic(j, tail):
                    # reachability only grows, so this is permanent
                    self.dead.add((j, tail))
                    continue
                if not self._admissible(j, tail):
                    continue
                n_adm += 1
                gain, score, s_before, s_after = self.evaluate(j, tail)
                if gain < self.cfg.gain_floor or score <= 0:
                    bases = self.failed_bases.setdefault((j, tail), set())
                    bases.add(tuple(sorted(self.tails[j])))
                    if len(bases) >= 2:
                        self.dead.add((j, tail))
                    continue
                key = (-score, j, len(tail), tail)
                if best is None or key < best[0]:
                    best = (key, j, tail, gain, score, s_before, s_after)
        return best, n_adm

    def accept(self, j: int, tail: Tail):
        for k in tail:
            if k not in self._parents(j):
                self.anc = self.anc.with_edge((k, j))
        self.tails[j] |= set(_subsets(tail))

    def hdag(self) -> HDag:
        edges = [Hyperedge(t, j) for j in range(self.d) for t in self.tails[j]]
        return hierarchical_closure(edges, self.d)


def greedy_select(data, pool: CandidatePool, cfg: DiscoveryConfig = DiscoveryConfig(),
                  scorer: NodeScorer | None = None) -> tuple[HDag, list[TraceStep]]:
    """Forward selection of hyperedges under acyclicity.

    Returns the hierarchical closure of the accepted tails and the ordered
    acceptance log.
    """
    X = check_data(data, min_samples=2)
    if X.shape[1] != pool.d:
        raise ValueError(f"pool is for d={pool.d}, data has {X.shape[1]} columns")
    scorer = scorer or NodeScorer(X, cfg.basis)
    search = _Search(scorer, pool, cfg)
    trace: list[TraceStep] = []
    cap = cfg.max_hyperedges
    while cap is None or len(trace) < cap:
        best, n_adm = search.step()
        if best is None:
            if search.replenish():
                continue
            break
        _, j, tail, gain, score, s_before, s_after = best
        search.accept(j, tail)
        trace.append(TraceStep(len(trace), j, tail, gain, s_before, s_after, score, n_adm))
        search.replenish()
    return search.hdag(), trace


# ---------------------------------------------------------------- prune


@dataclass
class DiscoveryResult:
    """Learned graph with per-node fits and the greedy log."""

    hdag: HDag
    models: dict[int, NodeModel]
    trace: list[TraceStep]
    config_hash: str
    method: str = "hcam"
    dropped: list[Hyperedge] = field(default_factory=list)

    def trace_text(self) -> str:
        return "\n".join([TRACE_HEADER] + [s.to_line() for s in self.trace]) + "\n"

    def models_blob(self) -> dict:
        return {
            "method": self.method,
            "config_hash": self.config_hash,
            "nodes": [self.models[j].to_dict() for j in sorted(self.models)],
        }

    def predict(self, X) -> np.ndarray:
        """Conditional means of every column given the others."""
        X = check_data(X, n_features=self.hdag.d)
        return np.column_stack([self.models[j].predict(X) for j in range(self.hdag.d)])

    def log_likelihood(self, X) -> float:
        """Average Gaussian log-likelihood per sample under the fitted SEM."""
        X = check_data(X, n_features=self.hdag.d)
        total = 0.0
        for j in range(self.hdag.d):
            s2 = max(self.models[j].sigma2_hat, 1e-300)
            r = X[:, j] - self.models[j].predict(X)
            total += float(np.mean(-0.5 * (np.log(2 * np.pi * s2) + r**2 / s2)))
        return total


def _fit_all(scorer: NodeScorer, h: HDag) -> dict[int, NodeModel]:
    return {j: scorer.model(j, sorted(h.hyperparents(j)), "full") for j in range(h.d)}


def _removal_score(scorer: NodeScorer, j: int, tails: set[Tail], tail: Tail, penalty: float) -> float:
    """Penalised log-likelihood lost by dropping ``tail``; negative means drop."""
    full = scorer.summary(j, sorted(tails), "full")
    rest = scorer.summary(j, sorted(tails - {tail}), "full")
    ll = math.log(rest.sigma2 / full.sigma2) if full.sigma2 > 0 else math.inf
    return ll - penalty * (full.edf - rest.edf) * math.log(scorer.n) / scorer.n


def prune(data, hdag: HDag, cfg: DiscoveryConfig = DiscoveryConfig(), scorer: NodeScorer | None = None,
          trace=None, method: str = "hcam") -> DiscoveryResult:
    """Refit at full budget and drop maximal terms that carry no signal.

    A maximal tail goes if its fitted term variance is below
    ``prune_threshold`` or, with ``prune_test``, if removing it raises the
    penalised score. Removal repeats per node, weakest first, until every
    remaining maximal tail passes.
    """
    X = check_data(data, min_samples=2, n_features=hdag.d)
    scorer = scorer or NodeScorer(X, cfg.basis)
    tails = {j: set(hdag.hyperparents(j)) for j in range(hdag.d)}
    dropped = []
    for j in range(hdag.d):
        while tails[j]:
            model = scorer.model(j, sorted(tails[j]), "full")
            maximal = [t for t in tails[j] if not any(set(t) < set(u) for u in tails[j])]
            worst = None
            for t in sorted(maximal, key=lambda t: (len(t), t)):
                tv = term_variance(model, X, t)
                rank = tv / cfg.prune_threshold - 1.0
                if cfg.prune_test:
                    rank = min(rank, _removal_score(scorer, j, tails[j], t, cfg.penalty))
                if rank < 0 and (worst is None or rank < worst[0]):
                    worst = (rank, t)
            if worst is None:
                break
            tails[j].discard(worst[1])
            dropped.append(Hyperedge(worst[1], j))
    pruned = hierarchical_closure([Hyperedge(t, j) for j in tails for t in tails[j]], hdag.d)
    return DiscoveryResult(pruned, _fit_all(scorer, pruned), list(trace or []), cfg.hash(), method, dropped)


# ---------------------------------------------------------------- drivers


def run_hcam(data, cfg: DiscoveryConfig = DiscoveryConfig(), method: str = "hcam") -> DiscoveryResult:
    X = check_data(data, min_samples=2, min_features=2)
    scorer = NodeScorer(X, cfg.basis)
    pool = screen(X, cfg, scorer)
    h, trace = greedy_select(X, pool, cfg, scorer)
    return prune(X, h, cfg, scorer, trace, method)


def run_cam(data, cfg: DiscoveryConfig = DiscoveryConfig()) -> DiscoveryResult:
    return run_hcam(data, replace(cfg, max_order=1), method="cam")


def run_zero(data, cfg: DiscoveryConfig = DiscoveryConfig()) -> DiscoveryResult:
    X = check_data(data, min_samples=2)
    h = HDag(X.shape[1])
    scorer = NodeScorer(X, cfg.basis)
    return DiscoveryResult(h, _fit_all(scorer, h), [], cfg.hash(), "zero")


# ---------------------------------------------------------------- estimators


class _SearchEstimator(BaseEstimator):
    _runner = staticmethod(run_hcam)

    def _config(self) -> DiscoveryConfig:
        raise NotImplementedError

    def fit(self, X, y=None):
        X = check_data(X, min_samples=2, min_features=2)
        self.result_ = type(self)._runner(X, self._config())
        self.hdag_ = self.result_.hdag
        self.models_ = self.result_.models
        self.trace_ = self.result_.trace
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        """Per-column conditional means given the learned parents."""
        check_is_fitted(self, "result_")
        return self.result_.predict(X)

    def score(self, X, y=None) -> float:
        """Average Gaussian log-likelihood per sample."""
        check_is_fitted(self, "result_")
        return self.result_.log_likelihood(X)


class HCAM(_SearchEstimator):
    """Higher-order causal additive model search.

    Parameters mirror :class:`DiscoveryConfig`; the basis parameters are
    flattened so ``get_params``/``set_params`` reach them.

    Attributes
    ----------
    hdag_ : HDag
    models_ : dict of int to NodeModel
    trace_ : list of TraceStep
    result_ : DiscoveryResult

    Examples
    --------
    >>> from hcam.dgp import sample_sem, generate
    >>> model = sample_sem(5, 1.5, order=2, rng=0)
    >>> X = generate(model, 1000, rng=1).values
    >>> est = HCAM(max_order=2).fit(X)
    >>> est.hdag_.d
    5
    """

    def __init__(self, max_order=2, knots_per_dim=8, ridge_lambda=1e-3, gain_floor=1e-3,
                 prune_threshold=1e-4, max_hyperedges=None, penalty=1.0, hierarchy="strict",
                 prune_test=True, window=10, replenish_floor=5):
        self.max_order = max_order
        self.knots_per_dim = knots_per_dim
        self.ridge_lambda = ridge_lambda
        self.gain_floor = gain_floor
        self.prune_threshold = prune_threshold
        self.max_hyperedges = max_hyperedges
        self.penalty = penalty
        self.hierarchy = hierarchy
        self.prune_test = prune_test
        self.window = window
        self.replenish_floor = replenish_floor

    def _config(self) -> DiscoveryConfig:
        return _config_from(self, self.max_order, self.hierarchy)


def _config_from(est, max_order, hierarchy) -> DiscoveryConfig:
    return DiscoveryConfig(
        max_order=max_order,
        basis=BasisSpec(knots_per_dim=est.knots_per_dim, ridge_lambda=est.ridge_lambda),
        gain_floor=est.gain_floor,
        prune_threshold=est.prune_threshold,
        max_hyperedges=est.max_hyperedges,
        penalty=est.penalty,
        hierarchy=hierarchy,
        prune_test=est.prune_test,
        window=est.window,
        replenish_floor=est.replenish_floor,
    )


class CAM(_SearchEstimator):
    """Singleton-only variant of :class:`HCAM`: every tail has one parent."""

    _runner = staticmethod(run_cam)

    def __init__(self, knots_per_dim=8, ridge_lambda=1e-3, gain_floor=1e-3, prune_threshold=1e-4,
                 max_hyperedges=None, penalty=1.0, prune_test=True, window=10, replenish_floor=5):
        self.knots_per_dim = knots_per_dim
        self.ridge_lambda = ridge_lambda
        self.gain_floor = gain_floor
        self.prune_threshold = prune_threshold
        self.max_hyperedges = max_hyperedges
        self.penalty = penalty
        self.prune_test = prune_test
        self.window = window
        self.replenish_floor = replenish_floor

    def _config(self) -> DiscoveryConfig:
        return _config_from(self, 1, "strict")


class ZeroBaseline(_SearchEstimator):
    """Empty graph; every column is predicted by its mean."""

    _runner = staticmethod(run_zero)

    def _config(self) -> DiscoveryConfig:
        return DiscoveryConfig()
