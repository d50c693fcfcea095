"""Structural distances between learned and true graphs.

``shd`` compares DAGs edge by edge, ``sid`` counts parent sets that are
invalid adjustment sets in the true DAG, and ``hoshd`` compares hypergraph
bodies. DAG inputs to ``hoshd`` are read as additive-noise models with
unrestricted interactions, so each parent set is expanded to all of its
subsets before comparison.
"""

from __future__ import annotations

import csv
import io
import itertools
from collections import deque
from dataclasses import asdict, dataclass, fields

from .exceptions import DimensionMismatch
from .graphs import Dag, HDag, UHypergraph, body, reduced_dag

__all__ = [
    "MetricsReport",
    "shd",
    "d_separated",
    "sid",
    "expand_dag_body",
    "expansion_truncated",
    "hoshd",
    "evaluate",
    "REPORT_COLUMNS",
]

DEFAULT_TRUNCATION = 4


def _as_dag(g: Dag | HDag) -> Dag:
    return reduced_dag(g) if isinstance(g, HDag) else g


def _same_d(a, b):
    if a.d != b.d:
        raise DimensionMismatch(f"graphs have {a.d} and {b.d} vertices")


def shd(g_true: Dag | HDag, g_est: Dag | HDag) -> int:
    """Structural Hamming distance; a reversed edge counts once.

    HDag inputs are compared through their reduced DAGs.
    """
    g_true, g_est = _as_dag(g_true), _as_dag(g_est)
    _same_d(g_true, g_est)
    A, B = g_true.adjacency(), g_est.adjacency()
    count = 0
    for i, j in itertools.combinations(range(g_true.d), 2):
        if (A[i, j], A[j, i]) != (B[i, j], B[j, i]):
            count += 1
    return count


def _ancestors(g: Dag, nodes) -> set[int]:
    out, stack = set(nodes), list(nodes)
    while stack:
        v = stack.pop()
        for p in g.parents(v):
            if p not in out:
                out.add(p)
                stack.append(p)
    return out


def d_separated(g: Dag, A, B, Z=()) -> bool:
    """True iff every trail between ``A`` and ``B`` is blocked by ``Z``.

    Reachability over (node, direction) states: a trail may pass a
    collider only if the collider is an ancestor of ``Z``.
    """
    A, B, Z = set(A), set(B), set(Z)
    if A & B or A & Z or B & Z:
        raise ValueError("A, B and Z must be disjoint")
    anc_z = _ancestors(g, Z)
    # "up": arrived from a child; "down": arrived from a parent
    seen = set()
    queue = deque((a, "up") for a in A)
    while queue:
        v, direction = queue.popleft()
        if (v, direction) in seen:
            continue
        seen.add((v, direction))
        if v in B:
            return False
        if direction == "up" and v not in Z:
            queue.extend((p, "up") for p in g.parents(v))
            queue.extend((c, "down") for c in g.children(v))
        elif direction == "down":
            if v not in Z:
                queue.extend((c, "down") for c in g.children(v))
            if v in anc_z:
                queue.extend((p, "up") for p in g.parents(v))
    return True


def _proper_backdoor(g: Dag, i: int, j: int) -> Dag:
    # drop the first edge of every directed path i -> ... -> j
    on_causal = (g.descendants(i) | {i}) & _ancestors(g, {j})
    keep = [(a, b) for a in range(g.d) for b in g.children(a) if not (a == i and b in on_causal)]
    return Dag(g.d, keep)


def _valid_adjustment(g: Dag, i: int, j: int, Z: frozenset) -> bool:
    de_i = g.descendants(i)
    causal_nodes = (de_i & _ancestors(g, {j})) - {i}
    forbidden = set()
    for w in causal_nodes:
        forbidden |= g.descendants(w) | {w}
    if Z & forbidden:
        return False
    return d_separated(_proper_backdoor(g, i, j), {i}, {j}, Z)


def sid(g_true: Dag | HDag, g_est: Dag | HDag) -> int:
    """Structural intervention distance.

    Counts ordered pairs ``(i, j)`` for which adjusting for the estimated
    parents of ``i`` does not identify the effect of ``i`` on ``j`` in the
    true graph. When ``j`` is an estimated parent of ``i`` the estimate
    implies no effect, which is wrong exactly when ``j`` descends from
    ``i`` in the truth.
    """
    g_true, g_est = _as_dag(g_true), _as_dag(g_est)
    _same_d(g_true, g_est)
    errors = 0
    for i in range(g_true.d):
        pa = g_est.parents(i)
        de = g_true.descendants(i)
        for j in range(g_true.d):
            if j == i:
                continue
            if j in pa:
                errors += j in de
            elif not _valid_adjustment(g_true, i, j, pa):
                errors += 1
    return errors


def expand_dag_body(g: Dag, truncation: int = DEFAULT_TRUNCATION) -> UHypergraph:
    """Bodies of all parent subsets: ``S | {j}`` for ``S`` within the parents of ``j``.

    Only sets with at most ``truncation`` vertices are kept; see
    :func:`expansion_truncated`.
    """
    if truncation < 2:
        raise ValueError("truncation must be at least 2")
    sets = set()
    for j in range(g.d):
        pa = sorted(g.parents(j))
        for k in range(1, min(len(pa), truncation - 1) + 1):
            for s in itertools.combinations(pa, k):
                sets.add(frozenset(s) | {j})
    return UHypergraph(g.d, frozenset(sets))


def expansion_truncated(g: Dag, truncation: int = DEFAULT_TRUNCATION) -> bool:
    return any(len(g.parents(j)) + 1 > truncation for j in range(g.d))


def _body_for(h: Dag | HDag, truncation: int) -> tuple[UHypergraph, bool]:
    if isinstance(h, Dag):
        return expand_dag_body(h, truncation), expansion_truncated(h, truncation)
    b = body(h)
    return b.restrict(truncation), any(len(s) > truncation for s in b)


def hoshd(h_true: Dag | HDag, h_est: Dag | HDag, truncation: int = DEFAULT_TRUNCATION) -> tuple[int, bool]:
    """Hamming distance between hypergraph bodies.

    Returns
    -------
    count : int
        Size of the symmetric difference of the two bodies, restricted to
        sets of at most ``truncation`` vertices.
    is_lower_bound : bool
        True if either side had larger sets that were left out.
    """
    _same_d(h_true, h_est)
    a, ta = _body_for(h_true, truncation)
    b, tb = _body_for(h_est, truncation)
    return len(a.sets ^ b.sets), ta or tb


REPORT_COLUMNS = ("dataset_id", "method", "shd", "sid", "hoshd", "hoshd_lb", "seed")


@dataclass(frozen=True)
class MetricsReport:
    """One evaluation row."""

    dataset_id: str
    method: str
    shd: int
    sid: int
    hoshd: int
    hoshd_lb: bool
    seed: int
    truncation_order: int = DEFAULT_TRUNCATION
    config_hash: str = ""

    def __post_init__(self):
        if self.shd < 0 or self.sid < 0 or self.hoshd < 0:
            raise ValueError("distances are non-negative")

    def csv_row(self) -> str:
        buf = io.StringIO()
        row = asdict(self)
        row["hoshd_lb"] = int(self.hoshd_lb)
        csv.writer(buf, lineterminator="\n").writerow([row[c] for c in REPORT_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_row(cls, row: dict) -> "MetricsReport":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in row.items() if k in known}
        for k in ("shd", "sid", "hoshd", "seed", "truncation_order"):
            if k in kw:
                kw[k] = int(kw[k])
        kw["hoshd_lb"] = str(kw.get("hoshd_lb", "0")).strip().lower() in ("1", "true")
        return cls(**kw)


def evaluate(h_true: HDag, h_est: Dag | HDag, dataset_id: str = "", method: str = "",
             seed: int = 0, truncation: int = DEFAULT_TRUNCATION, config_hash: str = "") -> MetricsReport:
    """All three distances for one estimate.

    Pass a :class:`Dag` as ``h_est`` to have it scored under the all-subsets
    reading of its parent sets.
    """
    count, lb = hoshd(h_true, h_est, truncation)
    return MetricsReport(dataset_id, method, shd(h_true, h_est), sid(h_true, h_est),
                         count, lb, seed, truncation, config_hash)
