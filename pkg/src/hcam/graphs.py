"""Directed graphs, directed acyclic hypergraphs and their structural transforms.

Vertices are dense 0-based integers. A directed hyperedge ``(tail, head)``
carries a set of parent vertices into a single child; hyperedge tails are
stored as sorted tuples so that equal sets compare and hash identically.

The text format shared by every graph type is::

    d=4
    2 <- 0
    3 <- 0,1

one hyperedge per line after the ``d=`` header. A DAG is the special case
where every tail is a singleton.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .exceptions import CyclicStructure, DimensionMismatch, ParseError

__all__ = [
    "Hyperedge",
    "HDag",
    "Dag",
    "UHypergraph",
    "AncestorMatrix",
    "body",
    "reduced_dag",
    "immoralize",
    "moralize",
    "skeleton",
    "hierarchical_closure",
    "unshielded_multicolliders",
    "hmec_equal",
    "hmec_key",
    "would_create_cycle",
    "add_edge_update",
    "format_hdag",
    "parse_hdag",
    "read_hdag",
    "write_hdag",
]


@dataclass(frozen=True)
class Hyperedge:
    """Directed hyperedge from the vertex set ``tail`` into ``head``."""

    tail: tuple[int, ...]
    head: int

    def __post_init__(self):
        tail = tuple(sorted({int(v) for v in self.tail}))
        object.__setattr__(self, "tail", tail)
        object.__setattr__(self, "head", int(self.head))
        if not tail:
            raise ValueError("hyperedge tails must be nonempty")
        if self.head in tail:
            raise ValueError(f"head {self.head} appears in its own tail {tail}")

    @property
    def order(self) -> int:
        return len(self.tail)

    def sort_key(self):
        return (self.head, len(self.tail), self.tail)

    def __lt__(self, other: "Hyperedge"):
        return self.sort_key() < other.sort_key()

    def __repr__(self):
        return f"Hyperedge({set(self.tail)!r} -> {self.head})"


def _topological_order(d: int, parents: list[set[int]]) -> list[int] | None:
    indeg = [len(p) for p in parents]
    children: list[list[int]] = [[] for _ in range(d)]
    for j, pa in enumerate(parents):
        for k in pa:
            children[k].append(j)
    ready = [v for v in range(d) if indeg[v] == 0]
    order = []
    while ready:
        # smallest ready vertex first so the order is canonical
        ready.sort(reverse=True)
        v = ready.pop()
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    return order if len(order) == d else None


def _check_vertices(d: int, vertices: Iterable[int]):
    for v in vertices:
        if not 0 <= v < d:
            raise ValueError(f"vertex {v} out of range for d={d}")


class Dag:
    """Directed acyclic graph on ``d`` vertices with edges ``(k, j)`` meaning k -> j."""

    __slots__ = ("d", "edges", "_parents", "_order")

    def __init__(self, d: int, edges: Iterable[tuple[int, int]] = ()):
        self.d = int(d)
        edges = frozenset((int(k), int(j)) for k, j in edges)
        parents: list[set[int]] = [set() for _ in range(self.d)]
        for k, j in edges:
            _check_vertices(self.d, (k, j))
            if k == j:
                raise CyclicStructure(f"self-loop on vertex {k}")
            parents[j].add(k)
        order = _topological_order(self.d, parents)
        if order is None:
            raise CyclicStructure("edge set contains a directed cycle")
        self.edges = edges
        self._parents = tuple(frozenset(p) for p in parents)
        self._order = tuple(order)

    def parents(self, j: int) -> frozenset[int]:
        return self._parents[j]

    def children(self, k: int) -> frozenset[int]:
        return frozenset(j for (a, j) in self.edges if a == k)

    def topological_order(self) -> tuple[int, ...]:
        return self._order

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.d, self.d), dtype=bool)
        for k, j in self.edges:
            A[k, j] = True
        return A

    def descendants(self, k: int) -> frozenset[int]:
        """Vertices reachable from ``k`` by a nonempty directed path."""
        anc = AncestorMatrix.from_dag(self)
        return frozenset(np.flatnonzero(anc.reach[k]).tolist())

    def to_hdag(self) -> "HDag":
        return HDag(self.d, [Hyperedge((k,), j) for k, j in self.edges])

    def __eq__(self, other):
        return isinstance(other, Dag) and self.d == other.d and self.edges == other.edges

    def __hash__(self):
        return hash((self.d, self.edges))

    def __repr__(self):
        return f"Dag(d={self.d}, edges={sorted(self.edges)})"


class HDag:
    """Hierarchical directed acyclic hypergraph.

    Parameters
    ----------
    d : int
        Number of vertices.
    edges : iterable of Hyperedge
        Must already be hierarchical: every nonempty subset of a tail is also
        a tail into the same head. Use :func:`hierarchical_closure` to build
        an HDag from an arbitrary hyperedge set.
    """

    __slots__ = ("d", "edges", "_hyperparents", "_parents", "_order")

    def __init__(self, d: int, edges: Iterable[Hyperedge] = ()):
        self.d = int(d)
        edges = frozenset(edges)
        hyper: list[set[tuple[int, ...]]] = [set() for _ in range(self.d)]
        for e in edges:
            _check_vertices(self.d, e.tail + (e.head,))
            hyper[e.head].add(e.tail)
        for j, tails in enumerate(hyper):
            for t in tails:
                for sub in _proper_subsets(t):
                    if sub not in tails:
                        raise ValueError(
                            f"not hierarchical: {t}->{j} present but {sub}->{j} missing"
                        )
        parents = [set(itertools.chain.from_iterable(t)) for t in hyper]
        order = _topological_order(self.d, parents)
        if order is None:
            raise CyclicStructure("reduced DAG of the hypergraph is cyclic")
        self.edges = edges
        self._hyperparents = tuple(frozenset(t) for t in hyper)
        self._parents = tuple(frozenset(p) for p in parents)
        self._order = tuple(order)

    def hyperparents(self, j: int) -> frozenset[tuple[int, ...]]:
        return self._hyperparents[j]

    def parents(self, j: int) -> frozenset[int]:
        return self._parents[j]

    def topological_order(self) -> tuple[int, ...]:
        return self._order

    def maximal_tails(self, j: int) -> list[tuple[int, ...]]:
        tails = self._hyperparents[j]
        out = [
            t for t in tails
            if not any(len(u) > len(t) and set(t) <= set(u) for u in tails)
        ]
        return sorted(out, key=lambda t: (len(t), t))

    def maximal_edges(self) -> list[Hyperedge]:
        return [Hyperedge(t, j) for j in range(self.d) for t in self.maximal_tails(j)]

    def sorted_edges(self) -> list[Hyperedge]:
        return sorted(self.edges)

    @property
    def max_order(self) -> int:
        return max((e.order for e in self.edges), default=0)

    def is_singleton_only(self) -> bool:
        return all(e.order == 1 for e in self.edges)

    def __eq__(self, other):
        return isinstance(other, HDag) and self.d == other.d and self.edges == other.edges

    def __hash__(self):
        return hash((self.d, self.edges))

    def __repr__(self):
        return f"HDag(d={self.d}, maximal={self.maximal_edges()})"


@dataclass(frozen=True)
class UHypergraph:
    """Undirected hypergraph: a deduplicated family of vertex sets of size >= 2."""

    d: int
    sets: frozenset

    def __post_init__(self):
        sets = frozenset(frozenset(int(v) for v in s) for s in self.sets)
        for s in sets:
            if len(s) < 2:
                raise ValueError(f"undirected hyperedges need >= 2 vertices, got {set(s)}")
            _check_vertices(self.d, s)
        object.__setattr__(self, "sets", sets)

    def restrict(self, max_size: int) -> "UHypergraph":
        return UHypergraph(self.d, frozenset(s for s in self.sets if len(s) <= max_size))

    def sorted_sets(self) -> list[tuple[int, ...]]:
        return sorted((tuple(sorted(s)) for s in self.sets), key=lambda t: (len(t), t))

    def __contains__(self, item):
        return frozenset(item) in self.sets

    def __len__(self):
        return len(self.sets)

    def __iter__(self) -> Iterator[frozenset]:
        return iter(self.sets)

    def __or__(self, other: "UHypergraph") -> "UHypergraph":
        if self.d != other.d:
            raise DimensionMismatch(f"{self.d} != {other.d}")
        return UHypergraph(self.d, self.sets | other.sets)


def _proper_subsets(t: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
    for r in range(1, len(t)):
        yield from itertools.combinations(t, r)


def _nonempty_subsets(t, min_size=1, max_size=None):
    t = tuple(sorted(t))
    max_size = len(t) if max_size is None else min(max_size, len(t))
    for r in range(min_size, max_size + 1):
        yield from itertools.combinations(t, r)


# ---------------------------------------------------------------- transforms


def body(h: HDag) -> UHypergraph:
    """Drop orientation: ``{tail | {head}}`` for each hyperedge."""
    return UHypergraph(h.d, frozenset(frozenset(e.tail + (e.head,)) for e in h.edges))


def reduced_dag(h: HDag) -> Dag:
    """DAG whose parent sets are the unions of each vertex's hyperparents."""
    return Dag(h.d, [(k, j) for j in range(h.d) for k in h.parents(j)])


def skeleton(g: Dag) -> UHypergraph:
    return UHypergraph(g.d, frozenset(frozenset(e) for e in g.edges))


def moralize(g: Dag) -> UHypergraph:
    sets = set(skeleton(g).sets)
    for j in range(g.d):
        for a, b in itertools.combinations(sorted(g.parents(j)), 2):
            sets.add(frozenset((a, b)))
    return UHypergraph(g.d, frozenset(sets))


def immoralize(h: HDag) -> UHypergraph:
    """Body plus every coparent set of size >= 2 of a common child."""
    sets = set(body(h).sets)
    for j in range(h.d):
        for s in _nonempty_subsets(h.parents(j), min_size=2):
            sets.add(frozenset(s))
    return UHypergraph(h.d, frozenset(sets))


def hierarchical_closure(raw: Iterable[Hyperedge], d: int) -> HDag:
    """Smallest hierarchical hyperedge set containing ``raw``.

    Raises
    ------
    CyclicStructure
        If the closure's reduced DAG has a directed cycle.
    """
    closed = set()
    for e in raw:
        for sub in _nonempty_subsets(e.tail):
            closed.add(Hyperedge(sub, e.head))
    return HDag(d, closed)


def unshielded_multicolliders(h: HDag, max_order: int | None = 4) -> frozenset:
    """All ``(S, j)`` with ``S`` a set of >= 2 parents of ``j`` not jointly connected.

    ``S`` is unshielded when ``(S - {t}, t)`` is not a hyperedge for any
    ``t`` in ``S``. ``(S, j)`` itself need not be a hyperedge. Tails are
    enumerated up to ``max_order`` vertices (``None`` for no cap).

    Returns
    -------
    frozenset of (tuple, int)
    """
    cap = h.d - 1 if max_order is None else min(max_order, h.d - 1)
    out = set()
    for j in range(h.d):
        for s in _nonempty_subsets(h.parents(j), min_size=2, max_size=cap):
            shielded = False
            for t in s:
                rest = tuple(v for v in s if v != t)
                if rest in h.hyperparents(t):
                    shielded = True
                    break
            if not shielded:
                out.add((s, j))
    return frozenset(out)


def hmec_key(h: HDag, max_order: int | None = 4):
    """Hashable invariant shared exactly by hyper-Markov-equivalent HDags."""
    return (h.d, body(h).sets, unshielded_multicolliders(h, max_order))


def hmec_equal(h1: HDag, h2: HDag, max_order: int | None = 4) -> bool:
    """Same body and same unshielded multicolliders."""
    if h1.d != h2.d:
        raise DimensionMismatch(f"d={h1.d} vs d={h2.d}")
    return hmec_key(h1, max_order) == hmec_key(h2, max_order)


# ---------------------------------------------------------------- reachability


class AncestorMatrix:
    """Boolean reachability table: ``reach[i, j]`` iff a path i -> ... -> j exists."""

    __slots__ = ("reach",)

    def __init__(self, reach: np.ndarray):
        reach = np.array(reach, dtype=bool)
        reach.setflags(write=False)
        self.reach = reach

    @classmethod
    def empty(cls, d: int) -> "AncestorMatrix":
        return cls(np.zeros((d, d), dtype=bool))

    @classmethod
    def from_dag(cls, g: Dag) -> "AncestorMatrix":
        R = g.adjacency()
        # Warshall closure
        for k in range(g.d):
            R = R | (R[:, [k]] & R[[k], :])
        return cls(R)

    @property
    def d(self) -> int:
        return self.reach.shape[0]

    def would_create_cycle(self, edge: tuple[int, int]) -> bool:
        return would_create_cycle(self, edge)

    def with_edge(self, edge: tuple[int, int]) -> "AncestorMatrix":
        return add_edge_update(self, edge)


def would_create_cycle(anc: AncestorMatrix, new_edge: tuple[int, int]) -> bool:
    k, j = new_edge
    return k == j or bool(anc.reach[j, k])


def add_edge_update(anc: AncestorMatrix, new_edge: tuple[int, int]) -> AncestorMatrix:
    """Reachability after adding ``k -> j`` (caller guarantees acyclicity)."""
    k, j = new_edge
    if would_create_cycle(anc, new_edge):
        raise CyclicStructure(f"adding {k}->{j} closes a cycle")
    R = anc.reach.copy()
    src = R[:, k].copy()
    src[k] = True
    dst = R[j, :].copy()
    dst[j] = True
    R |= np.outer(src, dst)
    return AncestorMatrix(R)


# ---------------------------------------------------------------- text format


def format_hdag(h: HDag | Dag) -> str:
    if isinstance(h, Dag):
        h = h.to_hdag()
    lines = [f"d={h.d}"]
    for e in h.sorted_edges():
        lines.append(f"{e.head} <- {','.join(map(str, e.tail))}")
    return "\n".join(lines) + "\n"


def parse_hdag(text: str) -> HDag:
    """Parse the line format; missing subsets of listed tails are closed over."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("d="):
        raise ParseError("graph text must start with a 'd=<n>' header")
    try:
        d = int(lines[0][2:])
    except ValueError as exc:
        raise ParseError(f"bad header {lines[0]!r}") from exc
    raw = []
    for ln in lines[1:]:
        head, sep, tail = ln.partition("<-")
        if not sep:
            raise ParseError(f"expected 'j <- i1,i2,...', got {ln!r}")
        try:
            raw.append(Hyperedge(tuple(int(v) for v in tail.split(",")), int(head)))
        except ValueError as exc:
            raise ParseError(f"bad hyperedge line {ln!r}: {exc}") from exc
    try:
        return hierarchical_closure(raw, d)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def write_hdag(path, h: HDag | Dag):
    with open(path, "w", newline="\n") as fh:
        fh.write(format_hdag(h))


def read_hdag(path) -> HDag:
    with open(path) as fh:
        return parse_hdag(fh.read())
