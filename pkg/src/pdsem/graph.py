"""Mixed graphs over random, fixed and hidden vertices.

A :class:`MixedGraph` covers DAGs, CDAGs, ADMGs and CADMGs: directed edges,
bidirected edges, and vertices that are random, fixed (square nodes, never
receive arrowheads) or hidden. Graphs are immutable; every operation returns
a new graph.

Genealogical sets include the vertex itself. Context vertices of a transition
slice are named ``prev.<X>`` and bind to vertex ``X`` of the preceding slice.
"""

from __future__ import annotations

import enum
import heapq
from collections.abc import Iterable, Mapping, Sequence
from itertools import combinations

__all__ = [
    "PREV",
    "Kind",
    "GraphError",
    "NotFixableError",
    "MixedGraph",
    "relatives",
    "districts",
    "markov_blanket",
    "latent_project",
    "is_fixable",
    "fixability_witness",
    "fix_vertex",
    "fix_set",
    "reachable",
    "reachable_closure",
    "is_intrinsic",
    "intrinsic_sets",
    "context_binding",
    "slice_name",
    "unroll",
]

PREV = "prev."
INTRINSIC_LIMIT = 16


class Kind(enum.Enum):
    RANDOM = "random"
    FIXED = "fixed"
    HIDDEN = "hidden"


class GraphError(ValueError):
    """Raised for malformed graphs or invalid graph operations."""


class NotFixableError(GraphError):
    """Raised when fixing a vertex whose district meets its descendants."""

    def __init__(self, vertex: str, witness: str):
        self.vertex = vertex
        self.witness = witness
        super().__init__(
            f"{vertex} is not fixable: {witness} is both a descendant and in the district of {vertex}"
        )


def _as_set(vs: str | Iterable[str]) -> frozenset[str]:
    if isinstance(vs, str):
        return frozenset((vs,))
    return frozenset(vs)


class MixedGraph:
    """Acyclic mixed graph with typed vertices.

    Parameters
    ----------
    random, fixed, hidden
        Vertex names by kind. A name may appear in only one of them.
    directed
        Pairs ``(a, b)`` for edges ``a -> b``.
    bidirected
        Pairs ``(a, b)`` for edges ``a <-> b``; orientation is irrelevant.
    """

    __slots__ = ("_kinds", "_directed", "_bidirected", "_pa", "_ch", "_sib", "_cache")

    def __init__(
        self,
        random: Iterable[str] = (),
        directed: Iterable[tuple[str, str]] = (),
        bidirected: Iterable[tuple[str, str]] = (),
        fixed: Iterable[str] = (),
        hidden: Iterable[str] = (),
    ):
        kinds: dict[str, Kind] = {}
        for names, kind in ((random, Kind.RANDOM), (fixed, Kind.FIXED), (hidden, Kind.HIDDEN)):
            if isinstance(names, str):
                raise GraphError(f"vertex collections must be iterables of names, got string {names!r}")
            for v in names:
                if not isinstance(v, str) or not v:
                    raise GraphError(f"vertex names must be non-empty strings, got {v!r}")
                if v in kinds:
                    raise GraphError(f"vertex {v} declared twice")
                kinds[v] = kind

        pa: dict[str, set[str]] = {v: set() for v in kinds}
        ch: dict[str, set[str]] = {v: set() for v in kinds}
        sib: dict[str, set[str]] = {v: set() for v in kinds}
        dir_edges: set[tuple[str, str]] = set()
        for a, b in directed:
            self._check_endpoints(kinds, a, b, "->")
            if kinds[b] is Kind.FIXED:
                raise GraphError(f"edge {a} -> {b} points into fixed vertex {b}")
            if (a, b) in dir_edges:
                raise GraphError(f"duplicate edge {a} -> {b}")
            dir_edges.add((a, b))
            pa[b].add(a)
            ch[a].add(b)
        bi_edges: set[frozenset[str]] = set()
        for a, b in bidirected:
            self._check_endpoints(kinds, a, b, "<->")
            for x in (a, b):
                if kinds[x] is Kind.FIXED:
                    raise GraphError(f"bidirected edge {a} <-> {b} touches fixed vertex {x}")
            e = frozenset((a, b))
            if e in bi_edges:
                raise GraphError(f"duplicate edge {a} <-> {b}")
            bi_edges.add(e)
            sib[a].add(b)
            sib[b].add(a)

        self._kinds = kinds
        self._directed = frozenset(dir_edges)
        self._bidirected = frozenset(bi_edges)
        self._pa = {v: frozenset(s) for v, s in pa.items()}
        self._ch = {v: frozenset(s) for v, s in ch.items()}
        self._sib = {v: frozenset(s) for v, s in sib.items()}
        self._cache: dict = {}
        self._cache["topo"] = self._toposort()

    @staticmethod
    def _check_endpoints(kinds, a, b, arrow):
        for x in (a, b):
            if x not in kinds:
                raise GraphError(f"edge {a} {arrow} {b} references undeclared vertex {x}")
        if a == b:
            raise GraphError(f"self-loop {a} {arrow} {a}")

    def _toposort(self) -> tuple[str, ...]:
        indeg = {v: len(p) for v, p in self._pa.items()}
        heap = [v for v, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            v = heapq.heappop(heap)
            order.append(v)
            for c in self._ch[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, c)
        if len(order) != len(self._kinds):
            cyc = sorted(v for v, d in indeg.items() if d > 0)
            raise GraphError(f"directed cycle among {cyc}")
        return tuple(order)

    # -- basic accessors -------------------------------------------------

    @property
    def vertices(self) -> frozenset[str]:
        return frozenset(self._kinds)

    @property
    def kinds(self) -> Mapping[str, Kind]:
        return dict(self._kinds)

    def kind(self, v: str) -> Kind:
        try:
            return self._kinds[v]
        except KeyError:
            raise GraphError(f"unknown vertex {v}") from None

    def _of_kind(self, kind: Kind) -> frozenset[str]:
        key = ("kind", kind)
        if key not in self._cache:
            self._cache[key] = frozenset(v for v, k in self._kinds.items() if k is kind)
        return self._cache[key]

    @property
    def random(self) -> frozenset[str]:
        return self._of_kind(Kind.RANDOM)

    @property
    def fixed(self) -> frozenset[str]:
        return self._of_kind(Kind.FIXED)

    @property
    def hidden(self) -> frozenset[str]:
        return self._of_kind(Kind.HIDDEN)

    @property
    def directed(self) -> frozenset[tuple[str, str]]:
        return self._directed

    @property
    def bidirected(self) -> frozenset[frozenset[str]]:
        return self._bidirected

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self._directed

    def has_bidirected(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self._bidirected

    def topological_order(self) -> tuple[str, ...]:
        """Kahn order with lexicographic tie-breaking."""
        return self._cache["topo"]

    def __contains__(self, v: object) -> bool:
        return v in self._kinds

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MixedGraph):
            return NotImplemented
        return (
            self._kinds == other._kinds
            and self._directed == other._directed
            and self._bidirected == other._bidirected
        )

    def __hash__(self) -> int:
        return hash((frozenset(self._kinds.items()), self._directed, self._bidirected))

    def __repr__(self) -> str:
        parts = []
        for kind in Kind:
            vs = sorted(self._of_kind(kind))
            if vs:
                parts.append(f"{kind.value}={vs}")
        if self._directed:
            parts.append("directed=" + str(sorted(self._directed)))
        if self._bidirected:
            parts.append("bidirected=" + str(sorted(tuple(sorted(e)) for e in self._bidirected)))
        return f"MixedGraph({', '.join(parts)})"

    # -- genealogy -------------------------------------------------------

    def parents(self, v: str) -> frozenset[str]:
        self.kind(v)
        return self._pa[v]

    def children(self, v: str) -> frozenset[str]:
        self.kind(v)
        return self._ch[v]

    def siblings(self, v: str) -> frozenset[str]:
        self.kind(v)
        return self._sib[v]

    def _closure(self, start: frozenset[str], step: Mapping[str, frozenset[str]]) -> frozenset[str]:
        for v in start:
            self.kind(v)
        seen = set(start)
        stack = list(start)
        while stack:
            for w in step[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return frozenset(seen)

    def ancestors(self, vs: str | Iterable[str]) -> frozenset[str]:
        return self._closure(_as_set(vs), self._pa)

    def descendants(self, vs: str | Iterable[str]) -> frozenset[str]:
        return self._closure(_as_set(vs), self._ch)

    def district(self, v: str) -> frozenset[str]:
        """Bidirected-connected component of ``v``; fixed vertices are alone."""
        if self.kind(v) is Kind.FIXED:
            return frozenset((v,))
        return self._closure(frozenset((v,)), self._sib)

    def districts(self) -> list[frozenset[str]]:
        if "districts" not in self._cache:
            seen: set[str] = set()
            out = []
            for v in sorted(self._kinds):
                if v in seen or self._kinds[v] is Kind.FIXED:
                    continue
                d = self.district(v)
                seen |= d
                out.append(d)
            self._cache["districts"] = out
        return list(self._cache["districts"])

    def parents_of_set(self, vs: Iterable[str]) -> frozenset[str]:
        """Strict parents ``pa(S) \\ S``."""
        s = _as_set(vs)
        out: set[str] = set()
        for v in s:
            out |= self.parents(v)
        return frozenset(out - s)

    # -- structural edits ------------------------------------------------

    def _rebuild(self, kinds: Mapping[str, Kind], directed, bidirected) -> "MixedGraph":
        by_kind = {k: [v for v, kk in kinds.items() if kk is k] for k in Kind}
        return MixedGraph(
            random=by_kind[Kind.RANDOM],
            fixed=by_kind[Kind.FIXED],
            hidden=by_kind[Kind.HIDDEN],
            directed=directed,
            bidirected=[tuple(e) for e in bidirected],
        )

    def subgraph(self, vs: Iterable[str]) -> "MixedGraph":
        """Induced subgraph; kinds are preserved."""
        keep = _as_set(vs)
        for v in keep:
            self.kind(v)
        return self._rebuild(
            {v: k for v, k in self._kinds.items() if v in keep},
            [(a, b) for a, b in self._directed if a in keep and b in keep],
            [e for e in self._bidirected if e <= keep],
        )

    def with_kind(self, v: str, kind: Kind) -> "MixedGraph":
        kinds = dict(self._kinds)
        self.kind(v)
        kinds[v] = kind
        return self._rebuild(kinds, self._directed, self._bidirected)

    def without_incoming(self, vs: Iterable[str]) -> "MixedGraph":
        """Drop directed edges into ``vs`` and bidirected edges touching ``vs``."""
        cut = _as_set(vs)
        return self._rebuild(
            self._kinds,
            [(a, b) for a, b in self._directed if b not in cut],
            [e for e in self._bidirected if not (e & cut)],
        )

    def renamed(self, mapping: Mapping[str, str]) -> "MixedGraph":
        f = lambda v: mapping.get(v, v)  # noqa: E731
        return self._rebuild(
            {f(v): k for v, k in self._kinds.items()},
            [(f(a), f(b)) for a, b in self._directed],
            [tuple(f(x) for x in e) for e in self._bidirected],
        )


# -- module-level operations ---------------------------------------------


def relatives(g: MixedGraph, v: str, kind: str) -> frozenset[str]:
    """Genealogical set of ``v``: one of parents, children, ancestors,
    descendants, siblings, district."""
    fn = {
        "parents": g.parents,
        "children": g.children,
        "ancestors": g.ancestors,
        "descendants": g.descendants,
        "siblings": g.siblings,
        "district": g.district,
    }.get(kind)
    if fn is None:
        raise ValueError(f"unknown relation {kind!r}")
    return fn(v)


def districts(g: MixedGraph) -> list[frozenset[str]]:
    """Partition of the non-fixed vertices into bidirected components."""
    return g.districts()


def markov_blanket(g: MixedGraph, v: str) -> frozenset[str]:
    """``(dis(v) | pa(dis(v))) - {v}`` for a random vertex."""
    if g.kind(v) is not Kind.RANDOM:
        raise GraphError(f"Markov blanket requested for non-random vertex {v}")
    d = g.district(v)
    out = set(d)
    for w in d:
        out |= g.parents(w)
    out.discard(v)
    return frozenset(out)


def latent_project(g: MixedGraph) -> MixedGraph:
    """Project out every hidden vertex.

    Hidden vertices are eliminated one at a time: parents of ``h`` gain
    edges to its children, pairs of its children become siblings, and
    siblings of ``h`` become siblings of its children.
    """
    kinds = dict(g.kinds)
    pa = {v: set(g.parents(v)) for v in kinds}
    ch = {v: set(g.children(v)) for v in kinds}
    sib = {v: set(g.siblings(v)) for v in kinds}
    for h in sorted(g.hidden):
        hp, hc, hs = pa.pop(h), ch.pop(h), sib.pop(h)
        for p in hp:
            ch[p].discard(h)
        for c in hc:
            pa[c].discard(h)
        for s in hs:
            sib[s].discard(h)
        for p in hp:
            for c in hc:
                ch[p].add(c)
                pa[c].add(p)
        for a, b in combinations(sorted(hc), 2):
            sib[a].add(b)
            sib[b].add(a)
        for s in hs:
            for c in hc:
                if s != c:
                    sib[s].add(c)
                    sib[c].add(s)
        del kinds[h]
    directed = [(a, b) for a in ch for b in ch[a]]
    bidirected = {frozenset((a, b)) for a in sib for b in sib[a]}
    return g._rebuild(kinds, directed, bidirected)


def fixability_witness(g: MixedGraph, v: str) -> str | None:
    """Smallest vertex other than ``v`` in ``de(v) & dis(v)``, or ``None``."""
    if g.kind(v) is not Kind.RANDOM:
        raise GraphError(f"only random vertices can be fixed, {v} is {g.kind(v).value}")
    clash = (g.descendants(v) & g.district(v)) - {v}
    return min(clash) if clash else None


def is_fixable(g: MixedGraph, v: str) -> bool:
    """True when no other descendant of ``v`` shares its district."""
    return fixability_witness(g, v) is None


def fix_vertex(g: MixedGraph, v: str) -> MixedGraph:
    """Mark ``v`` fixed and drop edges carrying arrowheads into it."""
    w = fixability_witness(g, v)
    if w is not None:
        raise NotFixableError(v, w)
    kinds = dict(g._kinds)
    kinds[v] = Kind.FIXED
    return g._rebuild(
        kinds,
        [(a, b) for a, b in g._directed if b != v],
        [e for e in g._bidirected if v not in e],
    )


def fix_set(g: MixedGraph, sequence: Sequence[str]) -> MixedGraph:
    for v in sequence:
        g = fix_vertex(g, v)
    return g


def reachable(g: MixedGraph, r: Iterable[str]) -> list[str] | None:
    """A valid fixing sequence for ``random(g) - r``, or ``None``.

    Fixing only deletes edges, so a vertex that is fixable stays fixable as
    other vertices are fixed. Greedy lexicographic fixing is therefore
    complete: it fails only when no valid sequence exists.
    """
    target = _as_set(r)
    for v in target:
        if g.kind(v) is not Kind.RANDOM:
            raise GraphError(f"{v} is not a random vertex")
    todo = set(g.random - target)
    seq: list[str] = []
    while todo:
        for v in sorted(todo):
            if is_fixable(g, v):
                g = fix_vertex(g, v)
                seq.append(v)
                todo.discard(v)
                break
        else:
            return None
    return seq


def reachable_closure(g: MixedGraph, s: Iterable[str]) -> frozenset[str]:
    """Smallest reachable set containing ``s``: fix everything outside it that can be fixed."""
    keep = _as_set(s)
    while True:
        v = next((v for v in sorted(g.random - keep) if is_fixable(g, v)), None)
        if v is None:
            return frozenset(g.random)
        g = fix_vertex(g, v)


def is_intrinsic(g: MixedGraph, s: Iterable[str]) -> bool:
    """Reachable and a single district once its complement is fixed."""
    s = _as_set(s)
    if not s:
        return False
    seq = reachable(g, s)
    if seq is None:
        return False
    return len(fix_set(g, seq).districts()) == 1


def _bidirected_connected(g: MixedGraph, s: frozenset[str]) -> bool:
    start = min(s)
    seen = {start}
    stack = [start]
    while stack:
        for w in g.siblings(stack.pop()):
            if w in s and w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(s)


def intrinsic_sets(g: MixedGraph, limit: int = INTRINSIC_LIMIT) -> list[frozenset[str]]:
    """All intrinsic sets, ordered by size then lexicographically."""
    rv = sorted(g.random)
    if len(rv) > limit:
        raise GraphError(f"intrinsic set enumeration is capped at {limit} random vertices, got {len(rv)}")
    out = []
    for k in range(1, len(rv) + 1):
        for combo in combinations(rv, k):
            s = frozenset(combo)
            if _bidirected_connected(g, s) and is_intrinsic(g, s):
                out.append(s)
    return out


# -- time slices -----------------------------------------------------------


def context_binding(g: MixedGraph) -> dict[str, str]:
    """Map each ``prev.X`` vertex of ``g`` to ``X``."""
    return {v: v[len(PREV):] for v in g.vertices if v.startswith(PREV)}


def slice_name(v: str, label: object) -> str:
    return f"{v}@{label}"


def unroll(
    prior: MixedGraph,
    transitions: Sequence[tuple[MixedGraph, Mapping[str, str]]] = (),
    labels: Sequence[object] | None = None,
) -> MixedGraph:
    """Chain a prior slice and transition slices into one graph.

    Each transition comes with a binding from its context vertices (fixed
    vertices, or hidden vertices standing for the previous slice) to vertex
    names of the preceding slice. Vertex ``v`` of slice ``t`` becomes
    ``v@label_t``.
    """
    n = 1 + len(transitions)
    labels = list(range(1, n + 1)) if labels is None else list(labels)
    if len(labels) != n:
        raise GraphError(f"expected {n} slice labels, got {len(labels)}")
    kinds: dict[str, Kind] = {}
    directed: list[tuple[str, str]] = []
    bidirected: list[tuple[str, str]] = []

    def add_slice(g: MixedGraph, label, binding: Mapping[str, str], prev_label, prev_names):
        ctx = set(binding)
        for c in g.fixed - ctx:
            raise GraphError(f"fixed vertex {c} of slice {label} is not bound to the previous slice")
        for c, target in binding.items():
            if c not in g:
                raise GraphError(f"binding names unknown vertex {c}")
            if g.kind(c) is Kind.RANDOM or g.parents(c) or g.siblings(c):
                raise GraphError(f"context vertex {c} must be a root without bidirected edges")
            if target not in prev_names:
                raise GraphError(f"context vertex {c} binds to {target}, absent from slice {prev_label}")

        def name(v):
            if v in ctx:
                return slice_name(binding[v], prev_label)
            return slice_name(v, label)

        for v, k in g.kinds.items():
            if v not in ctx:
                kinds[name(v)] = k
        directed.extend((name(a), name(b)) for a, b in g.directed)
        bidirected.extend(tuple(name(x) for x in sorted(e)) for e in g.bidirected)
        return {v for v in g.vertices if v not in ctx}

    names = add_slice(prior, labels[0], {}, None, set())
    for (g, binding), label, prev_label in zip(transitions, labels[1:], labels[:-1]):
        names = add_slice(g, label, binding, prev_label, names)
    by_kind = {k: [v for v, kk in kinds.items() if kk is k] for k in Kind}
    return MixedGraph(
        random=by_kind[Kind.RANDOM],
        fixed=by_kind[Kind.FIXED],
        hidden=by_kind[Kind.HIDDEN],
        directed=directed,
        bidirected=bidirected,
    )
