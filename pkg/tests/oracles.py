"""Brute-force reference computations for the test suite.

Everything here works by enumerating full assignments with ``itertools``;
none of it goes through the package's kernel algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations, permutations, product

import numpy as np

from pdsem.graph import Kind, MixedGraph
from pdsem.kernel import TabularKernel


@dataclass(frozen=True)
class CPTModel:
    """Discrete DAG model: ``tables[v]`` has shape ``(*parent cards, card)``."""

    order: tuple[str, ...]
    cards: dict
    parents: dict
    tables: dict
    hidden: frozenset = frozenset()

    def graph(self) -> MixedGraph:
        return MixedGraph(
            random=[v for v in self.order if v not in self.hidden],
            hidden=[v for v in self.order if v in self.hidden],
            directed=[(p, v) for v in self.order for p in self.parents[v]],
        )

    @property
    def observed(self) -> tuple[str, ...]:
        return tuple(v for v in self.order if v not in self.hidden)

    def intervene(self, treatments: dict) -> "CPTModel":
        """Replace each treated mechanism by a point mass (parents cut)."""
        parents, tables = dict(self.parents), dict(self.tables)
        for v, x in treatments.items():
            t = np.zeros(self.cards[v])
            t[x] = 1.0
            parents[v] = ()
            tables[v] = t
        return replace(self, parents=parents, tables=tables)

    def prob(self, assign: dict) -> float:
        p = 1.0
        for v in self.order:
            idx = tuple(assign[u] for u in self.parents[v]) + (assign[v],)
            p *= float(self.tables[v][idx])
        return p

    def assignments(self):
        for vals in product(*(range(self.cards[v]) for v in self.order)):
            yield dict(zip(self.order, vals))

    def joint(self, names) -> np.ndarray:
        """``p(names)`` as an array with one axis per name."""
        names = tuple(names)
        out = np.zeros([self.cards[n] for n in names])
        for a in self.assignments():
            out[tuple(a[n] for n in names)] += self.prob(a)
        return out

    def conditional(self, outcomes, given) -> np.ndarray:
        """``p(outcomes | given)`` with ``given`` axes first."""
        given, outcomes = tuple(given), tuple(outcomes)
        j = self.joint(given + outcomes)
        den = j.sum(axis=tuple(range(len(given), j.ndim)), keepdims=True)
        return j / den

    def observed_kernel(self) -> TabularKernel:
        obs = self.observed
        return TabularKernel([(v, self.cards[v]) for v in obs], (), self.joint(obs))

    def full_kernel(self) -> TabularKernel:
        return TabularKernel([(v, self.cards[v]) for v in self.order], (), self.joint(self.order))

    def cpt(self, v: str) -> TabularKernel:
        ps = self.parents[v]
        return TabularKernel([(v, self.cards[v])], [(p, self.cards[p]) for p in ps], self.tables[v])


def dirichlet_table(rng, shape, card, floor=0.02):
    t = rng.dirichlet(np.ones(card), size=int(np.prod(shape, dtype=int)))
    t = (t + floor) / (1 + floor * card)
    return t.reshape(tuple(shape) + (card,))


def random_model(rng, order, parents, hidden=(), card=2, floor=0.02) -> CPTModel:
    cards = {v: card for v in order} if isinstance(card, int) else dict(card)
    parents = {v: tuple(parents.get(v, ())) for v in order}
    tables = {v: dirichlet_table(rng, [cards[p] for p in parents[v]], cards[v], floor) for v in order}
    return CPTModel(tuple(order), cards, parents, tables, frozenset(hidden))


def random_hidden_dag(rng, n_obs, n_hidden, p_edge=0.5, card=2) -> CPTModel:
    """Hidden roots ``H*`` over an ordered chain of observed ``V*``.

    Each hidden vertex gets at least two observed children so that it
    matters after projection.
    """
    obs = [f"V{i}" for i in range(n_obs)]
    hid = [f"H{i}" for i in range(n_hidden)]
    parents = {v: [] for v in hid + obs}
    for i, j in combinations(range(n_obs), 2):
        if rng.random() < p_edge:
            parents[obs[j]].append(obs[i])
    for h in hid:
        k = min(n_obs, 2 + int(rng.integers(0, max(1, n_obs - 1))))
        for c in rng.choice(obs, size=k, replace=False):
            parents[str(c)].append(h)
    return random_model(rng, hid + obs, parents, hidden=hid, card=card)


def as_array(k: TabularKernel, names) -> np.ndarray:
    """Table of ``k`` with axes in the given variable order."""
    names = tuple(names)
    pos = {n: i for i, n in enumerate(k.names)}
    return np.transpose(k.table, [pos[n] for n in names])


# -- graph oracles -------------------------------------------------------------


def all_paths(g: MixedGraph, a: str, b: str):
    """Simple paths between ``a`` and ``b`` as lists of edges.

    Each edge is ``("->", x, y)`` or ``("<->", x, y)`` in traversal order.
    """
    adj = {v: [] for v in g.vertices}
    for x, y in g.directed:
        adj[x].append((y, ("->", x, y)))
        adj[y].append((x, ("->", x, y)))
    for e in g.bidirected:
        x, y = sorted(e)
        adj[x].append((y, ("<->", x, y)))
        adj[y].append((x, ("<->", x, y)))

    def walk(v, seen, edges):
        if v == b:
            yield list(edges)
            return
        for w, e in adj[v]:
            if w not in seen:
                yield from walk(w, seen | {w}, edges + [e])

    yield from walk(a, {a}, [])


def _arrow_at(edge, v) -> bool:
    kind, x, y = edge
    return kind == "<->" or y == v


def _inner(path, a):
    """Vertices visited strictly between the endpoints."""
    out, v = [], a
    for _, x, y in path:
        v = y if x == v else x
        out.append(v)
    return out[:-1]


def _directed_forward(path, a) -> bool:
    v = a
    for kind, x, y in path:
        if kind != "->" or x != v:
            return False
        v = y
    return True


def _no_colliders(path, a) -> bool:
    v = a
    for e1, e2 in zip(path, path[1:]):
        v = e1[2] if e1[1] == v else e1[1]
        if _arrow_at(e1, v) and _arrow_at(e2, v):
            return False
    return True


def projection_by_paths(g: MixedGraph) -> tuple[set, set]:
    """Latent projection edges by path enumeration (textbook definition)."""
    keep = sorted(v for v in g.vertices if g.kind(v) is not Kind.HIDDEN)
    directed, bidirected = set(), set()
    for a in keep:
        for b in keep:
            if a == b:
                continue
            for path in all_paths(g, a, b):
                if any(g.kind(u) is not Kind.HIDDEN for u in _inner(path, a)):
                    continue
                if _directed_forward(path, a):
                    directed.add((a, b))
                if _arrow_at(path[0], a) and _arrow_at(path[-1], b) and _no_colliders(path, a):
                    bidirected.add(frozenset((a, b)))
    return directed, bidirected


def fixable_by_definition(g: MixedGraph, v: str) -> bool:
    """No other vertex both reachable by a directed path and by a bidirected path."""
    down = {v}
    stack = [v]
    while stack:
        for c in g.children(stack.pop()):
            if c not in down and g.kind(c) is not Kind.FIXED:
                down.add(c)
                stack.append(c)
    side = {v}
    stack = [v]
    while stack:
        for s in g.siblings(stack.pop()):
            if s not in side and g.kind(s) is not Kind.FIXED:
                side.add(s)
                stack.append(s)
    return (down & side) == {v}


def valid_orders(g: MixedGraph, targets):
    """Every valid fixing order for the vertex set ``targets``."""
    targets = sorted(targets)

    def rec(h, left, seq):
        if not left:
            yield list(seq)
            return
        for v in left:
            if fixable_by_definition(h, v):
                yield from rec(h.without_incoming([v]).with_kind(v, Kind.FIXED), [u for u in left if u != v], seq + [v])

    yield from rec(g, targets, [])


def union_find_districts(g: MixedGraph) -> set:
    parent = {v: v for v in g.vertices if g.kind(v) is not Kind.FIXED}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in g.bidirected:
        a, b = sorted(e)
        parent[find(a)] = find(b)
    groups = {}
    for v in parent:
        groups.setdefault(find(v), set()).add(v)
    return {frozenset(s) for s in groups.values()}


# -- exhaustive graph enumeration ---------------------------------------------------


def canonical_admgs(n: int, max_bidirected: int = 2):
    """One representative per isomorphism class of ADMGs on ``n`` vertices.

    Every ADMG has a topological order, so it is isomorphic to one whose
    directed edges all point from a lower to a higher index. Each candidate
    is encoded under every vertex permutation and the smallest code is kept.
    Yields ``(directed, bidirected)`` lists of index pairs.
    """
    pairs = list(combinations(range(n), 2))
    if not pairs:
        yield [], []
        return
    slot = {p: i for i, p in enumerate((a, b) for a in range(n) for b in range(n) if a != b)}
    pslot = {p: i for i, p in enumerate(pairs)}
    perms = list(permutations(range(n)))
    masks = np.arange(1 << len(pairs))
    dbits = (masks[:, None] >> np.arange(len(pairs))) & 1
    dweight = np.array([[1 << slot[(p[a], p[b])] for a, b in pairs] for p in perms], dtype=np.int64)
    dcode = dbits @ dweight.T
    bsets = [c for k in range(max_bidirected + 1) for c in combinations(range(len(pairs)), k)]
    bcode = np.array(
        [[sum(1 << pslot[tuple(sorted((p[pairs[i][0]], p[pairs[i][1]])))] for i in c) for p in perms] for c in bsets],
        dtype=np.int64,
    )
    key = (dcode[:, None, :] << len(pairs)) + bcode[None, :, :]
    _, first = np.unique(key.min(axis=2).ravel(), return_index=True)
    for f in first:
        m, b = divmod(int(f), len(bsets))
        yield [pairs[i] for i in range(len(pairs)) if (m >> i) & 1], [pairs[i] for i in bsets[b]]


def batched_hidden_joint(rng, names, directed, bidirected, batch, floor=0.02) -> np.ndarray:
    """``batch`` random binary models with one hidden parent per bidirected edge.

    Returns the observed joints stacked on a leading axis, shape
    ``(batch, 2, ..., 2)``.
    """
    hidden = [f"_H{i}" for i in range(len(bidirected))]
    parents = {v: [a for a, b in directed if b == v] for v in names}
    for h, (a, b) in zip(hidden, bidirected):
        parents[a].append(h)
        parents[b].append(h)
    order = hidden + list(names)
    letter = {v: chr(ord("b") + i) for i, v in enumerate(order)}
    ops, subs = [], []
    for v in order:
        ps = parents.get(v, [])
        t = dirichlet_table(rng, [batch] + [2] * len(ps), 2, floor)
        ops.append(t)
        subs.append("a" + "".join(letter[p] for p in ps) + letter[v])
    out = "a" + "".join(letter[v] for v in names)
    return np.einsum(",".join(subs) + "->" + out, *ops)
