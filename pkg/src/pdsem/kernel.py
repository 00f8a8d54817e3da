"""Tabular kernels ``q(V | W)`` over discrete variables and the fixing operator.

A kernel stores one dense array whose leading axes index the context
variables ``W`` and whose trailing axes index the outcome variables ``V``.
Every context slice sums to one over the outcome axes.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .graph import (
    GraphError,
    Kind,
    MixedGraph,
    NotFixableError,
    fix_vertex,
    fixability_witness,
    latent_project,
    markov_blanket,
    reachable,
)

__all__ = [
    "VarSpec",
    "KernelError",
    "ZeroProbabilityError",
    "FixingSequenceError",
    "TabularKernel",
    "einsum_factors",
    "product_kernel",
    "marginalize",
    "condition",
    "fix_kernel",
    "fix_sequence",
    "reduce_context",
    "intrinsic_kernel",
    "district_factorize",
    "nested_factorization_residual",
    "nested_factorization_check",
    "random_cpt",
    "point_mass",
]

MAX_CELLS = 2**24
NORM_TOL = 1e-9
NESTED_CHECK_LIMIT = 6


class VarSpec(NamedTuple):
    name: str
    card: int


class KernelError(ValueError):
    pass


class ZeroProbabilityError(KernelError):
    """A conditional was requested at an assignment of probability zero."""

    def __init__(self, what: str, assignment: Mapping[str, int]):
        self.assignment = dict(assignment)
        desc = ", ".join(f"{k}={v}" for k, v in self.assignment.items()) or "(empty assignment)"
        super().__init__(f"zero probability while computing {what} at {desc}")


class FixingSequenceError(KernelError):
    def __init__(self, position: int, cause: Exception):
        self.position = position
        super().__init__(f"fixing sequence invalid at position {position}: {cause}")


def _specs(items: Iterable) -> tuple[VarSpec, ...]:
    out = []
    for it in items:
        name, card = (it.name, it.card) if isinstance(it, VarSpec) else it
        if int(card) < 1:
            raise KernelError(f"variable {name} needs a positive cardinality, got {card}")
        out.append(VarSpec(str(name), int(card)))
    return tuple(out)


class TabularKernel:
    """Normalized table ``q(outcomes | context)``.

    ``table`` may be given with one axis per variable (context first) or as
    a 2-D array of shape ``(context rows, outcome cells)`` in row-major
    order over the declared variables.
    """

    __slots__ = ("outcomes", "context", "table", "_onames", "_cnames")

    def __init__(self, outcomes: Iterable, context: Iterable = (), table=None, *, check: bool = True):
        self.outcomes = _specs(outcomes)
        self.context = _specs(context)
        self._onames = tuple(v.name for v in self.outcomes)
        self._cnames = tuple(v.name for v in self.context)
        names = [*self._cnames, *self._onames]
        if len(set(names)) != len(names):
            raise KernelError(f"duplicate variable names in kernel {names}")
        shape = tuple(v.card for v in self.context + self.outcomes)
        size = int(np.prod(shape, dtype=np.int64))
        if size > MAX_CELLS:
            raise KernelError(f"kernel over {names} would need {size} cells, above the {MAX_CELLS} cap")
        arr = np.asarray(table, dtype=float)
        if arr.size != size:
            raise KernelError(f"table has {arr.size} cells, expected {size} for shape {shape}")
        arr = arr.reshape(shape)
        if check:
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise KernelError(f"kernel over {names} has negative or non-finite entries")
            nc = len(self.context)
            sums = arr.sum(axis=tuple(range(nc, arr.ndim))) if arr.ndim > nc else np.ones(shape[:nc])
            bad = np.abs(sums - 1.0) > NORM_TOL
            if np.any(bad):
                idx = tuple(int(i) for i in np.argwhere(bad)[0])
                ctx = {v.name: i for v, i in zip(self.context, idx)}
                raise KernelError(f"kernel over {names} is not normalized at context {ctx}: sums to {sums[idx]!r}")
        arr = np.array(arr, copy=True)
        arr.setflags(write=False)
        self.table = arr

    @property
    def outcome_names(self) -> tuple[str, ...]:
        return self._onames

    @property
    def context_names(self) -> tuple[str, ...]:
        return self._cnames

    @property
    def names(self) -> tuple[str, ...]:
        return self.context_names + self.outcome_names

    @property
    def cards(self) -> dict[str, int]:
        return {v.name: v.card for v in self.context + self.outcomes}

    def card(self, name: str) -> int:
        try:
            return self.cards[name]
        except KeyError:
            raise KernelError(f"{name} is not a variable of this kernel") from None

    def prob(self, assignment: Mapping[str, int]) -> float:
        idx = tuple(int(assignment[n]) for n in self.names)
        return float(self.table[idx])

    def rows(self) -> np.ndarray:
        """Table as ``(context rows, outcome cells)``."""
        nc = int(np.prod([v.card for v in self.context], dtype=np.int64))
        return self.table.reshape(nc, -1)

    def transposed(self, outcomes: Sequence[str] | None = None, context: Sequence[str] | None = None) -> "TabularKernel":
        """Same kernel with reordered variables."""
        outcomes = self.outcome_names if outcomes is None else tuple(outcomes)
        context = self.context_names if context is None else tuple(context)
        if sorted(outcomes) != sorted(self.outcome_names) or sorted(context) != sorted(self.context_names):
            raise KernelError("transposition must keep the same outcome and context variables")
        pos = {n: i for i, n in enumerate(self.names)}
        arr = np.transpose(self.table, [pos[n] for n in context + outcomes])
        cards = self.cards
        return TabularKernel(
            [(n, cards[n]) for n in outcomes], [(n, cards[n]) for n in context], arr, check=False
        )

    def renamed(self, mapping: Mapping[str, str]) -> "TabularKernel":
        f = lambda n: mapping.get(n, n)  # noqa: E731
        return TabularKernel(
            [(f(v.name), v.card) for v in self.outcomes],
            [(f(v.name), v.card) for v in self.context],
            self.table,
            check=False,
        )

    def allclose(self, other: "TabularKernel", atol: float = 1e-12) -> bool:
        if set(self.outcome_names) != set(other.outcome_names) or set(self.context_names) != set(other.context_names):
            return False
        o = other.transposed(self.outcome_names, self.context_names)
        return o.table.shape == self.table.shape and bool(np.allclose(self.table, o.table, rtol=0, atol=atol))

    def __repr__(self) -> str:
        out = ",".join(self.outcome_names)
        ctx = ",".join(self.context_names)
        return f"TabularKernel(q({out} | {ctx}), shape={self.table.shape})"


# -- factor algebra ----------------------------------------------------------


def einsum_factors(
    factors: Sequence[tuple[Sequence[str], np.ndarray]], out: Sequence[str]
) -> np.ndarray:
    """Multiply named factors and sum out every name absent from ``out``."""
    ids: dict[str, int] = {}
    for names, _ in factors:
        for n in names:
            ids.setdefault(n, len(ids))
    for n in out:
        if n not in ids:
            raise KernelError(f"output variable {n} does not occur in any factor")
    if len(ids) > 52:
        raise KernelError(f"too many distinct variables ({len(ids)}) for one contraction")
    args: list = []
    for names, arr in factors:
        args.append(arr)
        args.append([ids[n] for n in names])
    args.append([ids[n] for n in out])
    if not factors:
        return np.ones(())
    return np.einsum(*args, optimize=len(factors) > 2)


def product_kernel(factors: Sequence[TabularKernel], outcomes: Sequence[str] | None = None) -> TabularKernel:
    """Product of kernels (e.g. CPTs of a DAG) as one joint kernel.

    Variables that occur only as context become the context of the result.
    """
    cards: dict[str, int] = {}
    order: list[str] = []
    produced: set[str] = set()
    for f in factors:
        for n, c in f.cards.items():
            if cards.setdefault(n, c) != c:
                raise KernelError(f"variable {n} has inconsistent cardinalities {cards[n]} and {c}")
        for n in f.outcome_names:
            if n in produced:
                raise KernelError(f"variable {n} is an outcome of two factors")
            produced.add(n)
            order.append(n)
    outs = tuple(order) if outcomes is None else tuple(outcomes)
    if set(outs) != produced:
        raise KernelError("requested outcome order does not match the factor outcomes")
    ctx = tuple(sorted({n for f in factors for n in f.context_names} - produced))
    arr = einsum_factors([(f.names, f.table) for f in factors], ctx + outs)
    return TabularKernel([(n, cards[n]) for n in outs], [(n, cards[n]) for n in ctx], arr)


def _axes(q: TabularKernel, names: Iterable[str]) -> tuple[int, ...]:
    pos = {n: i for i, n in enumerate(q.names)}
    return tuple(pos[n] for n in names)


def marginalize(q: TabularKernel, keep: Iterable[str]) -> TabularKernel:
    """Sum out every outcome variable not in ``keep``."""
    keep = set(keep)
    unknown = keep - set(q.outcome_names)
    if unknown:
        raise KernelError(f"cannot keep {sorted(unknown)}: not outcomes of the kernel")
    drop = [n for n in q.outcome_names if n not in keep]
    arr = q.table.sum(axis=_axes(q, drop)) if drop else q.table
    return TabularKernel([v for v in q.outcomes if v.name in keep], q.context, arr, check=False)


def _first_zero(mask: np.ndarray, names: Sequence[str]) -> dict[str, int]:
    idx = np.argwhere(mask)[0]
    return {n: int(i) for n, i in zip(names, idx)}


def condition(q: TabularKernel, on: Iterable[str]) -> TabularKernel:
    """``q(rest | on, context)``; raises on a zero-probability ``on`` cell."""
    on = [n for n in q.outcome_names if n in set(on)]
    rest = [n for n in q.outcome_names if n not in set(on)]
    if not rest and not on:
        return q
    arr = q.transposed(tuple(on) + tuple(rest)).table
    nc, non = len(q.context), len(on)
    den = arr.sum(axis=tuple(range(nc + non, arr.ndim)), keepdims=True)
    zero = den <= 0
    if np.any(zero):
        sq = zero.reshape(zero.shape[: nc + non])
        raise ZeroProbabilityError(
            f"q({','.join(rest)} | {','.join(on)})", _first_zero(sq, q.context_names + tuple(on))
        )
    cards = q.cards
    return TabularKernel(
        [(n, cards[n]) for n in rest],
        list(q.context) + [(n, cards[n]) for n in on],
        arr / den,
        check=False,
    )


def fix_kernel(q: TabularKernel, g: MixedGraph, v: str) -> TabularKernel:
    """Divide ``q`` by ``q(v | mb(v))`` and move ``v`` into the context."""
    if v not in q.outcome_names:
        raise KernelError(f"{v} is not an outcome of the kernel")
    if set(g.random) != set(q.outcome_names):
        raise KernelError("kernel outcomes must match the random vertices of the graph")
    w = fixability_witness(g, v)
    if w is not None:
        raise NotFixableError(v, w)
    mb = markov_blanket(g, v)
    missing = mb - set(q.names)
    if missing:
        raise KernelError(f"Markov blanket members {sorted(missing)} are not kernel variables")
    keep = set(q.context_names) | mb | {v}
    arr = q.table
    drop = tuple(i for i, n in enumerate(q.names) if n not in keep)
    marg = arr.sum(axis=drop, keepdims=True) if drop else arr
    if np.any(marg <= 0):
        names = [n for n in q.names if n in keep]
        sq = np.squeeze(marg <= 0, axis=drop) if drop else marg <= 0
        raise ZeroProbabilityError(f"q({v} | mb({v}))", _first_zero(sq, names))
    den = marg.sum(axis=q.names.index(v), keepdims=True)
    fixed = arr / (marg / den)
    new_out = tuple(n for n in q.outcome_names if n != v)
    order = q.context_names + (v,) + new_out
    fixed = np.transpose(fixed, _axes(q, order))
    cards = q.cards
    return TabularKernel(
        [(n, cards[n]) for n in new_out], list(q.context) + [(v, cards[v])], fixed, check=False
    )


def fix_sequence(q: TabularKernel, g: MixedGraph, sequence: Sequence[str]) -> tuple[TabularKernel, MixedGraph]:
    """Fix vertices in order, returning the kernel and graph."""
    for i, v in enumerate(sequence):
        try:
            q = fix_kernel(q, g, v)
            g = fix_vertex(g, v)
        except (GraphError, KernelError) as e:
            raise FixingSequenceError(i, e) from e
    return q, g


def reduce_context(q: TabularKernel, keep: Iterable[str], atol: float | None = None) -> TabularKernel:
    """Drop context variables outside ``keep``.

    The kernel is read at the first value of each dropped variable. With
    ``atol`` set, first verify the table does not depend on them.
    """
    keep = set(keep)
    drop = [n for n in q.context_names if n not in keep]
    if not drop:
        return q
    axes = _axes(q, drop)
    arr = q.table
    if atol is not None:
        ref = np.take(arr, [0], axis=axes[0])
        for ax in axes[1:]:
            ref = np.take(ref, [0], axis=ax)
        dev = float(np.max(np.abs(arr - ref)))
        if dev > atol:
            raise KernelError(f"kernel depends on dropped context {drop} (max deviation {dev:.3g})")
    index = tuple(0 if n in drop else slice(None) for n in q.names)
    return TabularKernel(q.outcomes, [v for v in q.context if v.name in keep], arr[index], check=False)


def intrinsic_kernel(p: TabularKernel, g: MixedGraph, block: Iterable[str], atol: float | None = None) -> TabularKernel:
    """``q_D(D | pa(D))`` for an intrinsic set ``D`` of ``g``."""
    block = frozenset(block)
    seq = reachable(g, block)
    if seq is None:
        raise GraphError(f"{sorted(block)} is not reachable")
    q, h = fix_sequence(p, g, seq)
    if len(h.districts()) != 1:
        raise GraphError(f"{sorted(block)} is reachable but not intrinsic")
    pa = g.parents_of_set(block)
    return reduce_context(q, pa, atol=atol)


def district_factorize(p: TabularKernel, g: MixedGraph) -> dict[frozenset[str], TabularKernel]:
    """Kernels ``q_D(D | pa(D))`` for every district, built from ordered conditionals."""
    if g.hidden:
        raise GraphError("district factorization needs a graph without hidden vertices")
    order = [v for v in g.topological_order() if g.kind(v) is Kind.RANDOM]
    cards = p.cards
    conds = {}
    for i, v in enumerate(order):
        pre = order[:i]
        conds[v] = condition(marginalize(p, pre + [v]), pre)
    out = {}
    for d in g.districts():
        members = [v for v in order if v in d]
        pre_all = sorted({n for v in members for n in conds[v].context_names} - set(members))
        arr = einsum_factors([(conds[v].names, conds[v].table) for v in members], pre_all + members)
        q = TabularKernel([(n, cards[n]) for n in members], [(n, cards[n]) for n in pre_all], arr, check=False)
        out[d] = reduce_context(q, g.parents_of_set(d))
    return out


def nested_factorization_residual(p_full: TabularKernel, g_full: MixedGraph) -> float:
    """Largest deviation between fixed kernels and products of intrinsic kernels."""
    observed = [n for n in p_full.outcome_names if g_full.kind(n) is not Kind.HIDDEN]
    p = marginalize(p_full, observed)
    g = latent_project(g_full)
    rv = sorted(g.random)
    if len(rv) > NESTED_CHECK_LIMIT:
        raise KernelError(f"nested factorization check is capped at {NESTED_CHECK_LIMIT} random vertices")
    cache: dict[frozenset[str], TabularKernel] = {}

    def q_of(d: frozenset[str]) -> TabularKernel:
        if d not in cache:
            cache[d] = intrinsic_kernel(p, g, d)
        return cache[d]

    worst = 0.0
    for k in range(1, len(rv) + 1):
        for combo in combinations(rv, k):
            seq = reachable(g, combo)
            if seq is None:
                continue
            q_r, h = fix_sequence(p, g, seq)
            factors = [(f.names, f.table) for f in (q_of(d) for d in h.districts())]
            present = {n for names, _ in factors for n in names}
            cards = q_r.cards
            factors += [((n,), np.ones(cards[n])) for n in q_r.names if n not in present]
            prod = einsum_factors(factors, q_r.names)
            worst = max(worst, float(np.max(np.abs(q_r.table - prod))))
    return worst


def nested_factorization_check(p_full: TabularKernel, g_full: MixedGraph, atol: float = 1e-9) -> bool:
    """True when the observed margin of ``p_full`` factorizes as the
    nested factorization of ``g_full``'s latent projection requires."""
    return nested_factorization_residual(p_full, g_full) <= atol


# -- constructors --------------------------------------------------------------


def random_cpt(
    rng: np.random.Generator,
    var: tuple[str, int] | VarSpec,
    parents: Sequence[tuple[str, int] | VarSpec] = (),
    concentration: float = 1.0,
    floor: float = 0.0,
) -> TabularKernel:
    """CPT with rows drawn from a symmetric Dirichlet, optionally floored away from zero."""
    (var,) = _specs([var])
    parents = _specs(parents)
    nrows = int(np.prod([p.card for p in parents], dtype=np.int64))
    rows = rng.dirichlet([concentration] * var.card, size=nrows)
    if floor > 0:
        rows = (rows + floor) / (1 + floor * var.card)
    return TabularKernel([var], parents, rows)


def point_mass(var: tuple[str, int] | VarSpec, value: int) -> TabularKernel:
    (var,) = _specs([var])
    if not 0 <= value < var.card:
        raise KernelError(f"value {value} out of range for {var.name} with {var.card} categories")
    arr = np.zeros(var.card)
    arr[value] = 1.0
    return TabularKernel([var], (), arr)
