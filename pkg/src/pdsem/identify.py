"""Identification of interventional distributions as symbolic functionals.

A functional is a tree of :class:`KernelRef`, :class:`Product`, :class:`Sum`
and :class:`Bind` nodes. Kernel references name an intrinsic set of some
source graph; :func:`kernels_for` computes the matching kernels from an
observed law and :func:`evaluate` contracts the tree into a table.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .graph import (
    PREV,
    GraphError,
    Kind,
    MixedGraph,
    context_binding,
    fix_set,
    is_intrinsic,
    latent_project,
    reachable,
    reachable_closure,
    slice_name,
    unroll,
)
from .kernel import KernelError, TabularKernel, einsum_factors, intrinsic_kernel

__all__ = [
    "CausalQuery",
    "KernelRef",
    "Product",
    "Sum",
    "Bind",
    "FunctionalExpr",
    "IdentifyResult",
    "Assumption1Error",
    "render",
    "kernel_refs",
    "g_formula",
    "conditional_g_formula",
    "id_admg",
    "assumption1_violations",
    "dbn_identify",
    "dbn_unrolled",
    "kernels_for",
    "evaluate",
]


@dataclass(frozen=True)
class CausalQuery:
    """``p(Y(a))``: treatments map vertex to value index, outcomes are vertices."""

    treatments: Mapping[str, int]
    outcomes: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "treatments", dict(sorted(self.treatments.items())))
        object.__setattr__(self, "outcomes", frozenset(self.outcomes))
        overlap = set(self.treatments) & self.outcomes
        if overlap:
            raise ValueError(f"variables {sorted(overlap)} are both treated and outcomes")
        if not self.outcomes:
            raise ValueError("a query needs at least one outcome")


@dataclass(frozen=True)
class KernelRef:
    """``q_D(D | context)`` of graph ``source``, with an optional renaming
    from the kernel's variable names to the names used in the functional."""

    block: tuple[str, ...]
    context: tuple[str, ...] = ()
    source: str = ""
    rename: tuple[tuple[str, str], ...] = ()

    @property
    def key(self) -> tuple[str, frozenset[str]]:
        return (self.source, frozenset(self.block))

    def name(self, v: str) -> str:
        return dict(self.rename).get(v, v)


@dataclass(frozen=True)
class Product:
    factors: tuple["FunctionalExpr", ...]


@dataclass(frozen=True)
class Sum:
    variables: tuple[str, ...]
    body: "FunctionalExpr"


@dataclass(frozen=True)
class Bind:
    values: tuple[tuple[str, int], ...]
    body: "FunctionalExpr"


FunctionalExpr = Union[KernelRef, Product, Sum, Bind]


@dataclass(frozen=True)
class IdentifyResult:
    identified: bool
    functional: FunctionalExpr | None = None
    witness: frozenset[str] | None = None
    source: str = ""
    detail: str = ""
    blocks: tuple[frozenset[str], ...] = field(default=())
    hedge: frozenset[str] | None = None

    def __bool__(self) -> bool:
        return self.identified

    def __str__(self) -> str:
        if self.identified:
            return render(self.functional)
        msg = f"not identified: {{{', '.join(sorted(self.witness or ()))}}} is not intrinsic"
        if self.hedge is not None:
            msg += f"; fixing stops at {{{', '.join(sorted(self.hedge))}}}"
        return msg + self.detail


class Assumption1Error(GraphError):
    """A transition slice depends on a hidden vertex of the previous slice."""

    def __init__(self, violations: Sequence[tuple[str, str]]):
        self.violations = list(violations)
        super().__init__("; ".join(f"{v}: {msg}" for v, msg in self.violations))


# -- rendering --------------------------------------------------------------


def render(expr: FunctionalExpr) -> str:
    """Canonical text form with explicit sums and products."""
    if isinstance(expr, KernelRef):
        head = f"q^{{{expr.source}}}" if expr.source else "q"
        blk = ",".join(expr.name(v) for v in expr.block)
        ctx = ",".join(expr.name(v) for v in expr.context)
        return f"{head}_{{{blk}}}({blk} | {ctx})" if ctx else f"{head}_{{{blk}}}({blk})"
    if isinstance(expr, Product):
        return " · ".join(render(f) for f in expr.factors) if expr.factors else "1"
    if isinstance(expr, Sum):
        return f"Σ_{{{','.join(expr.variables)}}} [ {render(expr.body)} ]"
    if isinstance(expr, Bind):
        vals = ", ".join(f"{k}={v}" for k, v in expr.values)
        return f"( {render(expr.body)} )|_{{{vals}}}"
    raise TypeError(f"not a functional node: {expr!r}")


def kernel_refs(expr: FunctionalExpr) -> list[KernelRef]:
    if isinstance(expr, KernelRef):
        return [expr]
    if isinstance(expr, Product):
        return [r for f in expr.factors for r in kernel_refs(f)]
    return kernel_refs(expr.body)


def _wrap(refs: Sequence[KernelRef], summed: Iterable[str], treatments: Mapping[str, int]) -> FunctionalExpr:
    """``Σ_summed Π refs`` with treatments bound where they occur."""
    expr: FunctionalExpr = Product(tuple(refs))
    summed = tuple(sorted(summed))
    if summed:
        expr = Sum(summed, expr)
    used = {r.name(v) for r in refs for v in r.context}
    binds = tuple((a, int(x)) for a, x in sorted(treatments.items()) if a in used)
    if binds:
        expr = Bind(binds, expr)
    return expr


# -- fully observed graphs ---------------------------------------------------


def _check_query(g: MixedGraph, query: CausalQuery):
    for v in list(query.treatments) + sorted(query.outcomes):
        if v not in g:
            raise GraphError(f"query variable {v} is not a vertex of the graph")
        if g.kind(v) is Kind.FIXED:
            raise GraphError(f"query variable {v} is fixed; it can only be conditioned on")
        if g.kind(v) is Kind.HIDDEN:
            raise GraphError(f"query variable {v} is hidden")


def _truncated(g: MixedGraph, query: CausalQuery, source: str) -> IdentifyResult:
    _check_query(g, query)
    keep = sorted(g.random - set(query.treatments))
    refs = [KernelRef((v,), tuple(sorted(g.parents(v))), source) for v in keep]
    expr = _wrap(refs, set(keep) - query.outcomes, query.treatments)
    return IdentifyResult(True, expr, source=source, blocks=tuple(frozenset((v,)) for v in keep))


def g_formula(g: MixedGraph, query: CausalQuery, source: str = "") -> IdentifyResult:
    """Truncated factorization for a DAG."""
    if g.bidirected or g.hidden or g.fixed:
        raise GraphError("the g-formula needs a DAG: no bidirected edges, hidden or fixed vertices")
    return _truncated(g, query, source)


def conditional_g_formula(g: MixedGraph, query: CausalQuery, source: str = "") -> IdentifyResult:
    """Truncated factorization for a CDAG, conditional on its fixed vertices."""
    if g.bidirected or g.hidden:
        raise GraphError("the conditional g-formula needs a CDAG: no bidirected edges or hidden vertices")
    return _truncated(g, query, source)


# -- ADMGs -----------------------------------------------------------------------


def _ystar(g: MixedGraph, treatments: Iterable[str], outcomes: Iterable[str]) -> frozenset[str]:
    """Ancestors of the outcomes along paths avoiding the treatments."""
    cut = g.subgraph(g.vertices - set(treatments))
    return cut.ancestors(outcomes) & g.random


def id_admg(g: MixedGraph, query: CausalQuery, source: str = "") -> IdentifyResult:
    """Identify ``p(Y(a))`` in a (C)ADMG via intrinsic districts of ``Y*``."""
    if g.hidden:
        raise GraphError("latent-project the graph before identification")
    _check_query(g, query)
    ystar = _ystar(g, query.treatments, query.outcomes)
    blocks = sorted(g.subgraph(ystar).districts(), key=lambda d: sorted(d))
    for d in blocks:
        if not is_intrinsic(g, d):
            closure = reachable_closure(g, d)
            hedge = next(h for h in fix_set(g, reachable(g, closure)).districts() if d & h)
            return IdentifyResult(False, witness=d, source=source, hedge=frozenset(hedge))
    refs = [KernelRef(tuple(sorted(d)), tuple(sorted(g.parents_of_set(d))), source) for d in blocks]
    return IdentifyResult(True, _wrap(refs, ystar - query.outcomes, query.treatments), source=source, blocks=tuple(blocks))


# -- dynamic Bayesian networks ------------------------------------------------------


def assumption1_violations(transition: MixedGraph, observed: Iterable[str] | None = None) -> list[tuple[str, str]]:
    """Context vertices of a transition slice that are not observed variables.

    ``observed`` defaults to the slice's own random vertices (homogeneous DBN).
    """
    observed = set(transition.random if observed is None else observed)
    out = []
    for v in sorted(transition.vertices):
        k = transition.kind(v)
        if v.startswith(PREV):
            base = v[len(PREV):]
            if k is Kind.HIDDEN:
                kids = ", ".join(sorted(transition.children(v)))
                out.append((v, f"hidden vertex of the previous slice points into {kids or 'the slice'}"))
            elif k is Kind.FIXED and base not in observed:
                out.append((v, f"context {base} is not an observed variable of the previous slice"))
        elif k is Kind.FIXED:
            out.append((v, "fixed vertex is not a previous-slice context (expected prefix 'prev.')"))
    return out


def _parse_slice_var(v: str, horizon: int) -> tuple[str, int]:
    base, sep, t = v.rpartition("@")
    if not sep or not t.isdigit() or not 1 <= int(t) <= horizon:
        raise ValueError(f"expected a time-indexed name X@t with 1 <= t <= {horizon}, got {v!r}")
    return base, int(t)


def dbn_unrolled(prior: MixedGraph, transition: MixedGraph, horizon: int) -> MixedGraph:
    """Hidden-variable DBN unrolled over ``horizon`` slices (names ``X@t``)."""
    binding = context_binding(transition)
    return unroll(prior, [(transition, binding)] * (horizon - 1))


def dbn_identify(prior: MixedGraph, transition: MixedGraph, horizon: int, query: CausalQuery) -> IdentifyResult:
    """Slice-wise identification in a hidden-variable DBN.

    Treatments and outcomes are named ``X@t``. Kernels reference sources
    ``prior`` and ``transition`` with context vertices renamed to the
    previous slice.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    bad = assumption1_violations(transition)
    if bad:
        raise Assumption1Error(bad)
    if prior.fixed:
        raise GraphError("the prior slice cannot have fixed vertices")
    p1, pt = latent_project(prior), latent_project(transition)
    if set(pt.random) != set(p1.random):
        raise GraphError("prior and transition slices must share their observed variables")
    for v in list(query.treatments) + sorted(query.outcomes):
        base, _ = _parse_slice_var(v, horizon)
        if base not in p1.random:
            raise GraphError(f"{v} does not name an observed variable")

    full = unroll(p1, [(pt, context_binding(pt))] * (horizon - 1))
    ystar = _ystar(full, query.treatments, query.outcomes)
    refs: list[KernelRef] = []
    blocks: list[frozenset[str]] = []
    for t in range(1, horizon + 1):
        g, source = (p1, "prior") if t == 1 else (pt, "transition")
        local = frozenset(v for v in g.random if slice_name(v, t) in ystar)
        rename = {v: slice_name(v, t) for v in g.random}
        rename.update({c: slice_name(b, t - 1) for c, b in context_binding(g).items()})
        for d in sorted(g.subgraph(local).districts(), key=lambda d: sorted(d)):
            named = frozenset(rename[v] for v in d)
            if not is_intrinsic(g, d):
                return IdentifyResult(False, witness=named, source=source, detail=f" in slice {t}")
            ctx = tuple(sorted(g.parents_of_set(d)))
            refs.append(KernelRef(tuple(sorted(d)), ctx, source, tuple(sorted(rename.items()))))
            blocks.append(named)
    expr = _wrap(refs, ystar - query.outcomes, query.treatments)
    return IdentifyResult(True, expr, blocks=tuple(blocks))


# -- evaluation -------------------------------------------------------------------


def kernels_for(
    expr: FunctionalExpr,
    laws: Mapping[str, tuple[TabularKernel, MixedGraph]],
    atol: float | None = None,
) -> dict[tuple[str, frozenset[str]], TabularKernel]:
    """Intrinsic kernels for every reference in ``expr``.

    ``laws`` maps a source name to its observed law and latent-projected graph.
    """
    out = {}
    for ref in kernel_refs(expr):
        if ref.key in out:
            continue
        try:
            p, g = laws[ref.source]
        except KeyError:
            raise KeyError(f"no observed law supplied for source {ref.source!r}") from None
        q = intrinsic_kernel(p, g, ref.block, atol=atol)
        if not set(q.context_names) <= set(ref.context):
            raise KernelError(f"kernel for {sorted(ref.block)} has unexpected context {q.context_names}")
        out[ref.key] = q
    return out


def evaluate(expr: FunctionalExpr, kernels: Mapping) -> TabularKernel:
    """Contract a functional into a kernel over its free variables.

    ``kernels`` is keyed by ``(source, frozenset(block))`` or, for a single
    unnamed source, by ``frozenset(block)``. Free variables that are outcomes
    of some referenced kernel become outcomes; the rest form the context.
    """
    cards: dict[str, int] = {}
    produced: set[str] = set()
    # bound outcomes make the result a joint probability, not a normalized kernel
    pinned: set[str] = set()

    def lookup(ref: KernelRef) -> TabularKernel:
        for key in (ref.key, frozenset(ref.block)):
            if key in kernels:
                return kernels[key]
        raise KeyError(f"no kernel supplied for block {sorted(ref.block)} of source {ref.source!r}")

    def leaf(ref: KernelRef, bound: Mapping[str, int]):
        k = lookup(ref)
        if set(k.outcome_names) != set(ref.block):
            raise KernelError(f"kernel outcomes {k.outcome_names} do not match block {ref.block}")
        extra = set(k.context_names) - set(ref.context)
        if extra:
            raise KernelError(f"kernel for {ref.block} depends on {sorted(extra)} outside its declared context")
        names = [ref.name(n) for n in k.names]
        for n, c in zip(names, k.table.shape):
            if cards.setdefault(n, c) != c:
                raise KernelError(f"variable {n} has inconsistent cardinalities {cards[n]} and {c}")
        produced.update(ref.name(n) for n in k.outcome_names)
        pinned.update(ref.name(n) for n in k.outcome_names if ref.name(n) in bound)
        arr = k.table
        index = []
        for n, c in zip(names, arr.shape):
            if n in bound:
                if not 0 <= bound[n] < c:
                    raise KernelError(f"bound value {n}={bound[n]} out of range")
                index.append(bound[n])
            else:
                index.append(slice(None))
        return tuple(n for n in names if n not in bound), arr[tuple(index)]

    def factors(node, bound) -> list:
        if isinstance(node, Product):
            return [f for child in node.factors for f in factors(child, bound)]
        return [ev(node, bound)]

    def ev(node, bound):
        if isinstance(node, KernelRef):
            return leaf(node, bound)
        if isinstance(node, Bind):
            return ev(node.body, {**bound, **dict(node.values)})
        if isinstance(node, (Product, Sum)):
            body = node.body if isinstance(node, Sum) else node
            drop = set(node.variables) if isinstance(node, Sum) else set()
            fs = factors(body, bound)
            seen: list[str] = []
            for names, _ in fs:
                seen.extend(n for n in names if n not in seen)
            out = tuple(n for n in seen if n not in drop)
            return out, einsum_factors(fs, out)
        raise TypeError(f"not a functional node: {node!r}")

    names, arr = ev(expr, {})
    outs = sorted(n for n in names if n in produced)
    ctx = sorted(n for n in names if n not in produced)
    pos = {n: i for i, n in enumerate(names)}
    arr = np.transpose(arr, [pos[n] for n in ctx + outs]) if names else arr
    return TabularKernel([(n, cards[n]) for n in outs], [(n, cards[n]) for n in ctx], arr, check=not pinned)
