"""Path dependent structural equation models.

A model has a set of states with one initial state and one or more
absorbing states, an allowed transition set, and one graph per way of
entering a state: the initial graph for the first step and a transition
graph for every allowed ``i -> j``. Transition graphs read the previous
step through fixed vertices named ``prev.<X>``. Each non-absorbing state has
a selector variable whose categories are its successor states, in the order
the transitions are declared; its value decides where the path goes next.

Two parameterizations exist: discrete CPTs (:class:`PdsemSpec`) and linear
Gaussian equations with logistic selectors (:class:`LinearGaussianSpec`).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .graph import PREV, Kind, MixedGraph, latent_project, slice_name, unroll
from .identify import (
    Bind,
    CausalQuery,
    FunctionalExpr,
    IdentifyResult,
    KernelRef,
    Product,
    Sum,
    assumption1_violations,
    evaluate,
    id_admg,
    kernel_refs,
    kernels_for,
)
from .kernel import TabularKernel, einsum_factors, product_kernel, random_cpt

__all__ = [
    "INIT",
    "transition_key",
    "Variable",
    "State",
    "Diagnostic",
    "LinearEquation",
    "SelectorLogits",
    "LinearBlock",
    "PdsemSpec",
    "LinearGaussianSpec",
    "Trajectory",
    "Intervention",
    "InterventionError",
    "NotIdentifiedError",
    "EnumerationMassError",
    "ExactResult",
    "validate_spec",
    "intervened_spec",
    "trajectory_factors",
    "trajectory_loglik",
    "observed_law",
    "observed_factorization",
    "cpt_kernels",
    "random_parameters",
    "pdsem_identify",
    "step_kernels",
    "unroll_path",
    "exact_query",
]

log = logging.getLogger(__name__)

INIT = "init"


def transition_key(i: str, j: str) -> str:
    return f"{i}->{j}"


@dataclass(frozen=True)
class Variable:
    """Observed or hidden variable. ``card=None`` marks a continuous variable."""

    name: str
    card: int | None = 2
    labels: tuple[str, ...] = ()
    named_values: Mapping[str, float] = field(default_factory=dict)

    @property
    def continuous(self) -> bool:
        return self.card is None

    def parse_value(self, text: str | int | float) -> int | float:
        """Category index (or real value) from an index, label or named value."""
        if self.continuous:
            if isinstance(text, str) and text in self.named_values:
                return float(self.named_values[text])
            try:
                return float(text)
            except ValueError:
                raise ValueError(f"{self.name} is continuous; {text!r} is neither a number nor a named value") from None
        if isinstance(text, str) and text in self.labels:
            return self.labels.index(text)
        try:
            v = int(text)
        except ValueError:
            raise ValueError(f"{text!r} is not a category of {self.name} (labels {list(self.labels)})") from None
        if not 0 <= v < self.card:
            raise ValueError(f"value {v} out of range for {self.name} with {self.card} categories")
        return v


@dataclass(frozen=True)
class State:
    name: str
    variables: tuple[Variable, ...] = ()
    hidden: tuple[Variable, ...] = ()
    selector: str | None = None
    initial: bool = False
    absorbing: bool = False

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def var(self, name: str) -> Variable:
        for v in self.variables + self.hidden:
            if v.name == name:
                return v
        raise KeyError(f"state {self.name} has no variable {name}")


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    graph: str | None = None
    vertex: str | None = None

    def __str__(self) -> str:
        where = "".join(
            f" {k}={v}" for k, v in (("graph", self.graph), ("vertex", self.vertex)) if v is not None
        )
        return f"{self.code}{where}: {self.message}"


@dataclass(frozen=True)
class LinearEquation:
    intercept: float = 0.0
    coef: Mapping[str, float] = field(default_factory=dict)
    sd: float = 1.0


@dataclass(frozen=True)
class SelectorLogits:
    """Softmax over successors: ``logit_k = intercept[k] + sum_v coef[v][k] * v``."""

    intercept: tuple[float, ...]
    coef: Mapping[str, tuple[float, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class LinearBlock:
    equations: Mapping[str, LinearEquation]
    selector: SelectorLogits
    correlations: Mapping[frozenset[str], float] = field(default_factory=dict)
    constants: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class _Structure:
    states: tuple[State, ...]
    transitions: tuple[tuple[str, str], ...]
    graphs: Mapping[str, MixedGraph]

    @cached_property
    def _by_name(self) -> dict[str, State]:
        return {s.name: s for s in self.states}

    def state(self, name: str) -> State:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown state {name}") from None

    @property
    def initial(self) -> State:
        (s,) = [s for s in self.states if s.initial]
        return s

    def successors(self, name: str) -> tuple[str, ...]:
        return tuple(j for i, j in self.transitions if i == name)

    def graph_keys(self) -> list[str]:
        keys = [INIT] if INIT in self.graphs else []
        keys += [transition_key(i, j) for i, j in self.transitions if transition_key(i, j) in self.graphs]
        return keys

    def key_states(self, key: str) -> tuple[str | None, str]:
        """``(source, target)`` of a graph key; the source of the initial graph is ``None``."""
        if key == INIT:
            return None, self.initial.name
        for i, j in self.transitions:
            if transition_key(i, j) == key:
                return i, j
        raise KeyError(f"unknown graph key {key}")

    def graphs_into(self, j: str) -> list[str]:
        return [k for k in self.graph_keys() if self.key_states(k)[1] == j]

    def var_card(self, key: str, vertex: str) -> int | None:
        """Cardinality of a vertex of graph ``key``, resolving ``prev.`` names."""
        src, dst = self.key_states(key)
        if vertex.startswith(PREV):
            if src is None:
                raise KeyError(f"initial graph has no context vertex {vertex}")
            return self.state(src).var(vertex[len(PREV):]).card
        return self.state(dst).var(vertex).card


@dataclass(frozen=True, eq=False)
class PdsemSpec(_Structure):
    """Discrete model. ``cpts[key][vertex]`` is ``p(vertex | parents)`` with
    parents named as in graph ``key``; ``cpts`` is ``None`` for a structure."""

    cpts: Mapping[str, Mapping[str, TabularKernel]] | None = None

    def with_parameters(self, cpts: Mapping[str, Mapping[str, TabularKernel]]) -> "PdsemSpec":
        return replace(self, cpts=cpts)


@dataclass(frozen=True, eq=False)
class LinearGaussianSpec(_Structure):
    """Continuous model with Gaussian errors; bidirected edges carry error correlations."""

    blocks: Mapping[str, LinearBlock] = field(default_factory=dict)


@dataclass(frozen=True)
class Trajectory:
    """Visited states with their observed values (registry order).

    ``absorbed`` is false for a path censored at the step limit.
    """

    steps: tuple[tuple[str, tuple], ...]
    absorbed: bool

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.steps)


class InterventionError(ValueError):
    pass


class NotIdentifiedError(RuntimeError):
    def __init__(self, results: Mapping[str, IdentifyResult]):
        self.results = dict(results)
        bad = [f"{k}: {r}" for k, r in results.items() if not r]
        super().__init__("; ".join(bad))


class EnumerationMassError(RuntimeError):
    pass


@dataclass(frozen=True)
class Intervention:
    """Values ``a_j`` per state; applied on every transition into the state."""

    values: Mapping[str, Mapping[str, int | float]] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return any(self.values.values())

    def on(self, state: str) -> dict[str, int | float]:
        return dict(self.values.get(state, {}))

    @classmethod
    def parse(cls, spec: _Structure, items: Iterable[str]) -> "Intervention":
        """Parse ``state.var=value`` or ``var=value`` (every state with ``var``)."""
        out: dict[str, dict[str, int | float]] = {}
        for item in items:
            lhs, sep, rhs = item.partition("=")
            if not sep:
                raise InterventionError(f"expected state.var=value, got {item!r}")
            st, dot, var = lhs.strip().rpartition(".")
            targets = [st] if dot else [s.name for s in spec.states if var in s.names]
            if not targets:
                raise InterventionError(f"no state has a variable named {var}")
            for s in targets:
                state = spec.state(s)
                if var not in state.names:
                    raise InterventionError(f"state {s} has no observed variable {var}")
                try:
                    val = state.var(var).parse_value(rhs.strip())
                except ValueError as e:
                    raise InterventionError(str(e)) from None
                prev = out.setdefault(s, {}).get(var)
                if prev is not None and prev != val:
                    raise InterventionError(f"conflicting values for {s}.{var}: {prev} and {val}")
                out[s][var] = val
        iv = cls(out)
        check_intervention(spec, iv)
        return iv


def check_intervention(spec: _Structure, iv: Intervention) -> None:
    for s, vals in iv.values.items():
        state = spec.state(s)
        if state.absorbing:
            raise InterventionError(f"absorbing state {s} has no variables to intervene on")
        for var, val in vals.items():
            if var not in state.names:
                raise InterventionError(f"state {s} has no observed variable {var}")
            if var == state.selector:
                raise InterventionError(f"{s}.{var} is the state selector and cannot be intervened on")
            v = state.var(var)
            if not v.continuous and not (isinstance(val, (int, np.integer)) and 0 <= val < v.card):
                raise InterventionError(f"value {val!r} is not a category index of {s}.{var}")


# -- validation ---------------------------------------------------------------------


def validate_spec(spec: _Structure) -> list[Diagnostic]:
    """All structural, assumption and parameter problems of a spec."""
    out: list[Diagnostic] = []
    add = lambda code, msg, graph=None, vertex=None: out.append(Diagnostic(code, msg, graph, vertex))  # noqa: E731

    names = [s.name for s in spec.states]
    if len(set(names)) != len(names):
        add("SCHEMA", "state names must be unique")
    initial = [s for s in spec.states if s.initial]
    if len(initial) != 1:
        add("GRAPH", f"exactly one initial state required, found {len(initial)}")
    if not any(s.absorbing for s in spec.states):
        add("GRAPH", "at least one absorbing state required")
    for s in spec.states:
        if s.absorbing:
            if s.initial:
                add("GRAPH", f"initial state {s.name} cannot be absorbing")
            if s.variables or s.hidden:
                add("GRAPH", f"absorbing state {s.name} must have no variables")
            continue
        if s.selector is None:
            add("SCHEMA", f"state {s.name} has no selector variable")
        elif s.selector not in s.names:
            if any(h.name == s.selector for h in s.hidden):
                add("ASSUMPTION3", f"selector {s.selector} of state {s.name} is hidden", vertex=s.selector)
            else:
                add("SCHEMA", f"selector {s.selector} is not a variable of state {s.name}")
        else:
            succ = spec.successors(s.name)
            card = s.var(s.selector).card
            if card != len(succ):
                add("SCHEMA", f"selector {s.selector} of {s.name} has {card} categories for {len(succ)} successors",
                    vertex=s.selector)
        if not spec.successors(s.name):
            add("GRAPH", f"non-absorbing state {s.name} has no outgoing transition")
    if out:
        return out

    seen = set()
    for i, j in spec.transitions:
        if (i, j) in seen:
            add("GRAPH", f"duplicate transition {i} -> {j}")
        seen.add((i, j))
        for x in (i, j):
            if x not in names:
                add("GRAPH", f"transition {i} -> {j} names unknown state {x}")
        if i in names and spec.state(i).absorbing:
            add("GRAPH", f"absorbing state {i} cannot have outgoing transitions")
    if out:
        return out

    expected = {INIT} | {transition_key(i, j) for i, j in spec.transitions if not spec.state(j).absorbing}
    for k in sorted(expected - set(spec.graphs)):
        add("GRAPH", "missing graph", graph=k)
    for k in sorted(set(spec.graphs) - expected):
        add("GRAPH", "graph does not correspond to a transition into a non-absorbing state", graph=k)

    hidden_sets: dict[str, dict[str, frozenset[str]]] = {}
    for key in spec.graph_keys():
        if key not in expected:
            continue
        g = spec.graphs[key]
        src, dst = spec.key_states(key)
        target = spec.state(dst)
        local = {v for v in g.vertices if not v.startswith(PREV)}
        if set(g.random) != set(target.names):
            extra = sorted(set(g.random) - set(target.names))
            missing = sorted(set(target.names) - set(g.random))
            add("ASSUMPTION2", f"observed vertices differ from the variables of {dst} (extra {extra}, missing {missing})",
                graph=key)
        for v in sorted((local - set(g.random)) - {h.name for h in target.hidden}):
            add("ASSUMPTION2" if g.kind(v) is Kind.HIDDEN else "ASSUMPTION1",
                f"vertex is not a declared variable of {dst}", graph=key, vertex=v)
        if src is None:
            for v in sorted(g.fixed | {v for v in g.vertices if v.startswith(PREV)}):
                add("ASSUMPTION1", "the initial graph cannot depend on a previous step", graph=key, vertex=v)
        else:
            for v, msg in assumption1_violations(g, observed=spec.state(src).names):
                add("ASSUMPTION1", msg, graph=key, vertex=v)
            sel_src = spec.state(src).selector
            if sel_src and PREV + sel_src in g:
                add("GRAPH", f"selector {sel_src} of {src} has an outgoing edge into the next step",
                    graph=key, vertex=PREV + sel_src)
            hidden_sets.setdefault(dst, {})[key] = frozenset(v for v in g.hidden if not v.startswith(PREV))
        sel = target.selector
        if sel in g:
            if g.kind(sel) is Kind.HIDDEN:
                add("ASSUMPTION3", "selector is hidden", graph=key, vertex=sel)
            if g.children(sel):
                add("GRAPH", f"selector has outgoing edges to {sorted(g.children(sel))}", graph=key, vertex=sel)
            if g.siblings(sel):
                add("ASSUMPTION3", "selector shares a hidden cause with other variables", graph=key, vertex=sel)
    for dst, sets in hidden_sets.items():
        if len(set(sets.values())) > 1:
            desc = "; ".join(f"{k}: {sorted(v)}" for k, v in sets.items())
            add("ASSUMPTION2", f"transition graphs into {dst} declare different hidden variables ({desc})")
    if out:
        return out

    if isinstance(spec, PdsemSpec) and spec.cpts is not None:
        out += _check_cpts(spec)
    if isinstance(spec, LinearGaussianSpec):
        out += _check_linear(spec)
    return out


def _check_cpts(spec: PdsemSpec) -> list[Diagnostic]:
    out = []
    for key in spec.graph_keys():
        g = spec.graphs[key]
        cpts = spec.cpts.get(key, {})
        if g.bidirected:
            out.append(Diagnostic("GRAPH", "discrete parameters need explicit hidden vertices instead of bidirected edges",
                                  graph=key))
            continue
        needed = {v for v in g.vertices if g.kind(v) is not Kind.FIXED and not v.startswith(PREV)}
        for v in sorted(set(cpts) - needed):
            out.append(Diagnostic("SCHEMA", "CPT for a vertex without a conditional", graph=key, vertex=v))
        for v in sorted(needed):
            if v not in cpts:
                out.append(Diagnostic("SCHEMA", "missing CPT", graph=key, vertex=v))
                continue
            k = cpts[v]
            if k.outcome_names != (v,) or k.outcomes[0].card != spec.var_card(key, v):
                out.append(Diagnostic("SCHEMA", f"CPT outcome {k.outcomes} does not match the variable", graph=key, vertex=v))
            if set(k.context_names) != set(g.parents(v)):
                out.append(Diagnostic("SCHEMA", f"CPT parents {sorted(k.context_names)} differ from graph parents "
                                                f"{sorted(g.parents(v))}", graph=key, vertex=v))
                continue
            for p in k.context:
                if p.card != spec.var_card(key, p.name):
                    out.append(Diagnostic("SCHEMA", f"parent {p.name} has {p.card} categories in the CPT", graph=key,
                                          vertex=v))
    return out


def _check_linear(spec: LinearGaussianSpec) -> list[Diagnostic]:
    out = []
    for key in spec.graph_keys():
        g = spec.graphs[key]
        _, dst = spec.key_states(key)
        state = spec.state(dst)
        block = spec.blocks.get(key)
        if block is None:
            out.append(Diagnostic("SCHEMA", "missing linear block", graph=key))
            continue
        if g.hidden:
            out.append(Diagnostic("GRAPH", "linear Gaussian specs express hidden causes as bidirected edges", graph=key))
        for v in state.variables:
            if v.name == state.selector:
                continue
            if not v.continuous:
                out.append(Diagnostic("SCHEMA", "linear Gaussian variables must be continuous", graph=key, vertex=v.name))
            if v.name in block.constants:
                continue
            eq = block.equations.get(v.name)
            if eq is None:
                out.append(Diagnostic("SCHEMA", "missing equation", graph=key, vertex=v.name))
                continue
            if set(eq.coef) != set(g.parents(v.name)):
                out.append(Diagnostic("SCHEMA", f"coefficients {sorted(eq.coef)} differ from parents "
                                                f"{sorted(g.parents(v.name))}", graph=key, vertex=v.name))
            if not eq.sd > 0:
                out.append(Diagnostic("SCHEMA", "error sd must be positive", graph=key, vertex=v.name))
        nsucc = len(spec.successors(dst))
        sel = block.selector
        if len(sel.intercept) != nsucc or any(len(c) != nsucc for c in sel.coef.values()):
            out.append(Diagnostic("SCHEMA", f"selector logits need {nsucc} entries", graph=key, vertex=state.selector))
        if set(sel.coef) != set(g.parents(state.selector)):
            out.append(Diagnostic("SCHEMA", "selector coefficients differ from its parents", graph=key,
                                  vertex=state.selector))
        for pair, r in block.correlations.items():
            a, b = sorted(pair)
            if not g.has_bidirected(a, b):
                out.append(Diagnostic("GRAPH", f"error correlation between {a} and {b} without a bidirected edge",
                                      graph=key))
            if not -1 < r < 1:
                out.append(Diagnostic("SCHEMA", f"correlation {r} between {a} and {b} outside (-1, 1)", graph=key))
        if not out:
            try:
                np.linalg.cholesky(_error_cov(spec, key)[1])
            except np.linalg.LinAlgError:
                out.append(Diagnostic("SCHEMA", "error covariance is not positive definite", graph=key))
    return out


def _error_cov(spec: LinearGaussianSpec, key: str) -> tuple[list[str], np.ndarray]:
    block = spec.blocks[key]
    names = [v for v in spec.graphs[key].topological_order() if v in block.equations]
    sd = np.array([block.equations[v].sd for v in names])
    corr = np.eye(len(names))
    pos = {v: i for i, v in enumerate(names)}
    for pair, r in block.correlations.items():
        a, b = sorted(pair)
        if a in pos and b in pos:
            corr[pos[a], pos[b]] = corr[pos[b], pos[a]] = r
    return names, corr * np.outer(sd, sd)


# -- interventions ------------------------------------------------------------------


def intervened_spec(spec: PdsemSpec | LinearGaussianSpec, iv: Intervention):
    """Replace each treated variable's mechanism by a constant in every graph
    entering its state. Untreated CPTs are shared, not copied."""
    check_intervention(spec, iv)
    graphs = dict(spec.graphs)
    for key in spec.graph_keys():
        treated = iv.on(spec.key_states(key)[1])
        if treated:
            graphs[key] = graphs[key].without_incoming(treated)
    if isinstance(spec, LinearGaussianSpec):
        blocks = dict(spec.blocks)
        for key in spec.graph_keys():
            treated = iv.on(spec.key_states(key)[1])
            if treated:
                b = blocks[key]
                blocks[key] = LinearBlock(
                    equations={v: e for v, e in b.equations.items() if v not in treated},
                    selector=b.selector,
                    correlations={p: r for p, r in b.correlations.items() if not (p & set(treated))},
                    constants={**b.constants, **{v: float(x) for v, x in treated.items()}},
                )
        return replace(spec, graphs=graphs, blocks=blocks)
    if spec.cpts is None:
        return replace(spec, graphs=graphs)
    cpts = {}
    for key in spec.graph_keys():
        treated = iv.on(spec.key_states(key)[1])
        table = dict(spec.cpts[key])
        for v, x in treated.items():
            card = spec.var_card(key, v)
            arr = np.zeros(card)
            arr[x] = 1.0
            table[v] = TabularKernel([(v, card)], (), arr)
        cpts[key] = table
    return replace(spec, graphs=graphs, cpts=cpts)


# -- likelihood --------------------------------------------------------------------------


def _step_key(spec: _Structure, traj: Trajectory, t: int) -> str:
    if t == 0:
        if traj.steps[0][0] != spec.initial.name:
            raise ValueError(f"trajectory starts in {traj.steps[0][0]}, not the initial state {spec.initial.name}")
        return INIT
    i, j = traj.steps[t - 1][0], traj.steps[t][0]
    if (i, j) not in spec.transitions:
        raise ValueError(f"step {t + 1}: transition {i} -> {j} is not allowed")
    return transition_key(i, j)


def _check_selectors(spec: _Structure, traj: Trajectory) -> None:
    for t, (s, vals) in enumerate(traj.steps):
        state = spec.state(s)
        if len(vals) != len(state.variables):
            raise ValueError(f"step {t + 1}: expected {len(state.variables)} values for {s}, got {len(vals)}")
        nxt = spec.successors(s)[int(vals[state.names.index(state.selector)])]
        if t + 1 < len(traj.steps):
            if nxt != traj.steps[t + 1][0]:
                raise ValueError(f"step {t + 1}: selector points to {nxt} but the path moves to {traj.steps[t + 1][0]}")
        elif traj.absorbed and not spec.state(nxt).absorbing:
            raise ValueError(f"trajectory marked absorbed but the last selector points to {nxt}")
        elif not traj.absorbed and spec.state(nxt).absorbing:
            raise ValueError("trajectory marked censored but the last selector points to an absorbing state")


def trajectory_factors(spec: PdsemSpec, traj: Trajectory) -> list[tuple[int, str, str, float]]:
    """``(step, graph, vertex, probability)`` for every factor of the likelihood.

    With hidden vertices the factor of a step is its observed law and the
    vertex field reads ``*``.
    """
    if spec.cpts is None:
        raise ValueError("this model has no parameters")
    _check_selectors(spec, traj)
    out = []
    laws: dict[str, TabularKernel] = {}
    for t, (s, vals) in enumerate(traj.steps):
        key = _step_key(spec, traj, t)
        g = spec.graphs[key]
        cur = dict(zip(spec.state(s).names, vals))
        if t:
            prev_state, prev_vals = traj.steps[t - 1]
            cur.update({PREV + n: v for n, v in zip(spec.state(prev_state).names, prev_vals)})
        if g.hidden:
            if key not in laws:
                laws[key] = observed_law(spec, key)
            out.append((t + 1, key, "*", laws[key].prob(cur)))
            continue
        for v in g.topological_order():
            if g.kind(v) is Kind.RANDOM:
                out.append((t + 1, key, v, spec.cpts[key][v].prob(cur)))
    return out


def trajectory_loglik(spec: PdsemSpec, traj: Trajectory) -> float:
    """Log-likelihood summed in log space; ``-inf`` when a factor is zero."""
    total = 0.0
    for step, key, v, p in trajectory_factors(spec, traj):
        if p <= 0.0:
            log.warning("zero-probability factor at step %d, graph %s, vertex %s", step, key, v)
            return -math.inf
        total += math.log(p)
    return total


def observed_law(spec: PdsemSpec, key: str) -> TabularKernel:
    """``p(V_j | prev context)`` of graph ``key`` with hidden vertices summed out.

    Outcomes follow the target state's variable order; context is sorted.
    """
    if spec.cpts is None:
        raise ValueError("this model has no parameters")
    g = spec.graphs[key]
    _, dst = spec.key_states(key)
    cpts = [spec.cpts[key][v] for v in g.topological_order() if g.kind(v) is not Kind.FIXED]
    joint = product_kernel(cpts)
    names = spec.state(dst).names
    ctx = sorted(joint.context_names)
    arr = einsum_factors([(joint.names, joint.table)], ctx + list(names))
    cards = joint.cards
    return TabularKernel([(n, cards[n]) for n in names], [(n, cards[n]) for n in ctx], arr)


def cpt_kernels(spec: PdsemSpec) -> dict[tuple[str, frozenset[str]], TabularKernel]:
    """CPTs keyed for :func:`~pdsem.identify.evaluate`."""
    return {(key, frozenset((v,))): k for key, table in spec.cpts.items() for v, k in table.items()}


def random_parameters(
    spec: PdsemSpec, rng: np.random.Generator, concentration: float = 1.0, floor: float = 0.0
) -> PdsemSpec:
    """Spec with Dirichlet CPTs for every random and hidden vertex (parents sorted)."""
    cpts = {}
    for key in spec.graph_keys():
        g = spec.graphs[key]
        cpts[key] = {
            v: random_cpt(
                rng,
                (v, spec.var_card(key, v)),
                [(p, spec.var_card(key, p)) for p in sorted(g.parents(v))],
                concentration,
                floor,
            )
            for v in g.topological_order()
            if g.kind(v) is not Kind.FIXED
        }
    return spec.with_parameters(cpts)


def _path_keys(spec: _Structure, states: Sequence[str]) -> list[str]:
    if not states or states[0] != spec.initial.name:
        raise ValueError("a path must start in the initial state")
    keys = [INIT]
    for i, j in zip(states, states[1:]):
        if (i, j) not in spec.transitions:
            raise ValueError(f"transition {i} -> {j} is not allowed")
        keys.append(transition_key(i, j))
    return keys


def observed_factorization(spec: _Structure, states: Sequence[str], end: str | None = None) -> FunctionalExpr:
    """Joint law of a fixed state path as a product of per-step factors.

    Step ``t`` variables are named ``X@t``. Selectors are bound to the path;
    the last selector is bound to ``end`` when given and left free otherwise.
    """
    keys = _path_keys(spec, states)
    if end is not None and (states[-1], end) not in spec.transitions:
        raise ValueError(f"transition {states[-1]} -> {end} is not allowed")
    factors: list[FunctionalExpr] = []
    binds: list[tuple[str, int]] = []
    for t, (key, s) in enumerate(zip(keys, states), start=1):
        g = spec.graphs[key]
        rename = {v: slice_name(v, t) for v in g.vertices if not v.startswith(PREV)}
        rename.update({v: slice_name(v[len(PREV):], t - 1) for v in g.vertices if v.startswith(PREV)})
        ren = tuple(sorted(rename.items()))
        refs = tuple(
            KernelRef((v,), tuple(sorted(g.parents(v))), key, ren)
            for v in g.topological_order()
            if g.kind(v) is not Kind.FIXED
        )
        step: FunctionalExpr = Product(refs)
        if g.hidden:
            step = Sum(tuple(sorted(rename[h] for h in g.hidden)), step)
        factors.append(step)
        nxt = states[t] if t < len(states) else end
        if nxt is not None:
            sel = spec.state(s).selector
            binds.append((slice_name(sel, t), spec.successors(s).index(nxt)))
    expr: FunctionalExpr = Product(tuple(factors))
    return Bind(tuple(binds), expr) if binds else expr


# -- identification ----------------------------------------------------------------


def pdsem_identify(
    spec: _Structure,
    iv: Intervention,
    outcomes: Mapping[str, Iterable[str]] | None = None,
) -> dict[str, IdentifyResult]:
    """Identify every graph's counterfactual transition kernel.

    For the graph into ``j`` from ``i`` the query treats ``A_j`` and binds
    the context ``prev.A_i`` to ``a_i``. The outcome set defaults to every
    untreated observed variable of ``j``.
    """
    check_intervention(spec, iv)
    out = {}
    for key in spec.graph_keys():
        src, dst = spec.key_states(key)
        g = latent_project(spec.graphs[key])
        treat = iv.on(dst)
        ys = set(g.random) - set(treat)
        if outcomes is not None and dst in outcomes:
            ys = set(outcomes[dst]) - set(treat)
        if not ys:
            out[key] = IdentifyResult(True, Product(()), source=key)
            continue
        res = id_admg(g, CausalQuery(treat, ys), source=key)
        if res and src is not None:
            ctx = {PREV + a: x for a, x in iv.on(src).items() if PREV + a in g}
            used = {v for v in ctx if any(v in r.context for r in kernel_refs(res.functional))}
            if used:
                extra = tuple(sorted((v, ctx[v]) for v in used))
                res = replace(res, functional=Bind(extra, res.functional))
        out[key] = res
    return out


def step_kernels(spec: PdsemSpec, iv: Intervention = Intervention(), method: str = "auto") -> dict[str, TabularKernel]:
    """Per-graph kernels ``p(V_j | prev context)`` under an intervention.

    ``truth`` reads the intervened CPTs; ``identified`` evaluates the
    identified functionals on the observed laws. ``auto`` picks
    ``identified`` when some graph has hidden vertices.
    """
    if method == "auto":
        method = "identified" if any(g.hidden for g in spec.graphs.values()) else "truth"
    if method == "truth":
        ispec = intervened_spec(spec, iv)
        out = {}
        for key in spec.graph_keys():
            law = observed_law(ispec, key)
            ctx = sorted(spec.graphs[key].fixed)
            factors = [(law.names, law.table)]
            factors += [((c,), np.ones(spec.var_card(key, c))) for c in ctx if c not in law.context_names]
            arr = einsum_factors(factors, ctx + list(law.outcome_names))
            out[key] = TabularKernel(list(law.outcomes), [(c, spec.var_card(key, c)) for c in ctx], arr)
        return out
    if method != "identified":
        raise ValueError(f"unknown method {method!r}")
    results = pdsem_identify(spec, iv)
    if not all(results.values()):
        raise NotIdentifiedError(results)
    out = {}
    for key in spec.graph_keys():
        src, dst = spec.key_states(key)
        g = spec.graphs[key]
        law = observed_law(spec, key)
        expr = results[key].functional
        ks = kernels_for(expr, {key: (law, latent_project(g))})
        y = evaluate(expr, ks)
        ctx = sorted(g.fixed)
        names = spec.state(dst).names
        factors = [(y.names, y.table)]
        for a, x in iv.on(dst).items():
            e = np.zeros(spec.var_card(key, a))
            e[x] = 1.0
            factors.append(((a,), e))
        factors += [((c,), np.ones(spec.var_card(key, c))) for c in ctx if c not in y.names]
        arr = einsum_factors(factors, ctx + list(names))
        out[key] = TabularKernel(
            [(n, spec.var_card(key, n)) for n in names], [(c, spec.var_card(key, c)) for c in ctx], arr
        )
    return out


def unroll_path(spec: PdsemSpec, states: Sequence[str]) -> tuple[MixedGraph, TabularKernel]:
    """Hidden-variable graph and joint law of a fixed state path (selectors free)."""
    keys = _path_keys(spec, states)
    trans = []
    for key in keys[1:]:
        g = spec.graphs[key]
        trans.append((g, {v: v[len(PREV):] for v in g.fixed}))
    graph = unroll(spec.graphs[INIT], trans)
    factors = []
    for t, key in enumerate(keys, start=1):
        g = spec.graphs[key]
        rename = {v: slice_name(v, t) for v in g.vertices if not v.startswith(PREV)}
        rename.update({v: slice_name(v[len(PREV):], t - 1) for v in g.fixed})
        factors += [spec.cpts[key][v].renamed(rename) for v in g.topological_order() if g.kind(v) is not Kind.FIXED]
    return graph, product_kernel(factors)


# -- exact enumeration ---------------------------------------------------------------


@dataclass(frozen=True)
class ExactResult:
    """Exact distribution of a trajectory statistic.

    ``rows`` pairs a value with its probability over absorbed trajectories;
    ``censored`` is the mass still running after ``max_steps``.
    """

    statistic: str
    rows: tuple[tuple[object, float], ...]
    absorbed: float
    censored: float
    max_steps: int

    def pmf(self) -> dict:
        return dict(self.rows)


class _Chain:
    """Markov chain on (state, observed assignment) pairs."""

    def __init__(self, spec: PdsemSpec, kernels: Mapping[str, TabularKernel]):
        self.spec = spec
        self.cards = {}
        self.sel = {}
        for s in spec.states:
            if s.absorbing:
                continue
            cards = [v.card for v in s.variables]
            self.cards[s.name] = cards
            grid = np.indices(cards).reshape(len(cards), -1)
            self.sel[s.name] = grid[s.names.index(s.selector)]
        init = kernels[INIT]
        self.init = init.table.reshape(-1)
        self.step = {}
        for key in spec.graph_keys():
            if key == INIT:
                continue
            i, j = spec.key_states(key)
            k = kernels[key]
            src_names = [PREV + n for n in spec.state(i).names]
            factors = [(k.names, k.table)]
            factors += [((n,), np.ones(c)) for n, c in zip(src_names, self.cards[i]) if n not in k.names]
            arr = einsum_factors(factors, src_names + list(k.outcome_names))
            self.step[(i, j)] = arr.reshape(len(self.sel[i]), -1)

    def run(self, max_steps: int, on_absorb, on_enter=None):
        """Propagate mass; ``on_absorb(t, state, mass_vector)`` sees absorbed mass."""
        spec = self.spec
        dist = {spec.initial.name: self.init}
        censored = 0.0
        for t in range(1, max_steps + 1):
            new: dict[str, np.ndarray] = {}
            for i, vec in dist.items():
                for k, j in enumerate(spec.successors(i)):
                    m = np.where(self.sel[i] == k, vec, 0.0)
                    if spec.state(j).absorbing:
                        on_absorb(t, i, m)
                    elif t < max_steps:
                        nv = m @ self.step[(i, j)]
                        new[j] = new[j] + nv if j in new else nv
                    else:
                        censored += float(m.sum())
            dist = new
        return censored


def exact_query(
    spec: PdsemSpec,
    iv: Intervention = Intervention(),
    statistic: str = "length",
    max_steps: int = 20,
    method: str = "auto",
    mass_tol: float = 1e-6,
) -> ExactResult:
    """Exact trajectory-level distribution by propagating the joint chain.

    ``statistic`` is ``length`` (number of visited states), ``visits``
    (``(state, count)`` rows per state, absorbed and censored paths alike)
    or ``terminal`` (``(state, assignment)`` at absorption).
    """
    chain = _Chain(spec, step_kernels(spec, iv, method))
    rows: dict = {}
    lengths: dict[int, float] = {}

    def absorb(t, i, m):
        lengths[t] = lengths.get(t, 0.0) + float(m.sum())
        if statistic == "terminal":
            names = spec.state(i).names
            for idx in np.nonzero(m)[0]:
                vals = np.unravel_index(idx, chain.cards[i])
                key = (i, tuple(f"{n}={int(v)}" for n, v in zip(names, vals)))
                rows[key] = rows.get(key, 0.0) + float(m[idx])

    if statistic not in ("length", "visits", "terminal"):
        raise ValueError(f"unknown statistic {statistic!r}")
    censored = chain.run(max_steps, absorb)
    absorbed = sum(lengths.values())
    if absorbed < 1.0 - mass_tol:
        raise EnumerationMassError(
            f"only {absorbed:.9f} of the probability mass is absorbed within {max_steps} steps; increase max_steps"
        )
    if statistic == "length":
        rows = lengths
    elif statistic == "visits":
        for s in spec.states:
            if not s.absorbing:
                counts = _visit_counts(chain, s.name, max_steps)
                rows.update({(s.name, c): float(p) for c, p in enumerate(counts) if p > 0})
    return ExactResult(statistic, tuple(sorted(rows.items())), absorbed, censored, max_steps)


def _visit_counts(chain: _Chain, target: str, max_steps: int) -> np.ndarray:
    """Distribution of visits to ``target`` over trajectories (censored included)."""
    spec = chain.spec
    n = max_steps + 1
    start = spec.initial.name
    vec = np.zeros((n, len(chain.init)))
    vec[1 if start == target else 0] = chain.init
    dist = {start: vec}
    counts = np.zeros(n)
    for t in range(1, max_steps + 1):
        new: dict[str, np.ndarray] = {}
        for i, v in dist.items():
            for k, j in enumerate(spec.successors(i)):
                m = np.where(chain.sel[i] == k, v, 0.0)
                if spec.state(j).absorbing or t == max_steps:
                    counts += m.sum(axis=1)
                    continue
                nv = m @ chain.step[(i, j)]
                if j == target:
                    nv = np.vstack([np.zeros((1, nv.shape[1])), nv[:-1]])
                new[j] = new[j] + nv if j in new else nv
        dist = new
    return counts
