"""Smoothed maximum likelihood for fully observed discrete models.

Every CPT row is estimated as ``(count + alpha * backoff) / (total + alpha)``.
Selector rows (the state transition distributions) back off to the pooled
next-state frequencies of their state; variable rows back off to uniform.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .graph import PREV
from .kernel import TabularKernel
from .model import PdsemSpec, Trajectory, _check_selectors, _step_key, trajectory_loglik

__all__ = [
    "SmoothingConfig",
    "SufficientStats",
    "UnidentifiedContextError",
    "collect_stats",
    "fit_mle",
    "fit_spec",
    "fit_report_rows",
    "loglik_report",
]

log = logging.getLogger(__name__)

BACKOFFS = ("uniform", "marginal")


@dataclass(frozen=True)
class SmoothingConfig:
    alpha: float = 1.0
    selector_backoff: str = "marginal"
    variable_backoff: str = "uniform"

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        for b in (self.selector_backoff, self.variable_backoff):
            if b not in BACKOFFS:
                raise ValueError(f"unknown backoff {b!r}; choose from {BACKOFFS}")


class UnidentifiedContextError(ValueError):
    """Parent contexts with no data and no smoothing mass."""

    def __init__(self, contexts: list[tuple[str, str, dict]]):
        self.contexts = contexts
        shown = "; ".join(f"{k}:{v} at {c}" for k, v, c in contexts[:10])
        more = f" (and {len(contexts) - 10} more)" if len(contexts) > 10 else ""
        super().__init__(f"no observations and alpha=0 for {len(contexts)} contexts: {shown}{more}")


def _parents(spec: PdsemSpec, key: str, v: str) -> list[str]:
    return sorted(spec.graphs[key].parents(v))


@dataclass
class SufficientStats:
    """Counts per (graph, vertex) as ``(parent rows, categories)`` arrays,
    plus pooled selector counts per state."""

    spec: PdsemSpec
    counts: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    selector_counts: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def empty(cls, spec: PdsemSpec) -> "SufficientStats":
        if any(g.hidden for g in spec.graphs.values()):
            raise ValueError("estimation needs a fully observed structure (no hidden vertices)")
        counts = {}
        for key in spec.graph_keys():
            g = spec.graphs[key]
            for v in g.random:
                rows = int(np.prod([spec.var_card(key, p) for p in _parents(spec, key, v)], dtype=np.int64))
                counts[(key, v)] = np.zeros((rows, spec.var_card(key, v)), dtype=np.int64)
        sel = {s.name: np.zeros(s.var(s.selector).card, dtype=np.int64) for s in spec.states if not s.absorbing}
        return cls(spec, counts, sel)

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        if other.spec is not self.spec and set(other.counts) != set(self.counts):
            raise ValueError("statistics were collected for different structures")
        return SufficientStats(
            self.spec,
            {k: self.counts[k] + other.counts[k] for k in self.counts},
            {k: self.selector_counts[k] + other.selector_counts[k] for k in self.selector_counts},
        )

    def visits(self, key: str, v: str) -> np.ndarray:
        return self.counts[(key, v)].sum(axis=1)


def collect_stats(spec: PdsemSpec, data: Iterable[Trajectory]) -> SufficientStats:
    stats = SufficientStats.empty(spec)
    plans: dict[str, list] = {}
    for key in spec.graph_keys():
        src, dst = spec.key_states(key)
        here = {n: i for i, n in enumerate(spec.state(dst).names)}
        prev = {PREV + n: i for i, n in enumerate(spec.state(src).names)} if src else {}
        plan = []
        for v in sorted(spec.graphs[key].random):
            ps = _parents(spec, key, v)
            cards = [spec.var_card(key, p) for p in ps]
            strides = [int(np.prod(cards[i + 1:], dtype=np.int64)) for i in range(len(ps))]
            refs = [(0, prev[p]) if p.startswith(PREV) else (1, here[p]) for p in ps]
            plan.append((stats.counts[(key, v)], here[v], list(zip(refs, strides))))
        plans[key] = plan
    for n, traj in enumerate(data):
        try:
            _check_selectors(spec, traj)
            keys = [_step_key(spec, traj, t) for t in range(len(traj.steps))]
        except ValueError as e:
            raise ValueError(f"trajectory {n}: {e}") from None
        for t, (s, vals) in enumerate(traj.steps):
            key = keys[t]
            prev_vals = traj.steps[t - 1][1] if t else ()
            for arr, slot, parents in plans[key]:
                row = 0
                for (where, idx), stride in parents:
                    row += (vals[idx] if where else prev_vals[idx]) * stride
                arr[row, vals[slot]] += 1
            st = spec.state(s)
            stats.selector_counts[s][vals[st.names.index(st.selector)]] += 1
    return stats


def _backoff(kind: str, pooled: np.ndarray) -> np.ndarray:
    """Backoff row; the pooled marginal gets one pseudo-count per category so
    that smoothed rows stay strictly positive."""
    card = len(pooled)
    if kind == "marginal":
        return (pooled + 1.0) / (pooled.sum() + card)
    return np.full(card, 1.0 / card)


def fit_mle(stats: SufficientStats, smoothing: SmoothingConfig = SmoothingConfig()) -> dict[str, dict[str, TabularKernel]]:
    """Smoothed CPTs for every graph, parents in sorted order."""
    spec = stats.spec
    alpha = smoothing.alpha
    empty: list[tuple[str, str, dict]] = []
    cpts: dict[str, dict[str, TabularKernel]] = {}
    for key in spec.graph_keys():
        _, dst = spec.key_states(key)
        selector = spec.state(dst).selector
        cpts[key] = {}
        for v in sorted(spec.graphs[key].random):
            counts = stats.counts[(key, v)].astype(float)
            if v == selector:
                backoff = _backoff(smoothing.selector_backoff, stats.selector_counts[dst].astype(float))
            else:
                backoff = _backoff(smoothing.variable_backoff, counts.sum(axis=0))
            totals = counts.sum(axis=1, keepdims=True)
            ps = _parents(spec, key, v)
            cards = [spec.var_card(key, p) for p in ps]
            if alpha == 0 and np.any(totals == 0):
                for r in np.nonzero(totals[:, 0] == 0)[0]:
                    idx = np.unravel_index(r, cards) if cards else ()
                    empty.append((key, v, {p: int(i) for p, i in zip(ps, idx)}))
                continue
            rows = (counts + alpha * backoff) / (totals + alpha)
            cpts[key][v] = TabularKernel([(v, counts.shape[1])], list(zip(ps, cards)), rows)
    if empty:
        raise UnidentifiedContextError(empty)
    return cpts


def fit_spec(structure: PdsemSpec, data: Iterable[Trajectory], smoothing: SmoothingConfig = SmoothingConfig()) -> PdsemSpec:
    return structure.with_parameters(fit_mle(collect_stats(structure, data), smoothing))


def fit_report_rows(stats: SufficientStats, cpts: Mapping[str, Mapping[str, TabularKernel]]) -> list[list]:
    """Rows ``graph, vertex, context, visits, value, count, estimate``."""
    out = []
    for (key, v), counts in stats.counts.items():
        k = cpts[key][v]
        ps = list(k.context_names)
        cards = [c.card for c in k.context]
        for r, row in enumerate(counts):
            idx = np.unravel_index(r, cards) if cards else ()
            ctx = ";".join(f"{p}={int(i)}" for p, i in zip(ps, idx))
            est = k.rows()[r]
            for x in range(len(row)):
                out.append([key, v, ctx, int(row.sum()), x, int(row[x]), repr(float(est[x]))])
    return out


def loglik_report(spec: PdsemSpec, data: Iterable[Trajectory]) -> float:
    """Total log-likelihood; trajectories with a zero factor are logged."""
    total = 0.0
    for n, traj in enumerate(data):
        ll = trajectory_loglik(spec, traj)
        if ll == -math.inf:
            log.warning("trajectory %d has zero likelihood", n)
        total += ll
    return total
