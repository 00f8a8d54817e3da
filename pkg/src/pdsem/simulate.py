"""Trajectory simulation with one reproducible random substream per trajectory.

Trajectory ``i`` of a batch draws from its own stream derived from
``(seed, i)``, so results do not depend on batch size, order or worker count.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .graph import PREV, Kind
from .model import (
    INIT,
    Intervention,
    LinearGaussianSpec,
    PdsemSpec,
    Trajectory,
    _error_cov,
    intervened_spec,
    step_kernels,
    transition_key,
)

__all__ = [
    "SimConfig",
    "substream",
    "sample_trajectory",
    "sample_batch",
    "TrajectorySummary",
    "summarize",
    "summarize_lengths",
    "summarize_pmf",
    "nearest_rank",
    "ks_distance",
    "ks_two_sample",
]


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    n_trajectories: int = 1000
    max_steps: int = 100


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for trajectory ``index``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _ref(name: str, here: Mapping[str, int], prev: Mapping[str, int]) -> tuple[int, int]:
    """Encode a parent as (0, slot in previous step) or (1, slot in this step)."""
    if name.startswith(PREV):
        return 0, prev[name[len(PREV):]]
    return 1, here[name]


class _DiscreteSampler:
    """Ancestral sampling from CPTs, hidden vertices included."""

    def __init__(self, spec: PdsemSpec):
        self.spec = spec
        self.plans = {}
        for key in spec.graph_keys():
            src, dst = spec.key_states(key)
            g = spec.graphs[key]
            state = spec.state(dst)
            here = {n: i for i, n in enumerate(state.names)}
            for h in sorted(g.hidden):
                here[h] = len(here)
            prev = {n: i for i, n in enumerate(spec.state(src).names)} if src else {}
            steps = []
            for v in g.topological_order():
                if g.kind(v) is Kind.FIXED:
                    continue
                k = spec.cpts[key][v]
                parents = [_ref(p, here, prev) for p in k.context_names]
                strides = [int(np.prod([c.card for c in k.context[i + 1:]], dtype=np.int64)) for i in range(len(k.context))]
                cum = [list(np.cumsum(row)) for row in k.rows()]
                steps.append((here[v], parents, strides, cum))
            self.plans[key] = (len(here), len(state.names), steps)

    def step(self, key: str, prev_vals, rng) -> tuple:
        size, n_obs, steps = self.plans[key]
        vals = [0] * size
        us = rng.random(len(steps))
        for u, (slot, parents, strides, cum) in zip(us, steps):
            row = 0
            for (where, idx), st in zip(parents, strides):
                row += (vals[idx] if where else prev_vals[idx]) * st
            c = cum[row]
            vals[slot] = min(bisect_right(c, u * c[-1]), len(c) - 1)
        return tuple(vals[:n_obs])


class _KernelSampler:
    """Samples whole steps from per-graph kernels (e.g. identified ones)."""

    def __init__(self, spec: PdsemSpec, kernels: Mapping):
        self.plans = {}
        for key in spec.graph_keys():
            src, dst = spec.key_states(key)
            k = kernels[key]
            prev = {PREV + n: i for i, n in enumerate(spec.state(src).names)} if src else {}
            ctx = [prev[c] for c in k.context_names]
            strides = [int(np.prod([c.card for c in k.context[i + 1:]], dtype=np.int64)) for i in range(len(k.context))]
            cards = [v.card for v in k.outcomes]
            names = spec.state(dst).names
            perm = [k.outcome_names.index(n) for n in names]
            cum = np.cumsum(k.rows(), axis=1)
            self.plans[key] = (ctx, strides, cum, cards, perm)

    def step(self, key: str, prev_vals, rng) -> tuple:
        ctx, strides, cum, cards, perm = self.plans[key]
        row = sum(prev_vals[i] * s for i, s in zip(ctx, strides))
        c = cum[row]
        cell = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(c) - 1)
        vals = np.unravel_index(cell, cards)
        return tuple(int(vals[i]) for i in perm)


class _GaussianSampler:
    def __init__(self, spec: LinearGaussianSpec):
        self.plans = {}
        for key in spec.graph_keys():
            src, dst = spec.key_states(key)
            state = spec.state(dst)
            block = spec.blocks[key]
            here = {n: i for i, n in enumerate(state.names)}
            prev = {n: i for i, n in enumerate(spec.state(src).names)} if src else {}
            names, cov = _error_cov(spec, key)
            chol = np.linalg.cholesky(cov) if names else np.zeros((0, 0))
            epos = {n: i for i, n in enumerate(names)}
            g = spec.graphs[key]
            eqs = []
            for v in g.topological_order():
                if v in block.constants:
                    eqs.append((here[v], float(block.constants[v]), [], None))
                elif v in block.equations:
                    e = block.equations[v]
                    eqs.append((here[v], e.intercept, [(_ref(p, here, prev), c) for p, c in e.coef.items()], epos[v]))
            sel = block.selector
            sel_terms = [(_ref(p, here, prev), np.asarray(c)) for p, c in sel.coef.items()]
            self.plans[key] = (len(here), chol, eqs, here[state.selector], np.asarray(sel.intercept), sel_terms)

    def step(self, key: str, prev_vals, rng) -> tuple:
        size, chol, eqs, sel_slot, icpt, sel_terms = self.plans[key]
        err = chol @ rng.standard_normal(chol.shape[0])
        vals: list = [0.0] * size
        for slot, b0, terms, epos in eqs:
            x = b0
            for (where, idx), c in terms:
                x += c * (vals[idx] if where else prev_vals[idx])
            if epos is not None:
                x += err[epos]
            vals[slot] = float(x)
        logits = icpt.copy()
        for (where, idx), c in sel_terms:
            logits = logits + c * (vals[idx] if where else prev_vals[idx])
        w = np.exp(logits - logits.max())
        cum = np.cumsum(w)
        vals[sel_slot] = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(cum) - 1)
        return tuple(vals)


def _sampler(spec, iv: Intervention, role: str):
    if isinstance(spec, LinearGaussianSpec):
        return _GaussianSampler(intervened_spec(spec, iv))
    if spec.cpts is None:
        raise ValueError("this model has no parameters to sample from")
    if role == "truth":
        return _DiscreteSampler(intervened_spec(spec, iv))
    if role == "identified":
        return _KernelSampler(spec, step_kernels(spec, iv, "identified"))
    raise ValueError(f"unknown sampling role {role!r}")


def _run(spec, sampler, rng, max_steps: int) -> Trajectory:
    state = spec.initial.name
    key = INIT
    prev = ()
    steps = []
    while True:
        vals = sampler.step(key, prev, rng)
        steps.append((state, vals))
        st = spec.state(state)
        nxt = spec.successors(state)[vals[st.names.index(st.selector)]]
        if spec.state(nxt).absorbing:
            return Trajectory(tuple(steps), True)
        if len(steps) >= max_steps:
            return Trajectory(tuple(steps), False)
        key, state, prev = transition_key(state, nxt), nxt, vals


def sample_trajectory(
    spec: PdsemSpec | LinearGaussianSpec,
    iv: Intervention = Intervention(),
    cfg: SimConfig = SimConfig(),
    index: int = 0,
    role: str = "truth",
) -> Trajectory:
    """One trajectory from stream ``(cfg.seed, index)``.

    ``role="truth"`` samples the full model (hidden variables included);
    ``role="identified"`` samples from kernels identified from the observed law.
    """
    return _run(spec, _sampler(spec, iv, role), substream(cfg.seed, index), cfg.max_steps)


def _chunk(args) -> list[Trajectory]:
    spec, iv, cfg, role, lo, hi = args
    sampler = _sampler(spec, iv, role)
    return [_run(spec, sampler, substream(cfg.seed, i), cfg.max_steps) for i in range(lo, hi)]


def sample_batch(
    spec: PdsemSpec | LinearGaussianSpec,
    iv: Intervention = Intervention(),
    cfg: SimConfig = SimConfig(),
    workers: int = 1,
    role: str = "truth",
) -> list[Trajectory]:
    """``cfg.n_trajectories`` trajectories; identical for any ``workers``."""
    n = cfg.n_trajectories
    if workers <= 1 or n < 2:
        return _chunk((spec, iv, cfg, role, 0, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    jobs = [(spec, iv, cfg, role, int(a), int(b)) for a, b in zip(bounds, bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [t for part in pool.map(_chunk, jobs) for t in part]


# -- summaries -------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySummary:
    """Length statistics over absorbed trajectories; censored ones are counted apart."""

    count: int
    mean: float
    std: float
    q05: float
    q50: float
    q95: float
    histogram: Mapping[int, int]
    censored: int

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("count", self.count),
            ("mean", self.mean),
            ("std", self.std),
            ("q05", self.q05),
            ("q50", self.q50),
            ("q95", self.q95),
            ("censored", self.censored),
        ]


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Smallest value with at least a fraction ``p`` of the sample at or below it."""
    n = len(sorted_values)
    if n == 0:
        return math.nan
    rank = max(1, math.ceil(p * n - 1e-9))
    return sorted_values[rank - 1]


def summarize_lengths(lengths: Iterable[int], censored: int = 0) -> TrajectorySummary:
    xs = sorted(int(x) for x in lengths)
    if not xs:
        return TrajectorySummary(0, math.nan, math.nan, math.nan, math.nan, math.nan, {}, censored)
    arr = np.asarray(xs, dtype=float)
    return TrajectorySummary(
        len(xs),
        float(arr.mean()),
        float(arr.std()),
        nearest_rank(xs, 0.05),
        nearest_rank(xs, 0.5),
        nearest_rank(xs, 0.95),
        dict(sorted(Counter(xs).items())),
        censored,
    )


def summarize(batch: Sequence[Trajectory]) -> TrajectorySummary:
    if not batch:
        raise ValueError("cannot summarize an empty batch")
    return summarize_lengths((len(t) for t in batch if t.absorbed), sum(not t.absorbed for t in batch))


def summarize_pmf(pmf: Mapping[int, float]) -> dict[str, float]:
    """Mean, std and nearest-rank quantiles of a length distribution."""
    xs = sorted(pmf)
    p = np.array([pmf[x] for x in xs])
    p = p / p.sum()
    x = np.array(xs, dtype=float)
    mean = float(p @ x)
    cdf = np.cumsum(p)

    def q(level):
        return float(x[min(int(np.searchsorted(cdf, level - 1e-12)), len(x) - 1)])

    return {"mean": mean, "std": float(np.sqrt(p @ (x - mean) ** 2)), "q05": q(0.05), "q50": q(0.5), "q95": q(0.95)}


def ks_distance(sample: Iterable[float], pmf: Mapping[float, float]) -> float:
    """Kolmogorov distance between an empirical sample and a discrete law."""
    xs = np.sort(np.asarray(list(sample), dtype=float))
    support = np.array(sorted(set(pmf) | set(xs.tolist())), dtype=float)
    law = np.array([sum(p for v, p in pmf.items() if v <= s) for s in support])
    emp = np.searchsorted(xs, support, side="right") / len(xs)
    return float(np.max(np.abs(emp - law)))


def ks_two_sample(a: Iterable[float], b: Iterable[float]) -> float:
    xa = np.sort(np.asarray(list(a), dtype=float))
    xb = np.sort(np.asarray(list(b), dtype=float))
    support = np.union1d(xa, xb)
    fa = np.searchsorted(xa, support, side="right") / len(xa)
    fb = np.searchsorted(xb, support, side="right") / len(xb)
    return float(np.max(np.abs(fa - fb)))
