import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdsem.model import Intervention, exact_query, intervened_spec
from pdsem.simulate import (
    SimConfig,
    ks_distance,
    ks_two_sample,
    nearest_rank,
    sample_batch,
    sample_trajectory,
    summarize,
    summarize_lengths,
    summarize_pmf,
)
from pdsem.specio import load_spec, parse_spec
from test_model import two_step_doc

TOY = load_spec("fig4_toy")


def test_batches_do_not_depend_on_workers():
    cfg = SimConfig(seed=11, n_trajectories=60, max_steps=50)
    one = sample_batch(TOY, cfg=cfg, workers=1)
    three = sample_batch(TOY, cfg=cfg, workers=3)
    assert one == three
    assert one == sample_batch(TOY, cfg=cfg)
    assert one[17] == sample_trajectory(TOY, cfg=cfg, index=17)


def test_seeds_change_the_sample():
    a = sample_batch(TOY, cfg=SimConfig(seed=1, n_trajectories=50))
    b = sample_batch(TOY, cfg=SimConfig(seed=2, n_trajectories=50))
    assert a != b


def test_intervention_equals_sampling_the_intervened_model():
    iv = Intervention.parse(TOY, ["B=1"])
    cfg = SimConfig(seed=5, n_trajectories=40)
    assert sample_batch(TOY, iv, cfg) == sample_batch(intervened_spec(TOY, iv), cfg=cfg)
    for t in sample_batch(TOY, iv, cfg):
        assert all(vals[1] == 1 for _, vals in t.steps)


def test_deterministic_spec_always_same_trajectory():
    spec = parse_spec(two_step_doc())
    batch = sample_batch(spec, cfg=SimConfig(n_trajectories=20))
    assert {t.steps for t in batch} == {(("s1", (0, 0)), ("s2", (1, 0)))}
    assert all(t.absorbed for t in batch)


def test_censoring_at_step_limit():
    batch = sample_batch(TOY, cfg=SimConfig(seed=0, n_trajectories=300, max_steps=3))
    assert all(len(t) <= 3 for t in batch)
    cens = [t for t in batch if not t.absorbed]
    assert cens and all(len(t) == 3 for t in cens)
    s = summarize(batch)
    assert s.censored == len(cens) and s.count == 300 - len(cens)
    assert set(s.histogram) == {3}


def test_length_histogram_within_three_standard_errors():
    n = 20_000
    batch = sample_batch(TOY, cfg=SimConfig(seed=3, n_trajectories=n, max_steps=200))
    exact = exact_query(TOY, max_steps=200).pmf()
    hist = summarize(batch).histogram
    for length, p in exact.items():
        if p * n < 5:
            continue
        se = math.sqrt(p * (1 - p) / n)
        assert abs(hist.get(length, 0) / n - p) < 3.5 * se, length
    assert ks_distance([len(t) for t in batch], exact) < 1.63 / math.sqrt(n)


def test_identified_sampler_matches_truth_in_law():
    spec = load_spec("fig9_frontdoor")
    iv = Intervention.parse(spec, ["A=1"])
    cfg = SimConfig(seed=4, n_trajectories=4000)
    truth = [len(t) for t in sample_batch(spec, iv, cfg, role="truth")]
    ident = [len(t) for t in sample_batch(spec, iv, cfg, role="identified")]
    # two-sample KS critical value at the 1% level
    assert ks_two_sample(truth, ident) < 1.63 * math.sqrt(2 / 4000)
    with pytest.raises(ValueError, match="role"):
        sample_batch(spec, iv, cfg, role="oracle")


def test_linear_gaussian_error_correlation():
    spec = load_spec("sim61_linear_gaussian")
    eq = spec.blocks["s1->s2"].equations
    ra, rb = [], []
    for t in sample_batch(spec, cfg=SimConfig(seed=8, n_trajectories=4000)):
        for (s0, prev), (s1, cur) in zip(t.steps, t.steps[1:]):
            if (s0, s1) != ("s1", "s2"):
                continue
            pa, pc = prev[0], prev[2]
            ra.append(cur[0] - eq["A"].coef["prev.A"] * pa - eq["A"].coef["prev.C"] * pc)
            rb.append(cur[1])
    n = len(ra)
    r = np.corrcoef(ra, rb)[0, 1]
    assert abs(r - 0.5) < 3 * (1 - 0.25) / math.sqrt(n)
    assert abs(np.std(ra) - 1.0) < 3 / math.sqrt(2 * n)


def test_linear_gaussian_intervention_sets_constant():
    spec = load_spec("sim61_linear_gaussian")
    iv = Intervention.parse(spec, ["B=experienced"])
    for t in sample_batch(spec, iv, SimConfig(seed=1, n_trajectories=20)):
        assert all(vals[1] == 1.0 for _, vals in t.steps)


# -- summaries ---------------------------------------------------------------------------


def test_nearest_rank_examples():
    xs = list(range(1, 101))
    assert nearest_rank(xs, 0.05) == 5 and nearest_rank(xs, 0.95) == 95 and nearest_rank(xs, 0.5) == 50
    s = summarize_lengths([3])
    assert (s.q05, s.q50, s.q95, s.mean, s.std) == (3, 3, 3, 3.0, 0.0)
    assert math.isnan(nearest_rank([], 0.5))


@given(st.lists(st.integers(1, 30), min_size=1, max_size=60), st.floats(0.01, 0.99))
def test_nearest_rank_definition(xs, p):
    xs = sorted(xs)
    q = nearest_rank(xs, p)
    assert sum(x <= q for x in xs) >= p * len(xs) - 1e-9
    smaller = [x for x in xs if x < q]
    assert not smaller or sum(x <= smaller[-1] for x in xs) < p * len(xs) - 1e-9


def test_summarize_empty_batch_raises():
    with pytest.raises(ValueError, match="empty"):
        summarize([])


def test_summarize_all_censored():
    batch = sample_batch(TOY, cfg=SimConfig(seed=0, n_trajectories=5, max_steps=1))
    s = summarize(batch)
    assert s.count == 0 and s.censored == 5 and math.isnan(s.mean)


@settings(max_examples=50)
@given(st.dictionaries(st.integers(1, 20), st.integers(1, 30), min_size=1, max_size=8))
def test_summarize_pmf_agrees_with_sample(counts):
    total = sum(counts.values())
    sample = [x for x, c in counts.items() for _ in range(c)]
    a = summarize_pmf({x: c / total for x, c in counts.items()})
    b = summarize_lengths(sample)
    assert a["mean"] == pytest.approx(b.mean) and a["std"] == pytest.approx(b.std)
    assert (a["q05"], a["q50"], a["q95"]) == (b.q05, b.q50, b.q95)


def test_ks_distance_zero_for_matching_sample():
    assert ks_distance([1, 2, 2, 3], {1: 0.25, 2: 0.5, 3: 0.25}) == pytest.approx(0.0)
    assert ks_distance([1, 1], {2: 1.0}) == 1.0
    assert ks_two_sample([1, 2, 3], [1, 2, 3]) == 0.0
