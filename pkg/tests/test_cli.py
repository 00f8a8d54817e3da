import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pdsem.cli import main
from pdsem.model import random_parameters
from pdsem.simulate import SimConfig, sample_batch
from pdsem.specio import load_spec, save_spec, shipped_spec, write_steps_csv

GOLDEN = Path(__file__).parent / "golden"


def spec_path(name):
    return str(shipped_spec(name))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok_and_failures(capsys, tmp_path):
    code, out, _ = run(capsys, "validate", spec_path("fig4_toy"))
    assert code == 0 and out.endswith(": ok\n")
    code, _, err = run(capsys, "validate", spec_path("fig3ab_violation"))
    assert code == 1 and "ASSUMPTION1" in err and "prev.U" in err
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code, _, err = run(capsys, "validate", bad)
    assert code == 1 and "line 1 column 2" in err
    code, _, err = run(capsys, "validate", tmp_path / "missing.json")
    assert code == 3


def test_identify_front_door_golden(capsys):
    code, out, _ = run(capsys, "identify", spec_path("fig9_frontdoor"), "--treat", "A=1")
    assert code == 0
    assert out == (GOLDEN / "fig9_identify_A1.txt").read_text()


def test_identify_bow_exit_code(capsys):
    code, out, _ = run(capsys, "identify", spec_path("bow"), "--treat", "s2.A=1")
    assert code == 2
    assert "s1->s2: not identified: {C} is not intrinsic; fixing stops at {A, C}" in out


def test_identify_outcome_restriction(capsys):
    code, out, _ = run(capsys, "identify", spec_path("bow"), "--treat", "s2.A=1", "--outcome", "s2.S")
    assert code == 0
    code, _, err = run(capsys, "identify", spec_path("bow"), "--outcome", "s2.Q")
    assert code == 1 and "unknown outcome" in err


def test_bad_intervention_is_a_validation_failure(capsys):
    code, _, err = run(capsys, "simulate", spec_path("fig4_toy"), "--intervene", "s1.S=0")
    assert code == 1 and "selector" in err


def test_simulate_outputs_are_reproducible(capsys, tmp_path):
    args = ["simulate", spec_path("fig4_toy"), "-n", 200, "--seed", 7, "--intervene", "B=1"]
    code, out1, _ = run(capsys, *args, "--out", tmp_path / "a")
    assert code == 0 and "mean=" in out1
    code, out2, _ = run(capsys, *args, "--out", tmp_path / "b", "--workers", 2)
    assert out1 == out2
    for f in ("trajectories.csv", "steps.csv", "summary.csv", "histogram.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "summary.csv").read_text().startswith("# pdsem ")


def test_simulate_rejects_nonpositive_n(capsys):
    code, _, _ = run(capsys, "simulate", spec_path("fig4_toy"), "-n", 0)
    assert code == 3


def test_exact_outputs(capsys):
    code, out, err = run(capsys, "exact", spec_path("fig4_toy"), "--max-steps", 60)
    assert code == 0 and "absorbed=" in err
    rows = [ln.split(",") for ln in out.splitlines()[2:]]
    assert rows[0][0] == "3"
    assert abs(sum(float(p) for _, p in rows) - 1.0) < 1e-9
    code, _, err = run(capsys, "exact", spec_path("fig4_toy"), "--max-steps", 3)
    assert code == 3 and "increase max_steps" in err
    code, _, _ = run(capsys, "exact", spec_path("bow"), "--intervene", "s2.A=1")
    assert code == 2
    code, _, _ = run(capsys, "exact", spec_path("sim61_linear_gaussian"))
    assert code == 3


@pytest.fixture(scope="module")
def septoplasty(tmp_path_factory):
    """Synthetic ground truth over the septoplasty structure and a steps CSV drawn from it."""
    d = tmp_path_factory.mktemp("septo")
    structure = load_spec("septoplasty_structure")
    truth = random_parameters(structure, np.random.default_rng(2024), concentration=2.0)
    save_spec(truth, d / "truth.json")
    batch = sample_batch(truth, cfg=SimConfig(seed=3, n_trajectories=500, max_steps=60))
    write_steps_csv(d / "steps.csv", truth, batch, seed=3)
    return d, truth, batch


def test_estimate_end_to_end(capsys, septoplasty):
    d, truth, batch = septoplasty
    out_dir = d / "fit"
    code, out, _ = run(
        capsys, "estimate", spec_path("septoplasty_structure"), d / "steps.csv", "--out", out_dir, "--seed", 1
    )
    assert code == 0
    assert f"trajectories={len(batch)}" in out and "observed " in out and "model " in out
    fitted = load_spec(out_dir / "fitted.json")
    assert set(fitted.cpts) == set(truth.cpts)
    header = (out_dir / "report.csv").read_text().splitlines()[1]
    assert header == "graph,vertex,context,visits,value,count,estimate"
    hist = (out_dir / "histogram.csv").read_text().splitlines()
    assert hist[1] == "length,observed,model"
    code, _, _ = run(capsys, "validate", out_dir / "fitted.json")
    assert code == 0


def test_estimate_without_smoothing_on_empty_data(capsys, tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("trajectory,step,state,values\n")
    code, _, err = run(capsys, "estimate", spec_path("fig4_toy"), p, "--alpha", 0)
    assert code == 3 and "alpha=0" in err
    code, out, _ = run(capsys, "estimate", spec_path("fig4_toy"), p, "--out", tmp_path / "o")
    assert code == 0 and "trajectories=0" in out
    assert (tmp_path / "o" / "fitted.json").exists() and not (tmp_path / "o" / "histogram.csv").exists()


def test_estimate_reports_bad_rows(capsys, tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("trajectory,step,state,values\n0,1,s2,A=0;B=0;C=0;S=0\n")
    code, _, err = run(capsys, "estimate", spec_path("fig4_toy"), p)
    assert code == 3 and "initial state" in err


def test_console_script_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "pdsem.cli", "validate", spec_path("fig9_frontdoor")],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    doc = json.loads(Path(spec_path("fig9_frontdoor")).read_text())
    assert doc["format"] == "pdsem/1"
