"""Synthetic septoplasty pipeline: draw a ground truth, simulate, refit, compare.

Real procedure logs are not shipped, so the ground truth is a random
parameterization of the septoplasty structure under a fixed seed.

    python3 scripts/septoplasty_synthetic.py --out runs/septo --n 2000
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from pdsem.estimate import SmoothingConfig, collect_stats, fit_mle, loglik_report
from pdsem.model import random_parameters
from pdsem.simulate import SimConfig, ks_two_sample, sample_batch, summarize
from pdsem.specio import load_spec, save_spec, write_steps_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/septoplasty"))
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--max-steps", type=int, default=60)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    structure = load_spec("septoplasty_structure")
    truth = random_parameters(structure, np.random.default_rng(args.seed), concentration=2.0)
    data = sample_batch(truth, cfg=SimConfig(seed=args.seed, n_trajectories=args.n, max_steps=args.max_steps))
    save_spec(truth, args.out / "truth.json")
    write_steps_csv(args.out / "steps.csv", truth, data, seed=args.seed)

    stats = collect_stats(structure, data)
    fitted = structure.with_parameters(fit_mle(stats, SmoothingConfig(alpha=args.alpha)))
    save_spec(fitted, args.out / "fitted.json")
    again = sample_batch(fitted, cfg=SimConfig(seed=args.seed + 1, n_trajectories=args.n, max_steps=args.max_steps))

    errs = []
    for (key, v), counts in stats.counts.items():
        est = fitted.cpts[key][v]
        ref = truth.cpts[key][v].transposed((v,), est.context_names).rows()
        seen = counts.sum(axis=1) > 0
        errs.extend(np.abs(est.rows()[seen] - ref[seen]).max(axis=1))
    errs = np.asarray(errs)

    for label, batch in (("data", data), ("refit", again)):
        s = summarize(batch)
        print(f"{label:<6} mean={s.mean:.2f} q05={s.q05:g} q50={s.q50:g} q95={s.q95:g} censored={s.censored}")
    ks = ks_two_sample([len(t) for t in data], [len(t) for t in again])
    print(f"length KS={ks:.4f}")
    print(f"loglik truth={loglik_report(truth, data):.1f} fitted={loglik_report(fitted, data):.1f}")
    print(f"CPT rows seen={errs.size} median max-abs error={np.median(errs):.3f} worst={errs.max():.3f}")
    print(f"wrote {args.out}/truth.json, steps.csv, fitted.json")


if __name__ == "__main__":
    main()
