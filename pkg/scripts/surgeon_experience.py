"""Trajectory length under B=experienced vs B=trainee for the linear-Gaussian example.

    python3 scripts/surgeon_experience.py --n 10000 --seeds 5
"""

from __future__ import annotations

import argparse

from pdsem.model import Intervention
from pdsem.simulate import SimConfig, sample_batch, summarize
from pdsem.specio import load_spec


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spec", default="sim61_linear_gaussian")
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--max-steps", type=int, default=200)
    args = ap.parse_args()

    spec = load_spec(args.spec)
    print(f"{'seed':>4} {'arm':<12} {'mean':>6} {'q05':>4} {'median':>6} {'q95':>4} {'censored':>8}")
    for seed in range(args.seeds):
        cfg = SimConfig(seed=seed, n_trajectories=args.n, max_steps=args.max_steps)
        for arm in ("experienced", "trainee"):
            s = summarize(sample_batch(spec, Intervention.parse(spec, [f"B={arm}"]), cfg))
            print(f"{seed:>4} {arm:<12} {s.mean:6.2f} {s.q05:4g} {s.q50:6g} {s.q95:4g} {s.censored:8d}")


if __name__ == "__main__":
    main()
