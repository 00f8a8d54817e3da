"""Command line interface: ``pdsem validate|identify|simulate|exact|estimate``.

Exit codes: 0 success, 1 validation failure, 2 not identified, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__
from .estimate import SmoothingConfig, UnidentifiedContextError, collect_stats, fit_mle, fit_report_rows, loglik_report
from .model import (
    Intervention,
    InterventionError,
    LinearGaussianSpec,
    NotIdentifiedError,
    EnumerationMassError,
    exact_query,
    pdsem_identify,
    validate_spec,
)
from .simulate import SimConfig, sample_batch, summarize
from .specio import SpecFormatError, load_spec, read_steps_csv, save_spec, write_rows_csv, write_steps_csv

EXIT_OK, EXIT_INVALID, EXIT_UNIDENTIFIED, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("pdsem")


class _Exit(Exception):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(message)


def _err(*lines: str) -> None:
    for ln in lines:
        print(ln, file=sys.stderr)


def _load_valid(path: str):
    try:
        spec = load_spec(path)
    except SpecFormatError as e:
        _err(*(str(d) for d in e.diagnostics))
        raise _Exit(EXIT_INVALID) from None
    except OSError as e:
        raise _Exit(EXIT_RUNTIME, f"cannot read {path}: {e}") from None
    diags = validate_spec(spec)
    if diags:
        _err(*(str(d) for d in diags))
        raise _Exit(EXIT_INVALID)
    return spec


def _intervention(spec, items: Sequence[str]) -> Intervention:
    try:
        return Intervention.parse(spec, items or ())
    except InterventionError as e:
        raise _Exit(EXIT_INVALID, f"invalid intervention: {e}") from None


def _outdir(path: str | None) -> Path | None:
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _summary_line(label: str, s) -> str:
    return (
        f"{label}n={s.count} mean={s.mean:.4f} std={s.std:.4f} "
        f"q05={s.q05:g} q95={s.q95:g} censored={s.censored}"
    )


# -- commands ------------------------------------------------------------------------


def cmd_validate(args) -> int:
    _load_valid(args.spec)
    print(f"{args.spec}: ok")
    return EXIT_OK


def cmd_identify(args) -> int:
    spec = _load_valid(args.spec)
    iv = _intervention(spec, args.treat)
    outcomes = None
    if args.outcome:
        outcomes = {}
        for item in args.outcome:
            st, dot, var = item.rpartition(".")
            if not dot or st not in {s.name for s in spec.states} or var not in spec.state(st).names:
                raise _Exit(EXIT_INVALID, f"unknown outcome {item!r}; expected state.var")
            outcomes.setdefault(st, set()).add(var)
    results = pdsem_identify(spec, iv, outcomes)
    code = EXIT_OK
    for key, res in results.items():
        print(f"{key}: {res}")
        if not res:
            code = EXIT_UNIDENTIFIED
    return code


def _trajectory_rows(batch):
    return [
        [n, len(t), int(t.absorbed), " ".join(t.states)]
        for n, t in enumerate(batch)
    ]


def _histogram_rows(summary):
    total = summary.count or 1
    return [[k, c, repr(c / total)] for k, c in summary.histogram.items()]


def cmd_simulate(args) -> int:
    spec = _load_valid(args.spec)
    iv = _intervention(spec, args.intervene)
    if args.n < 1 or args.max_steps < 1:
        raise _Exit(EXIT_RUNTIME, "-n and --max-steps must be positive")
    cfg = SimConfig(seed=args.seed, n_trajectories=args.n, max_steps=args.max_steps)
    batch = sample_batch(spec, iv, cfg, workers=args.workers, role=args.role)
    summary = summarize(batch)
    out = _outdir(args.out)
    if out is not None:
        write_rows_csv(out / "trajectories.csv", ["trajectory", "length", "absorbed", "states"], _trajectory_rows(batch), args.seed)
        write_steps_csv(out / "steps.csv", spec, batch, args.seed)
        write_rows_csv(out / "summary.csv", ["statistic", "value"], [[k, repr(v) if isinstance(v, float) else v] for k, v in summary.rows()], args.seed)
        write_rows_csv(out / "histogram.csv", ["length", "count", "fraction"], _histogram_rows(summary), args.seed)
    print(_summary_line("", summary))
    return EXIT_OK


def cmd_exact(args) -> int:
    spec = _load_valid(args.spec)
    if isinstance(spec, LinearGaussianSpec):
        raise _Exit(EXIT_RUNTIME, "exact enumeration needs a discrete spec")
    iv = _intervention(spec, args.intervene)
    try:
        res = exact_query(spec, iv, args.statistic, args.max_steps, args.method)
    except NotIdentifiedError as e:
        _err(str(e))
        return EXIT_UNIDENTIFIED
    rows = [[repr(v) if not isinstance(v, (int, str)) else v, repr(p)] for v, p in res.rows]
    write_rows_csv(sys.stdout, ["value", "probability"], rows)
    print(f"absorbed={res.absorbed!r} censored={res.censored!r}", file=sys.stderr)
    return EXIT_OK


def cmd_estimate(args) -> int:
    structure = _load_valid(args.structure)
    if isinstance(structure, LinearGaussianSpec):
        raise _Exit(EXIT_RUNTIME, "estimation needs a discrete spec")
    try:
        data = read_steps_csv(args.data, structure)
        stats = collect_stats(structure, data)
    except (ValueError, KeyError) as e:
        raise _Exit(EXIT_RUNTIME, f"{args.data}: {e}") from None
    smoothing = SmoothingConfig(args.alpha, args.selector_backoff, args.variable_backoff)
    try:
        cpts = fit_mle(stats, smoothing)
    except UnidentifiedContextError as e:
        raise _Exit(EXIT_RUNTIME, str(e)) from None
    fitted = structure.with_parameters(cpts)
    ll = loglik_report(fitted, data)
    out = _outdir(args.out)
    if out is not None:
        save_spec(fitted, out / "fitted.json")
        header = ["graph", "vertex", "context", "visits", "value", "count", "estimate"]
        write_rows_csv(out / "report.csv", header, fit_report_rows(stats, cpts))
    if out is not None and data:
        observed = summarize(data)
        model = summarize(
            sample_batch(fitted, Intervention(), SimConfig(args.seed, args.n or len(data), args.max_steps))
        )
        lengths = sorted(set(observed.histogram) | set(model.histogram))
        no, nm = observed.count or 1, model.count or 1
        rows = [[k, repr(observed.histogram.get(k, 0) / no), repr(model.histogram.get(k, 0) / nm)] for k in lengths]
        write_rows_csv(out / "histogram.csv", ["length", "observed", "model"], rows, args.seed)
        print(_summary_line("observed ", observed))
        print(_summary_line("model    ", model))
    print(f"trajectories={len(data)} loglik={ll!r}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdsem", description="Path dependent structural equation models.")
    p.add_argument("--version", action="version", version=f"pdsem {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a spec file")
    v.add_argument("spec")
    v.set_defaults(func=cmd_validate)

    i = sub.add_parser("identify", help="print identified transition kernels")
    i.add_argument("spec")
    i.add_argument("--treat", action="append", default=[], metavar="STATE.VAR=VALUE")
    i.add_argument("--outcome", action="append", default=[], metavar="STATE.VAR")
    i.set_defaults(func=cmd_identify)

    s = sub.add_parser("simulate", help="sample trajectories")
    s.add_argument("spec")
    s.add_argument("--intervene", action="append", default=[], metavar="STATE.VAR=VALUE")
    s.add_argument("-n", "--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-steps", type=int, default=100)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--role", choices=("truth", "identified"), default="truth")
    s.add_argument("--out", metavar="DIR")
    s.set_defaults(func=cmd_simulate)

    x = sub.add_parser("exact", help="exact trajectory statistic by enumeration")
    x.add_argument("spec")
    x.add_argument("--intervene", action="append", default=[], metavar="STATE.VAR=VALUE")
    x.add_argument("--statistic", choices=("length", "visits", "terminal"), default="length")
    x.add_argument("--max-steps", type=int, default=20)
    x.add_argument("--method", choices=("auto", "truth", "identified"), default="auto")
    x.set_defaults(func=cmd_exact)

    e = sub.add_parser("estimate", help="fit CPTs to a steps CSV")
    e.add_argument("structure")
    e.add_argument("data")
    e.add_argument("--alpha", type=float, default=1.0)
    e.add_argument("--selector-backoff", choices=("marginal", "uniform"), default="marginal")
    e.add_argument("--variable-backoff", choices=("marginal", "uniform"), default="uniform")
    e.add_argument("--out", metavar="DIR")
    e.add_argument("--seed", type=int, default=0, help="seed for the model histogram")
    e.add_argument("-n", "--n", type=int, default=0, help="model trajectories for the histogram (default: data size)")
    e.add_argument("--max-steps", type=int, default=100)
    e.set_defaults(func=cmd_estimate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Exit as e:
        if str(e):
            _err(str(e))
        return e.code
    except (EnumerationMassError, OSError, ValueError) as e:
        _err(f"error: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
