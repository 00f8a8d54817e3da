"""JSON spec files and CSV trajectory files.

See ``docs/spec_format.md`` for the file layout. Loading never validates
modelling assumptions; call :func:`pdsem.model.validate_spec` for that.
"""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Iterable, Mapping, Sequence
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from .graph import PREV, GraphError, MixedGraph
from .kernel import KernelError, TabularKernel
from .model import (
    INIT,
    Diagnostic,
    LinearBlock,
    LinearEquation,
    LinearGaussianSpec,
    PdsemSpec,
    SelectorLogits,
    State,
    Trajectory,
    Variable,
    transition_key,
)

__all__ = [
    "SpecFormatError",
    "SCHEMA",
    "load_spec",
    "parse_spec",
    "dump_spec",
    "save_spec",
    "shipped_spec",
    "shipped_specs",
    "csv_header",
    "write_steps_csv",
    "read_steps_csv",
    "write_rows_csv",
]

FORMAT = "pdsem/1"

_edge = {"type": "array", "items": {"type": "string", "minLength": 1}, "minItems": 2, "maxItems": 2}
_var = {
    "type": "object",
    "required": ["name"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "card": {"type": ["integer", "null"], "minimum": 1},
        "labels": {"type": "array", "items": {"type": "string"}},
        "values": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}
SCHEMA = {
    "type": "object",
    "required": ["format", "states", "transitions", "graphs"],
    "additionalProperties": False,
    "properties": {
        "format": {"const": FORMAT},
        "kind": {"enum": ["discrete", "linear_gaussian"]},
        "description": {"type": "string"},
        "states": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "initial": {"type": "boolean"},
                    "absorbing": {"type": "boolean"},
                    "selector": {"type": "string", "minLength": 1},
                    "variables": {"type": "array", "items": _var},
                    "hidden": {"type": "array", "items": _var},
                },
            },
        },
        "transitions": {"type": "array", "items": _edge},
        "graphs": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "directed": {"type": "array", "items": _edge},
                    "bidirected": {"type": "array", "items": _edge},
                    "random": {"type": "array", "items": {"type": "string"}},
                    "hidden": {"type": "array", "items": {"type": "string"}},
                    "fixed": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "parameters": {"type": "object", "additionalProperties": {"type": "object"}},
    },
}


class SpecFormatError(ValueError):
    """The file cannot be turned into a spec; carries SCHEMA/GRAPH diagnostics."""

    def __init__(self, diagnostics: Sequence[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


def shipped_specs() -> list[str]:
    return sorted(p.name[: -len(".json")] for p in resources.files("pdsem.specs").iterdir() if p.name.endswith(".json"))


def shipped_spec(name: str) -> Path:
    """Path of a spec shipped with the package, e.g. ``fig4_toy``."""
    path = resources.files("pdsem.specs") / f"{name}.json"
    if not path.is_file():
        raise FileNotFoundError(f"no shipped spec {name!r}; available: {', '.join(shipped_specs())}")
    return Path(str(path))


def load_spec(source: str | Path | Mapping) -> PdsemSpec | LinearGaussianSpec:
    """Read a spec from a path, a shipped spec name, or a parsed mapping."""
    if isinstance(source, Mapping):
        return parse_spec(source)
    path = Path(source)
    if not path.exists() and not path.suffix:
        path = shipped_spec(str(source))
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecFormatError([Diagnostic("SCHEMA", f"line {e.lineno} column {e.colno}: {e.msg}")]) from None
    return parse_spec(doc)


def _variable(d: Mapping) -> Variable:
    return Variable(
        d["name"],
        d.get("card", 2),
        tuple(d.get("labels", ())),
        dict(d.get("values", {})),
    )


def parse_spec(doc: Mapping) -> PdsemSpec | LinearGaussianSpec:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        raise SpecFormatError(
            [Diagnostic("SCHEMA", f"at /{'/'.join(map(str, e.path))}: {e.message}") for e in errors]
        )
    diags: list[Diagnostic] = []
    transitions = tuple((a, b) for a, b in doc["transitions"])
    states = []
    for sd in doc["states"]:
        variables = [_variable(v) for v in sd.get("variables", [])]
        sel = sd.get("selector")
        succ = [b for a, b in transitions if a == sd["name"]]
        if sel is not None and sel not in {v.name for v in variables} | {h["name"] for h in sd.get("hidden", [])}:
            variables.append(Variable(sel, len(succ), tuple(succ)))
        states.append(
            State(
                sd["name"],
                tuple(variables),
                tuple(_variable(v) for v in sd.get("hidden", [])),
                sel,
                bool(sd.get("initial", False)),
                bool(sd.get("absorbing", False)),
            )
        )
    by_name = {s.name: s for s in states}
    n_initial = sum(s.initial for s in states)
    if n_initial != 1:
        raise SpecFormatError([Diagnostic("GRAPH", f"exactly one initial state required, found {n_initial}")])
    initial = next(s for s in states if s.initial)

    def endpoints(key: str):
        if key == INIT:
            return None, initial
        for a, b in transitions:
            if transition_key(a, b) == key:
                return by_name.get(a), by_name.get(b)
        return "?", None

    graphs: dict[str, MixedGraph] = {}
    for key, gd in doc["graphs"].items():
        src, dst = endpoints(key)
        if src == "?" or dst is None:
            diags.append(Diagnostic("GRAPH", "graph key names no declared transition", graph=key))
            continue
        edges = [tuple(e) for e in gd.get("directed", [])]
        bi = [tuple(e) for e in gd.get("bidirected", [])]
        mentioned = {v for e in edges + bi for v in e} | set(gd.get("fixed", []))
        random = list(gd.get("random", dst.names))
        hidden = list(gd.get("hidden", [h.name for h in dst.hidden]))
        fixed = list(gd.get("fixed", []))
        for v in sorted(mentioned):
            if not v.startswith(PREV) or v in fixed or v in hidden:
                continue
            base = v[len(PREV):]
            if src is None:
                fixed.append(v)
            elif base in src.names:
                fixed.append(v)
            elif base in {h.name for h in src.hidden}:
                hidden.append(v)
            else:
                diags.append(Diagnostic("SCHEMA", f"context {v} names no variable of state {src.name}", key, v))
        try:
            graphs[key] = MixedGraph(random=random, hidden=hidden, fixed=fixed, directed=edges, bidirected=bi)
        except GraphError as e:
            diags.append(Diagnostic("GRAPH", str(e), graph=key))
    if diags:
        raise SpecFormatError(diags)

    kind = doc.get("kind", "discrete")
    params = doc.get("parameters")
    base = dict(states=tuple(states), transitions=transitions, graphs=graphs)
    if kind == "linear_gaussian":
        blocks = {key: _linear_block(key, bd, diags) for key, bd in (params or {}).items()}
        if diags:
            raise SpecFormatError(diags)
        return LinearGaussianSpec(**base, blocks=blocks)
    spec = PdsemSpec(**base)
    if params is None:
        return spec
    cpts: dict[str, dict[str, TabularKernel]] = {}
    for key, table in params.items():
        if key not in graphs:
            diags.append(Diagnostic("SCHEMA", "parameters for an unknown graph", graph=key))
            continue
        cpts[key] = {}
        for v, cd in table.items():
            try:
                parents = list(cd.get("parents", []))
                k = TabularKernel(
                    [(v, spec.var_card(key, v))],
                    [(p, spec.var_card(key, p)) for p in parents],
                    cd["table"],
                )
            except (KernelError, KeyError, TypeError, ValueError) as e:
                diags.append(Diagnostic("SCHEMA", f"bad CPT: {e}", graph=key, vertex=v))
                continue
            cpts[key][v] = k
    if diags:
        raise SpecFormatError(diags)
    return spec.with_parameters(cpts)


def _linear_block(key: str, bd: Mapping, diags: list[Diagnostic]) -> LinearBlock | None:
    try:
        eqs = {
            v: LinearEquation(float(e.get("intercept", 0.0)), {p: float(c) for p, c in e.get("coef", {}).items()},
                              float(e.get("sd", 1.0)))
            for v, e in bd.get("equations", {}).items()
        }
        sd = bd["selector"]
        sel = SelectorLogits(
            tuple(float(x) for x in sd["intercept"]),
            {v: tuple(float(x) for x in c) for v, c in sd.get("coef", {}).items()},
        )
        corr = {frozenset((a, b)): float(r) for a, b, r in bd.get("correlations", [])}
        return LinearBlock(eqs, sel, corr)
    except (KeyError, TypeError, ValueError) as e:
        diags.append(Diagnostic("SCHEMA", f"bad linear block: {e!r}", graph=key))
        return None


def dump_spec(spec: PdsemSpec | LinearGaussianSpec) -> dict:
    """Inverse of :func:`parse_spec` (intervened constants are not representable)."""
    states = []
    for s in spec.states:
        d: dict = {"name": s.name}
        if s.initial:
            d["initial"] = True
        if s.absorbing:
            d["absorbing"] = True
        if s.selector:
            d["selector"] = s.selector
        for field_name, vs in (("variables", s.variables), ("hidden", s.hidden)):
            if vs:
                d[field_name] = []
                for v in vs:
                    vd: dict = {"name": v.name, "card": v.card}
                    if v.labels:
                        vd["labels"] = list(v.labels)
                    if v.named_values:
                        vd["values"] = dict(v.named_values)
                    d[field_name].append(vd)
        states.append(d)
    graphs = {}
    for key in spec.graph_keys():
        g = spec.graphs[key]
        gd: dict = {"directed": sorted([list(e) for e in g.directed])}
        if g.bidirected:
            gd["bidirected"] = sorted(sorted(e) for e in g.bidirected)
        local_hidden = sorted(v for v in g.hidden if not v.startswith(PREV))
        _, dst = spec.key_states(key)
        if local_hidden != sorted(h.name for h in spec.state(dst).hidden):
            gd["hidden"] = local_hidden
        isolated = sorted(v for v in g.fixed if not g.children(v))
        if isolated:
            gd["fixed"] = isolated
        graphs[key] = gd
    doc: dict = {
        "format": FORMAT,
        "kind": "linear_gaussian" if isinstance(spec, LinearGaussianSpec) else "discrete",
        "states": states,
        "transitions": [list(t) for t in spec.transitions],
        "graphs": graphs,
    }
    if isinstance(spec, LinearGaussianSpec):
        doc["parameters"] = {
            key: {
                "equations": {
                    v: {"intercept": e.intercept, "coef": dict(e.coef), "sd": e.sd} for v, e in b.equations.items()
                },
                "correlations": [[*sorted(p), r] for p, r in b.correlations.items()],
                "selector": {"intercept": list(b.selector.intercept),
                             "coef": {v: list(c) for v, c in b.selector.coef.items()}},
            }
            for key, b in spec.blocks.items()
        }
    elif spec.cpts is not None:
        doc["parameters"] = {
            key: {
                v: {"parents": list(k.context_names), "table": k.rows().tolist()}
                for v, k in spec.cpts[key].items()
            }
            for key in spec.graph_keys()
        }
    return doc


def save_spec(spec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dump_spec(spec), indent=1) + "\n")


# -- CSV ------------------------------------------------------------------------------


def csv_header(seed: int | None = None) -> str:
    seed_txt = "none" if seed is None else str(seed)
    return f"# pdsem {__version__} seed={seed_txt}\n"


def write_rows_csv(path: str | Path | io.TextIOBase, header: Sequence[str], rows: Iterable[Sequence], seed=None) -> None:
    own = not hasattr(path, "write")
    fh = open(path, "w", newline="") if own else path
    try:
        fh.write(csv_header(seed))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if own:
            fh.close()


def _value_text(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(int(v))


def write_steps_csv(path, spec, trajectories: Sequence[Trajectory], seed=None) -> None:
    """Long format: one row per visited state with its values as ``X=v;...``."""
    rows = []
    for n, tr in enumerate(trajectories):
        for t, (s, vals) in enumerate(tr.steps, start=1):
            names = spec.state(s).names
            rows.append([n, t, s, ";".join(f"{k}={_value_text(v)}" for k, v in zip(names, vals))])
    write_rows_csv(path, ["trajectory", "step", "state", "values"], rows, seed)


def read_steps_csv(path: str | Path, spec) -> list[Trajectory]:
    """Inverse of :func:`write_steps_csv`; absorption is read off the last selector."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    missing = {"trajectory", "step", "state", "values"} - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    grouped: dict[str, list] = {}
    for lineno, row in enumerate(reader, start=2):
        state = spec.state(row["state"])
        pairs = dict(p.split("=", 1) for p in row["values"].split(";") if p)
        if set(pairs) != set(state.names):
            raise ValueError(f"{path} row {lineno}: values {sorted(pairs)} do not match state {state.name}")
        vals = tuple(
            float(pairs[v.name]) if v.continuous else int(pairs[v.name]) for v in state.variables
        )
        grouped.setdefault(row["trajectory"], []).append((int(row["step"]), state.name, vals))
    out = []
    for key in grouped:
        steps = sorted(grouped[key])
        if [s[0] for s in steps] != list(range(1, len(steps) + 1)):
            raise ValueError(f"{path}: trajectory {key} has missing or repeated steps")
        last_state = spec.state(steps[-1][1])
        sel = steps[-1][2][last_state.names.index(last_state.selector)]
        nxt = spec.successors(last_state.name)[int(sel)]
        out.append(Trajectory(tuple((s, v) for _, s, v in steps), spec.state(nxt).absorbing))
    return out
