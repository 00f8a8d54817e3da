"""Regenerate the shipped example specs under src/pdsem/specs/.

fig4_toy.json is written by hand; everything else here comes from fixed
seeds, with CPT rows rounded to two decimals so the files stay readable.

    python3 scripts/build_example_specs.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "pdsem" / "specs"


def rounded_rows(rng, nrows: int, card: int, lo: float = 0.05) -> list[list[float]]:
    """Dirichlet rows rounded to 0.01 with every entry at least ``lo``."""
    rows = []
    for _ in range(nrows):
        p = rng.dirichlet(np.ones(card))
        p = lo + (1 - lo * card) * p
        r = [round(float(x), 2) for x in p[:-1]]
        rows.append(r + [round(1.0 - sum(r), 2)])
    return rows


def cpt(rng, parents: list[str], card: int = 2, lo: float = 0.05, cards: dict | None = None) -> dict:
    cards = cards or {}
    nrows = int(np.prod([cards.get(p, 2) for p in parents]))
    return {"parents": parents, "table": rounded_rows(rng, nrows, card, lo)}


def parents_of(directed, v):
    return sorted(a for a, b in directed if b == v)


def discrete_params(rng, graphs, states, hidden_of, selector_card) -> dict:
    """Random CPTs for every graph, given per-graph random and hidden names."""
    params = {}
    for key, gd in graphs.items():
        dst = gd["_dst"]
        names = states[dst] + hidden_of.get(dst, [])
        table = {}
        for v in names:
            card = selector_card[dst] if v == "S" else 2
            table[v] = cpt(rng, parents_of(gd["directed"], v), card)
        params[key] = table
    return params


def strip(graphs):
    return {k: {kk: vv for kk, vv in g.items() if not kk.startswith("_")} for k, g in graphs.items()}


def labelled(names, labels):
    return [{"name": n, "labels": labels[n]} if n in labels else {"name": n} for n in names]


# -- hidden-variable front-door example ------------------------------------------------


def fig9_frontdoor() -> dict:
    rng = np.random.default_rng(9)
    abc = ["A", "B", "C"]
    graphs = {
        "init": {"_dst": "s1", "directed": [["U", "A"], ["U", "B"], ["A", "C"], ["B", "C"]]},
        "s1->s2": {"_dst": "s2", "directed": [["prev.A", "A"], ["prev.C", "A"], ["prev.C", "C"], ["A", "B"],
                                               ["B", "C"], ["U", "A"], ["U", "C"], ["C", "S"]]},
        "s2->s3": {"_dst": "s3", "directed": [["prev.A", "A"], ["prev.C", "A"], ["prev.B", "B"], ["prev.C", "C"],
                                               ["A", "B"], ["A", "C"]]},
        "s2->s1": {"_dst": "s1", "directed": [["prev.A", "A"], ["prev.B", "B"], ["prev.C", "C"], ["U", "A"],
                                               ["U", "B"], ["B", "C"], ["A", "C"]]},
    }
    states = {"s1": abc + ["S"], "s2": abc + ["S"], "s3": abc + ["S"]}
    params = discrete_params(rng, graphs, states, {"s1": ["U"], "s2": ["U"]}, {"s1": 1, "s2": 2, "s3": 1})
    # keep revisits of s1 moderate so exact enumeration converges quickly
    params["s1->s2"]["S"]["table"] = [[0.8, 0.2], [0.55, 0.45]]
    return {
        "format": "pdsem/1",
        "kind": "discrete",
        "description": "Hidden-variable model with a front-door structure in s2. U is a hidden binary "
                       "common cause: of A and B when entering s1, of A and C when entering s2.",
        "states": [
            {"name": "s1", "initial": True, "selector": "S", "variables": labelled(abc, {}), "hidden": [{"name": "U"}]},
            {"name": "s2", "selector": "S", "variables": labelled(abc, {}), "hidden": [{"name": "U"}]},
            {"name": "s3", "selector": "S", "variables": labelled(abc, {})},
            {"name": "end", "absorbing": True},
        ],
        "transitions": [["s1", "s2"], ["s2", "s3"], ["s2", "s1"], ["s3", "end"]],
        "graphs": strip(graphs),
        "parameters": params,
    }


# -- bow graph in a transition --------------------------------------------------------


def bow() -> dict:
    rng = np.random.default_rng(11)
    graphs = {
        "init": {"_dst": "s1", "directed": [["A", "C"]]},
        "s1->s2": {"_dst": "s2", "directed": [["prev.C", "A"], ["A", "C"], ["U", "A"], ["U", "C"]]},
    }
    states = {"s1": ["A", "C", "S"], "s2": ["A", "C", "S"]}
    return {
        "format": "pdsem/1",
        "kind": "discrete",
        "description": "Entering s2, a hidden U confounds A and C while A also causes C, so the effect "
                       "of A on C in s2 is not identified.",
        "states": [
            {"name": "s1", "initial": True, "selector": "S", "variables": [{"name": "A"}, {"name": "C"}]},
            {"name": "s2", "selector": "S", "variables": [{"name": "A"}, {"name": "C"}], "hidden": [{"name": "U"}]},
            {"name": "end", "absorbing": True},
        ],
        "transitions": [["s1", "s2"], ["s2", "end"]],
        "graphs": strip(graphs),
        "parameters": discrete_params(rng, graphs, states, {"s2": ["U"]}, {"s1": 1, "s2": 1}),
    }


# -- hidden process carried across steps ----------------------------------------------


def fig3ab_violation() -> dict:
    fixed_hidden = {"directed": [["U", "A"], ["U", "Y"], ["A", "Y"]]}
    step = {"directed": [["prev.U", "U"], ["prev.A", "A"], ["U", "A"], ["U", "Y"], ["A", "Y"]]}
    return {
        "format": "pdsem/1",
        "kind": "discrete",
        "description": "A hidden U persists from step to step (prev.U -> U), so a transition graph "
                       "depends on a hidden vertex of the previous step. Rejected by validation.",
        "states": [
            {"name": "s1", "initial": True, "selector": "S", "variables": [{"name": "A"}, {"name": "Y"}],
             "hidden": [{"name": "U"}]},
            {"name": "s2", "selector": "S", "variables": [{"name": "A"}, {"name": "Y"}],
             "hidden": [{"name": "U"}]},
            {"name": "end", "absorbing": True},
        ],
        "transitions": [["s1", "s2"], ["s2", "s2"], ["s2", "end"]],
        "graphs": {"init": fixed_hidden, "s1->s2": step, "s2->s2": step},
    }


# -- septoplasty structure ----------------------------------------------------------------

SEPTO_TOOLS = {
    "s1": ["K", "O"],
    "s2": ["K", "C1", "O"],
    "s3": ["K", "C1", "D1", "D2", "O"],
    "s4": ["K", "C1", "G", "O"],
    "s5": ["D1", "D2", "O"],
    "s6": ["K", "C1", "O"],
}
SEPTO_TRANSITIONS = [
    ("s1", "s1"), ("s1", "s2"),
    ("s2", "s2"), ("s2", "s3"),
    ("s3", "s3"), ("s3", "s4"), ("s3", "s6"),
    ("s4", "s4"), ("s4", "s5"), ("s4", "s6"), ("s4", "end"),
    ("s5", "s5"), ("s5", "s4"), ("s5", "s6"), ("s5", "end"),
    ("s6", "s6"), ("s6", "s4"),
]
SEPTO_NAMES = {
    "K": "knife", "G": "gorney scissors", "C1": "cottle", "D1": "short needle driver",
    "D2": "long needle driver", "O": "other tools", "C2": "suction cannula", "M": "main surgeon present",
    "S": "suction present", "A1": "main surgeon is an attending", "A2": "suction done by an attending",
    "T": "phase lasts more than 10 seconds",
}


def septo_vars(state: str) -> list[str]:
    return SEPTO_TOOLS[state] + ["C2", "M", "S", "A1", "A2", "T"]


def septo_state_edges(state: str) -> list[list[str]]:
    tools = SEPTO_TOOLS[state]
    edges = [["M", "S"], ["M", "A1"], ["A1", "A2"], ["S", "A2"], ["A2", "C2"]]
    edges += [["A1", t] for t in tools]
    edges += [[x, "T"] for x in tools + ["C2", "A1", "A2"]]
    edges += [[x, "NEXT"] for x in ["A1", "M", "A2", "S"]]
    return edges


def septoplasty_structure() -> dict:
    graphs = {"init": {"directed": septo_state_edges("s1")}}
    for i, j in SEPTO_TRANSITIONS:
        if j == "end":
            continue
        carried = [[f"prev.{v}", v] for v in septo_vars(j) if v in septo_vars(i)]
        graphs[f"{i}->{j}"] = {"directed": septo_state_edges(j) + carried}
    states = [
        {"name": s, "initial": s == "s1", "selector": "NEXT",
         "variables": [{"name": v, "labels": ["no", "yes"]} for v in septo_vars(s)]}
        for s in SEPTO_TOOLS
    ]
    for s in states:
        if not s["initial"]:
            del s["initial"]
    states.append({"name": "end", "absorbing": True})
    return {
        "format": "pdsem/1",
        "kind": "discrete",
        "description": "Septoplasty phases s1-s6 with binary activity indicators: "
                       + "; ".join(f"{k}: {v}" for k, v in SEPTO_NAMES.items())
                       + ". NEXT picks the next phase from A1, M, A2 and S. Structure only.",
        "states": states,
        "transitions": [list(t) for t in SEPTO_TRANSITIONS],
        "graphs": graphs,
    }


# -- linear Gaussian surgery ----------------------------------------------------------------


def sim61_linear_gaussian() -> dict:
    cont = {"card": None}
    b = {"name": "B", **cont, "values": {"trainee": -1.0, "experienced": 1.0}}

    def state(name, **extra):
        return {"name": name, "selector": "S",
                "variables": [{"name": "A", **cont}, b, {"name": "C", **cont}], **extra}

    graphs = {
        "init": {"directed": [["A", "B"], ["A", "C"], ["B", "C"]]},
        "s1->s2": {"directed": [["prev.A", "A"], ["prev.C", "A"], ["prev.C", "C"], ["A", "C"], ["B", "C"],
                                ["C", "S"]],
                   "bidirected": [["A", "B"]]},
        "s2->s3": {"directed": [["prev.A", "A"], ["prev.C", "A"], ["prev.B", "B"], ["A", "B"], ["A", "C"],
                                ["prev.C", "C"]]},
        "s2->s1": {"directed": [["prev.A", "A"], ["prev.C", "A"], ["prev.A", "B"], ["prev.B", "B"],
                                ["prev.C", "B"], ["prev.C", "C"], ["B", "C"], ["A", "C"]]},
    }
    one = {"intercept": [0.0]}
    params = {
        "init": {
            "equations": {
                "A": {"intercept": 0.0, "sd": 1.0},
                "B": {"intercept": 0.0, "coef": {"A": 0.3}, "sd": 1.0},
                "C": {"intercept": 0.5, "coef": {"A": -0.4, "B": -0.6}, "sd": 1.0},
            },
            "selector": one,
        },
        "s1->s2": {
            "equations": {
                "A": {"intercept": 0.0, "coef": {"prev.A": 0.6, "prev.C": -0.2}, "sd": 1.0},
                "B": {"intercept": 0.0, "sd": 1.0},
                "C": {"intercept": 0.5, "coef": {"prev.C": 0.3, "A": -0.4, "B": -0.3}, "sd": 1.0},
            },
            "correlations": [["A", "B", 0.5]],
            "selector": {"intercept": [0.0, 0.1], "coef": {"C": [0.0, 0.4]}},
        },
        "s2->s3": {
            "equations": {
                "A": {"intercept": 0.0, "coef": {"prev.A": 0.6, "prev.C": -0.2}, "sd": 1.0},
                "B": {"intercept": 0.0, "coef": {"prev.B": 0.8, "A": 0.1}, "sd": 0.6},
                "C": {"intercept": 0.0, "coef": {"A": -0.3, "prev.C": 0.2}, "sd": 1.0},
            },
            "selector": one,
        },
        "s2->s1": {
            "equations": {
                "A": {"intercept": 0.0, "coef": {"prev.A": 0.6, "prev.C": -0.2}, "sd": 1.0},
                "B": {"intercept": 0.0, "coef": {"prev.A": 0.1, "prev.B": 0.8, "prev.C": 0.05}, "sd": 0.6},
                "C": {"intercept": 0.5, "coef": {"prev.C": 0.3, "A": -0.4, "B": -0.6}, "sd": 1.0},
            },
            "selector": one,
        },
    }
    return {
        "format": "pdsem/1",
        "kind": "linear_gaussian",
        "description": "Continuous three-stage surgery. A: patient status, B: surgeon experience "
                       "(experienced = 1, trainee = -1), C: stage duration. Entering s2, A and B share a "
                       "hidden cause (error correlation 0.5). Longer s2 stages make a return to s1 more "
                       "likely; experience shortens stages.",
        "states": [state("s1", initial=True), state("s2"), state("s3"), {"name": "end", "absorbing": True}],
        "transitions": [["s1", "s2"], ["s2", "s3"], ["s2", "s1"], ["s3", "end"]],
        "graphs": graphs,
        "parameters": params,
    }


BUILDERS = {
    "fig9_frontdoor": fig9_frontdoor,
    "bow": bow,
    "fig3ab_violation": fig3ab_violation,
    "septoplasty_structure": septoplasty_structure,
    "sim61_linear_gaussian": sim61_linear_gaussian,
}


def main() -> None:
    for name, build in BUILDERS.items():
        path = OUT / f"{name}.json"
        path.write_text(json.dumps(build(), indent=1) + "\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
