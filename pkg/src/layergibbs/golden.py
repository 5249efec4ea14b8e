"""Store of exact reference values.

Each entry is keyed by the SHA-256 of its canonical problem description and
records the value, the engine that produced it and the code version.  The
store ships in ``layergibbs/data/golden.json``; ``regenerate`` recomputes it
from the exact engine.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

from .lattice import MINUS, PLUS, LayerConfig, LayerInterval, Site2D

GOLDEN_FILE = "golden.json"


def problem_hash(problem: dict) -> str:
    return hashlib.sha256(json.dumps(problem, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass(frozen=True)
class GoldenCase:
    name: str
    problem: dict
    compute: Callable[[], float]

    @property
    def key(self) -> str:
        return problem_hash({"name": self.name, **self.problem})


def _minus(j, k):
    return LayerConfig.all_minus((j, k))


def _alt(j, k):
    return LayerConfig.alternating((j, k))


def _cases() -> list[GoldenCase]:
    from .decimation import decimated_potential
    from .exact import BoxProblem, Observable, covariance, expectation, layer_kernel, partition_function, plus_engine
    from .potentials import (
        Potential,
        hamiltonian,
        telescope_potential_abstract,
        telescope_potential_closed,
        vacuum_potential,
    )
    from .thermo import hamiltonian_free_bc

    def box_logz():
        # 3x3 box = {-1..1}^2 inside plus walls
        return partition_function(BoxProblem(1, 0.5, 0.0, "plus"))

    def exp_minus_layer():
        p = BoxProblem(2, 0.6, 0.0, "plus", frozen_layer=_minus(-2, 2))
        return expectation(p, Observable.exp_spin(Site2D(0, 1), 1.2)).value

    def cov_alt_layer():
        p = BoxProblem(2, 0.6, 0.0, "plus", frozen_layer=_alt(-2, 2))
        return covariance(p, Observable.spin(Site2D(-1, 1)), Observable.spin(Site2D(1, 1))).value

    eng = lambda: plus_engine(3, 0.6, 0.0)  # noqa: E731
    return [
        GoldenCase("log_partition", {"n": 1, "beta": 0.5, "h": 0.0, "boundary": "plus"}, box_logz),
        GoldenCase("expectation", {"n": 2, "beta": 0.6, "layer": "all-minus[-2,2]", "f": "exp(1.2 X(0,1))"},
                   exp_minus_layer),
        GoldenCase("covariance", {"n": 2, "beta": 0.6, "layer": "alternating[-2,2]", "f": "X(-1,1)",
                                  "g": "X(1,1)"}, cov_alt_layer),
        GoldenCase("layer_kernel", {"n": 3, "beta": 0.6, "h": 0.0, "V": [0], "sigma": "+", "omega": "all-plus"},
                   lambda: layer_kernel([0], {0: PLUS}, LayerConfig.all_plus(), 3, 0.6, 0.0)),
        GoldenCase("hamiltonian", {"n": 3, "beta": 0.6, "V": [-1, 1], "xi": "all-minus"},
                   lambda: hamiltonian(LayerInterval(-1, 1), _minus(-3, 3), eng()).value),
        GoldenCase("vacuum_potential", {"n": 3, "beta": 0.6, "A": [0, 1], "xi": "all-minus"},
                   lambda: vacuum_potential((0, 1), _minus(-3, 3), eng()).value),
        GoldenCase("telescope_abstract", {"n": 3, "beta": 0.6, "i": 0, "m": 1, "xi": "all-minus"},
                   lambda: telescope_potential_abstract(0, 1, _minus(-3, 3), eng()).value),
        GoldenCase("telescope_closed", {"n": 3, "beta": 0.6, "jk": [0, 2], "xi": "all-minus"},
                   lambda: telescope_potential_closed((0, 2), _minus(-3, 3), eng()).value),
        GoldenCase("decimated", {"n": 3, "beta": 0.6, "b": 5, "jk": [0, 5], "xi": "minus at 0 and 5",
                                 "center": True},
                   lambda: decimated_potential((0, 5), LayerConfig.from_sites({0: MINUS, 5: MINUS}), 5, eng(),
                                               center=True).value),
        GoldenCase("hamiltonian_free_bc", {"n": 3, "beta": 0.6, "V": [-2, 2], "xi": "alternating",
                                           "potential": "closed"},
                   lambda: hamiltonian_free_bc(LayerInterval(-2, 2), _alt(-2, 2),
                                               Potential(eng(), "closed")).value),
    ]


def golden_tables() -> dict:
    """``table.json`` of ``layergibbs potential --beta 0.6 --engine exact --n 3 --xi XI`` per ``XI``."""
    from .cli import potential_outputs, resolve_config

    out = {}
    for xi in ("all-minus", "alternating"):
        cfg = resolve_config("potential", None, {"beta": 0.6, "engine": "exact", "n": 3, "xi": xi})
        out[xi] = potential_outputs(cfg)["table.json"]
    return out


def regenerate() -> dict:
    from . import __version__
    from .exact import ExactEngine

    entries = {}
    for case in _cases():
        v = float(case.compute())
        entries[case.key] = {"name": case.name, "problem": case.problem, "value": v,
                             "engine": ExactEngine.engine_tag, "code_version": __version__}
    return {"entries": entries, "tables": golden_tables()}


def _default_path() -> Path:
    return Path(str(resources.files("layergibbs") / "data" / GOLDEN_FILE))


def save(store: dict, path: str | Path | None = None) -> Path:
    path = Path(path) if path is not None else _default_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(store, sort_keys=True, indent=1) + "\n")
    return path


def load(path: str | Path | None = None) -> dict:
    path = Path(path) if path is not None else _default_path()
    return json.loads(path.read_text())


def lookup(name: str, store: dict | None = None) -> float:
    store = store or load()
    for e in store["entries"].values():
        if e["name"] == name:
            return e["value"]
    raise KeyError(name)


def compare(store: dict | None = None, rtol: float = 1e-12) -> list[tuple[str, float, float]]:
    """Recompute every case; returns ``(name, stored, recomputed)`` for the mismatches."""
    store = store or load()
    bad = []
    for case in _cases():
        e = store["entries"].get(case.key)
        v = float(case.compute())
        if e is None or not math.isclose(e["value"], v, rel_tol=rtol, abs_tol=1e-15):
            bad.append((case.name, None if e is None else e["value"], v))
    return bad
