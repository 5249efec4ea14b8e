"""Command-line interface: ``layergibbs <command> [options]``.

Every command reads an optional JSON config (``--config``), lets flags
override it, writes its outputs plus ``manifest.json`` to ``--out`` and
embeds the manifest hash in every file.  Exit codes: 0 ok, 1 a check
failed, 2 usage error.

Config schema (all keys optional, flat or nested under the command name)::

    {"beta": 0.6, "h": 0.0, "n": 3, "engine": "exact",
     "mc": {"sweeps": 20000, "burn_in": 2000, "chains": 4, "seed": 0, "thinning": 1},
     ...command-specific keys, see ``layergibbs <command> --help``}
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "LAYERGIBBS_THREADS"

MC_DEFAULTS = {"sweeps": 20_000, "burn_in": 2_000, "chains": 4, "seed": 0, "thinning": 1}

DEFAULTS: dict[str, dict] = {
    "potential": {"beta": 0.6, "h": 0.0, "n": 3, "engine": "exact", "xi": "all-minus", "max_length": None,
                  "kind": "telescoping", "mc": MC_DEFAULTS},
    "verify": {"beta": 0.6, "h": 0.0, "n": 3, "width": 3, "corrupt": None},
    "decay": {"beta": 0.7, "h": 0.0, "n": 24, "mode": "typical", "samples": 8, "max_length": 12,
              "sample_seed": 11, "mc": dict(MC_DEFAULTS, sweeps=40_000, burn_in=1_000)},
    "thermo": {"beta": 0.7, "h": 0.0, "n": 12, "quantity": "pressure", "n_list": [1, 2, 3],
               "engine": "mc", "mc": MC_DEFAULTS},
    "decimate": {"beta": 0.8, "h": 0.0, "n": 24, "scheme": "regular:5", "window": None, "max_length": None,
                 "mc": MC_DEFAULTS},
    "probe": {"beta": 0.9, "h": 0.0, "N": 24, "n_list": [2, 4, 6, 8], "mc": dict(MC_DEFAULTS, burn_in=5_000)},
    "golden-regen": {"check": False, "path": None},
}


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config and manifest


def resolve_config(command: str, file_cfg: dict | None, flags: dict) -> dict:
    """Defaults, then the config file, then the flags that were given."""
    if command not in DEFAULTS:
        raise UsageError(f"unknown command {command!r}")
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    src = dict(file_cfg or {})
    src = src.get(command, src)
    for k, v in list(src.items()) + [(k, v) for k, v in flags.items() if v is not None]:
        if k == "mc" or k.startswith("mc_"):
            if "mc" not in cfg:
                raise UsageError(f"{command} takes no Monte Carlo settings")
            if k == "mc":
                cfg["mc"].update(v)
            else:
                cfg["mc"][k[3:]] = v
        elif k in cfg:
            cfg[k] = v
        else:
            raise UsageError(f"unknown config key {k!r} for {command}")
    return cfg


def dump_config(command: str, cfg: dict) -> str:
    return json.dumps({command: cfg}, sort_keys=True, indent=1)


def parse_config(text: str) -> tuple[str, dict]:
    d = json.loads(text)
    if len(d) != 1:
        raise UsageError("a serialized config holds exactly one command")
    (command, cfg), = d.items()
    return command, resolve_config(command, cfg, {})


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _versions() -> dict:
    import numba
    import scipy
    import sklearn

    return {"layergibbs": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "scikit-learn": sklearn.__version__}


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list = field(default_factory=list)
    versions: dict = field(default_factory=dict)
    git: str = "unknown"
    outputs: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def hash(self) -> str:
        """Hash of what determines the outputs: command, config and code version."""
        key = {"command": self.command, "config": self.config, "code_version": __version__}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hash"] = self.hash
        return d


class OutputDir:
    """Single writer for all files of a run."""

    def __init__(self, path: str | Path, manifest: RunManifest):
        self.path = Path(path)
        self.manifest = manifest
        self.path.mkdir(parents=True, exist_ok=True)

    def write_text(self, name: str, text: str) -> Path:
        p = self.path / name
        p.write_text(text)
        self.manifest.outputs.append(str(p))
        return p

    def write_json(self, name: str, obj: dict) -> Path:
        return self.write_text(name, json.dumps({"manifest_hash": self.manifest.hash, **obj},
                                                sort_keys=True, indent=1) + "\n")

    def write_csv(self, name: str, header: list, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# manifest_hash={self.manifest.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        return self.write_text(name, buf.getvalue())

    def write_plot(self, rows, name: str = "plot.csv") -> Path:
        """Plot data: ``x, y, y_err, series_label``."""
        return self.write_csv(name, ["x", "y", "y_err", "series_label"], rows)

    def finish(self, t0: float) -> Path:
        self.manifest.wall_clock = time.time() - t0
        p = self.path / "manifest.json"
        self.manifest.outputs.append(str(p))
        p.write_text(json.dumps(self.manifest.to_dict(), sort_keys=True, indent=1) + "\n")
        return p


def thread_count(flag: int | None) -> int:
    if flag is not None:
        n = flag
    else:
        env = os.environ.get(THREADS_ENV)
        try:
            n = int(env) if env else 1
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    if n < 1:
        raise UsageError("thread count must be positive")
    return n


def parallel_map(func, items, threads: int) -> list:
    """``[func(x) for x in items]`` on at most ``threads`` workers, results in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# helpers


def _mc_config(cfg: dict):
    from .mc import McConfig

    return McConfig(**cfg["mc"])


def _engine(cfg: dict, n: int | None = None):
    from .exact import plus_engine
    from .mc import MCEngine

    n = cfg["n"] if n is None else n
    if cfg.get("engine", "mc") == "exact":
        return plus_engine(n, cfg["beta"], cfg["h"])
    if cfg.get("engine", "mc") == "mc":
        return MCEngine(n, cfg["beta"], cfg["h"], _mc_config(cfg))
    raise UsageError("engine must be 'exact' or 'mc'")


def parse_xi(spec: str, n: int, beta: float = 0.0, h: float = 0.0, mc=None):
    """``all-minus | all-plus | alternating | sample:SEED | <path to JSON>`` on the layer ``[-n, n]``."""
    from .lattice import LayerConfig
    from .mc import McConfig, sample_layer_array

    if spec == "all-minus":
        return LayerConfig.all_minus((-n, n))
    if spec == "all-plus":
        return LayerConfig.all_plus((-n, n))
    if spec == "alternating":
        return LayerConfig.alternating((-n, n))
    if spec.startswith("sample:"):
        try:
            seed = int(spec.split(":", 1)[1])
        except ValueError:
            raise UsageError("sample:SEED needs an integer seed") from None
        c = (mc or McConfig()).replace(seed=seed, chains=2)
        rows = sample_layer_array(beta, h, n, c)
        return LayerConfig.from_array(rows[0, -1], -n)
    p = Path(spec)
    if not p.exists():
        raise UsageError(f"xi must be all-minus, all-plus, alternating, sample:SEED or a file; got {spec!r}")
    d = json.loads(p.read_text())
    return LayerConfig.from_dict(d) if isinstance(d, dict) else LayerConfig.from_array(d, -(len(d) // 2))


def _parse_kind(kind: str) -> tuple[str, int | None]:
    if kind in ("vacuum", "telescoping"):
        return kind, None
    if kind == "closed":
        return "telescoping_closed_form", None
    if kind.startswith("decimated:"):
        try:
            b = int(kind.split(":", 1)[1])
        except ValueError:
            raise UsageError("decimated:B needs an integer spacing") from None
        return "decimated", b
    raise UsageError("kind must be vacuum, telescoping, closed or decimated:B")


def _parse_scheme(spec: str):
    from .decimation import DecimationScheme

    parts = spec.split(":")
    try:
        if parts[0] == "regular" and len(parts) == 2:
            return DecimationScheme.regular(int(parts[1]))
        if parts[0] == "random" and len(parts) in (2, 3):
            return DecimationScheme.random(float(parts[1]), int(parts[2]) if len(parts) == 3 else 0)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    raise UsageError("scheme must be regular:B or random:P[:SEED]")


# ---------------------------------------------------------------------------
# commands


def potential_outputs(cfg: dict) -> dict[str, str]:
    """File name -> content for ``potential``; shared with the golden store."""
    from .potentials import build_table

    kind, b = _parse_kind(cfg["kind"])
    eng = _engine(cfg)
    xi = parse_xi(cfg["xi"], cfg["n"], cfg["beta"], cfg["h"], _mc_config(cfg) if cfg["engine"] == "mc" else None)
    method = "coupled" if cfg["engine"] == "mc" and kind == "telescoping" else None
    table = build_table(xi, eng, kind=kind, max_length=cfg["max_length"], method=method, b=b)
    manifest = RunManifest("potential", cfg)
    h = manifest.hash
    tab = json.dumps({"manifest_hash": h, **table.to_dict()}, sort_keys=True, indent=1) + "\n"
    rows = [(A.k - A.j, table[A].value, table[A].stderr, f"j={A.j}") for A in table.intervals()]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "y_err", "series_label"])
    for r in rows:
        w.writerow([r[0], repr(r[1]), repr(r[2]), r[3]])
    return {"table.json": tab, "table.csv": f"# manifest_hash={h}\n" + table.to_csv(),
            "plot.csv": f"# manifest_hash={h}\n" + buf.getvalue()}


def cmd_potential(cfg: dict, out: OutputDir, threads: int) -> int:
    for name, text in potential_outputs(cfg).items():
        out.write_text(name, text)
    return EXIT_OK


def verify_suite(cfg: dict) -> list[dict]:
    """Identity residuals on the exact engine; each row has name, anchor, residual, tolerance, passed."""
    from itertools import product

    from .exact import plus_engine
    from .lattice import LayerConfig, LayerInterval
    from .potentials import Potential, verify_moebius_roundtrip, verify_resummation, verify_telescoping_identity
    from .stats import Estimate
    from .thermo import exact_layer_marginal, partition_free, variational_gap

    n, w = cfg["n"], cfg["width"]
    if w > 2 * n + 1:
        raise UsageError("width exceeds the box layer")
    eng = plus_engine(n, cfg["beta"], cfg["h"])
    U = Potential(eng, "abstract")
    corrupt = cfg["corrupt"]
    if corrupt is not None and corrupt not in ("telescoping", "partition", "variational"):
        raise UsageError("corrupt must be telescoping, partition or variational")

    def damaged(A, xi):
        e = U(A, xi)
        return Estimate.exact(e.value * 1.01 + (0.01 if len(A) == 1 and xi.spin(A.j) == -1 else 0.0))

    pot = {name: (damaged if corrupt == name else U) for name in ("telescoping", "partition", "variational")}
    lo = -(w // 2)
    V = LayerInterval(lo, lo + w - 1)
    configs = [LayerConfig.from_array(c, lo) for c in product((1, -1), repeat=w)]
    rows = []

    def add(name, anchor, residual, tol):
        ok = residual < tol
        rows.append({"identity": name, "anchor": anchor, "residual": residual, "tolerance": tol, "passed": bool(ok)})

    add("moebius", "sum of vacuum potentials over subsets = relative Hamiltonian",
        max(verify_moebius_roundtrip(V, xi, eng) for xi in configs), 1e-9)
    add("telescoping", "H_V = sum of U over intervals meeting V",
        max(verify_telescoping_identity(V, xi, eng, pot["telescoping"]) for xi in configs), 1e-9)
    add("resummation", "U on a telescoping cell = sum of vacuum potentials",
        max(verify_resummation(V.k, m, xi, eng) for xi in configs for m in range(w)), 1e-9)
    a = partition_free(V, potential=pot["partition"]).value
    b = partition_free(V, engine=eng, route="kernel").value
    add("partition", "log Z^f_V = -log gamma_V(+|+)", abs(a - b), 1e-8)
    m = exact_layer_marginal(eng, V)
    plus = LayerConfig.all_plus()
    gap = variational_gap(m, plus, pot["variational"], cutoff=2 * n, sites_range=(-n, n)).value
    # the same relative entropy straight from the kernel
    kl = math.fsum(p * (math.log(p) - eng.log_kernel(V.sites, LayerConfig(V, c), plus).value)
                   for c, p in m.probabilities.items() if p > 0)
    add("variational", "S(mu | gamma_V(.|+)) from the potential = from the kernel, and >= 0",
        abs(gap - kl) if gap >= -1e-9 else math.inf, 1e-9)
    return rows


def cmd_verify(cfg: dict, out: OutputDir, threads: int) -> int:
    rows = verify_suite(cfg)
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['identity']}: residual={r['residual']:.3e} "
              f"tol={r['tolerance']:.0e} ({r['anchor']})")
    out.write_json("verify.json", {"rows": rows})
    out.write_csv("verify.csv", ["identity", "residual", "tolerance", "passed"],
                  [(r["identity"], r["residual"], r["tolerance"], r["passed"]) for r in rows])
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_FAIL


def cmd_decay(cfg: dict, out: OutputDir, threads: int) -> int:
    from .convergence import stress_decay_scan, typical_decay
    from .decimation import stress_set
    from .lattice import LayerConfig
    from .mc import McConfig, MCEngine, sample_layer_array
    from .potentials import Potential

    eng = MCEngine(cfg["n"], cfg["beta"], cfg["h"], _mc_config(cfg))
    rows, plot = [], []
    if cfg["mode"] == "typical":
        S = sample_layer_array(cfg["beta"], cfg["h"], cfg["n"],
                               McConfig(sweeps=2100, burn_in=500, chains=2, seed=cfg["sample_seed"], thinning=200,
                                        n_blocks=2))
        flat = S.reshape(-1, S.shape[-1])
        pick = np.linspace(0, len(flat) - 1, cfg["samples"]).astype(int)
        xis = [LayerConfig.from_array(flat[p], -cfg["n"]) for p in pick]
        U = Potential(eng, "coupled", center=True)
        res = parallel_map(lambda xi: typical_decay(xi, eng, anchor=None, max_length=cfg["max_length"],
                                                    potential=U), xis, threads)
        ok = True
        for t, (xi, r) in enumerate(zip(xis, res)):
            fit = r["fit"]
            passed = r["vacuous"] or (fit is not None and fit.excludes_zero())
            ok &= passed
            for L, e in zip(r["lengths"], r["estimates"]):
                rows.append((f"sample-{t}", r["anchor"], r["ell"], int(L), e.value, e.stderr,
                             fit.lambda_ if fit else "", fit.ci_[0] if fit else "", fit.ci_[1] if fit else "",
                             passed, r["message"]))
                plot.append((int(L), abs(e.value), e.stderr, f"sample-{t}"))
            print(f"sample-{t}: anchor={r['anchor']} ell={r['ell']} "
                  + (f"lambda={fit.lambda_:.3f} CI=[{fit.ci_[0]:.3f}, {fit.ci_[1]:.3f}]" if fit else r["message"]))
        out.write_csv("decay.csv", ["sample", "anchor", "ell", "length", "U", "stderr", "lambda", "ci_low",
                                    "ci_high", "passed", "message"], rows)
    elif cfg["mode"] == "stress":
        n = cfg["n"]
        st = {k: v for k, v in stress_set(range(-n, n + 1)).items() if k != "all-plus"}
        scan = stress_decay_scan(eng, st, lengths=range(2, cfg["max_length"] + 1))
        ok = scan.passed
        rows = [(r["length"], r["worst_abs_U"], r["stderr"], lab) for r, lab in zip(scan.rows("stress"),
                                                                                    scan.worst_label)]
        plot = [(r[0], r[1], r[2], "worst") for r in rows]
        out.write_csv("decay.csv", ["length", "worst_abs_U", "stderr", "argmax"], rows)
        fit = scan.fit
        print(f"stress scan: " + (f"lambda={fit.lambda_:.3f} CI=[{fit.ci_[0]:.3f}, {fit.ci_[1]:.3f}]" if fit
                                  else scan.message))
    else:
        raise UsageError("mode must be typical or stress")
    out.write_plot(plot)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_thermo(cfg: dict, out: OutputDir, threads: int) -> int:
    from .mc import sample_layer_array
    from .thermo import (
        RelativeLayerWeights,
        bernoulli_domination_check,
        pressure_series,
        dependence_condition,
        variational_functional,
    )

    q, n_list = cfg["quantity"], list(cfg["n_list"])
    series = []
    ok = True
    if q == "pressure":
        series = [pressure_series(n_list, _engine(cfg), route="weights")]
    elif q in ("variational", "condition", "bernoulli"):
        if cfg["engine"] != "mc":
            raise UsageError(f"{q} needs engine mc")
        S = sample_layer_array(cfg["beta"], cfg["h"], cfg["n"], _mc_config(cfg))
        if q == "variational":
            W = RelativeLayerWeights(_engine(cfg), (-max(n_list), max(n_list)))
            res = variational_functional(S, W, n_list)
            series = list(res.values())
        elif q == "condition":
            series = [dependence_condition(S, cfg["beta"], n_list)]
        else:
            res = bernoulli_domination_check(S, cfg["beta"])
            ok = bool(res["passed"])
            out.write_json("bernoulli.json", {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                                              for k, v in res.items()})
            print(f"bernoulli domination: {'PASS' if ok else 'FAIL'}")
    else:
        raise UsageError("quantity must be pressure, variational, condition or bernoulli")
    plot = []
    for s in series:
        out.write_csv(f"{s.label.replace('/', '_') or q}.csv", ["n", "value", "stderr"],
                      zip(s.n, s.values, s.stderr))
        plot += s.plot_rows()
        print(s.label, " ".join(f"{v:.6g}+-{e:.2g}" for v, e in zip(s.values, s.stderr)))
    out.write_plot(plot)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_decimate(cfg: dict, out: OutputDir, threads: int) -> int:
    from .decimation import decimated_decay_scan, make_mask, stress_set
    from .lattice import LayerInterval
    from .mc import MCEngine

    scheme = _parse_scheme(cfg["scheme"])
    eng = MCEngine(cfg["n"], cfg["beta"], cfg["h"], _mc_config(cfg))
    window = LayerInterval(*cfg["window"]) if cfg["window"] else None
    if window is None:
        window = LayerInterval(0, 4 * scheme.b) if scheme.kind == "regular" else LayerInterval(-16, 16)
    kept = make_mask(scheme, window)
    st = {k: v for k, v in stress_set(kept).items() if k != "all-plus"}
    scan = decimated_decay_scan(scheme, eng, st, window=window, max_length=cfg["max_length"])
    rows = list(scan.rows(scheme.label()))
    out.write_csv("decimate.csv", ["scheme", "length", "worst_abs_U", "stderr", "argmax"],
                  [(r["scheme"], r["length"], r["worst_abs_U"], r["stderr"], lab)
                   for r, lab in zip(rows, scan.worst_label)])
    out.write_plot([(r["length"], r["worst_abs_U"], r["stderr"], scheme.label()) for r in rows])
    fit = scan.fit
    print(f"{scheme.label()}: " + (f"lambda={fit.lambda_:.3f} CI=[{fit.ci_[0]:.3f}, {fit.ci_[1]:.3f}] "
                                 if fit else "") + ("PASS" if scan.passed else f"FAIL ({scan.message})"))
    return EXIT_OK if scan.passed else EXIT_FAIL


def cmd_probe(cfg: dict, out: OutputDir, threads: int) -> int:
    from .thermo import quasilocality_probe

    s = quasilocality_probe(cfg["beta"], cfg["h"], list(cfg["n_list"]), N=cfg["N"], config=_mc_config(cfg))
    out.write_csv("probe.csv", ["n", "D_n", "stderr"], zip(s.n, s.values, s.stderr))
    out.write_plot(s.plot_rows())
    for n, v, e in zip(s.n, s.values, s.stderr):
        print(f"n={n}: D_n={v:.4g} +- {e:.2g}")
    return EXIT_OK


def cmd_golden_regen(cfg: dict, out: OutputDir, threads: int) -> int:
    from . import golden

    if cfg["check"]:
        bad = golden.compare(golden.load(cfg["path"]))
        for name, stored, new in bad:
            print(f"MISMATCH {name}: stored={stored} recomputed={new}")
        print("golden store " + ("FAIL" if bad else "PASS"))
        return EXIT_FAIL if bad else EXIT_OK
    p = golden.save(golden.regenerate(), cfg["path"])
    print(f"wrote {p}")
    return EXIT_OK


COMMANDS = {
    "potential": cmd_potential,
    "verify": cmd_verify,
    "decay": cmd_decay,
    "thermo": cmd_thermo,
    "decimate": cmd_decimate,
    "probe": cmd_probe,
    "golden-regen": cmd_golden_regen,
}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _mc_flags(p):
    g = p.add_argument_group("Monte Carlo")
    g.add_argument("--sweeps", dest="mc_sweeps", type=int)
    g.add_argument("--burn-in", dest="mc_burn_in", type=int)
    g.add_argument("--chains", dest="mc_chains", type=int)
    g.add_argument("--seed", dest="mc_seed", type=int)
    g.add_argument("--thinning", dest="mc_thinning", type=int)


def _model_flags(p, n_help="box half-width"):
    p.add_argument("--beta", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--n", type=int, help=n_help)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="layergibbs", description="Potentials and thermodynamics of the Ising plus-phase layer.")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--out", default="layergibbs-out", help="output directory")
    p.add_argument("--threads", type=int, help=f"worker cap (default ${THREADS_ENV} or 1)")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("--version", action="version", version=f"layergibbs {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("potential", help="tables of vacuum / telescoping / decimated potentials")
    _model_flags(s)
    s.add_argument("--engine", choices=["exact", "mc"])
    s.add_argument("--xi", help="all-minus | all-plus | alternating | sample:SEED | FILE")
    s.add_argument("--max-length", type=int)
    s.add_argument("--kind", help="vacuum | telescoping | closed | decimated:B")
    _mc_flags(s)

    s = sub.add_parser("verify", help="identity suite on the exact engine (exit 1 on failure)")
    _model_flags(s)
    s.add_argument("--width", type=int, help="|V| of the tested window")
    s.add_argument("--corrupt", choices=["telescoping", "partition", "variational"],
                   help="perturb the potential fed to one identity (negative control)")

    s = sub.add_parser("decay", help="decay of the potential on sampled or stress configurations")
    _model_flags(s)
    s.add_argument("--mode", choices=["typical", "stress"])
    s.add_argument("--samples", type=int)
    s.add_argument("--sample-seed", type=int)
    s.add_argument("--max-length", type=int)
    _mc_flags(s)

    s = sub.add_parser("thermo", help="pressure, variational gap, side condition, Bernoulli domination")
    _model_flags(s)
    s.add_argument("--engine", choices=["exact", "mc"])
    s.add_argument("--quantity", choices=["pressure", "variational", "condition", "bernoulli"])
    s.add_argument("--n-list", type=int, nargs="+")
    _mc_flags(s)

    s = sub.add_parser("decimate", help="uniform decay of decimated potentials")
    _model_flags(s)
    s.add_argument("--scheme", help="regular:B | random:P[:SEED]")
    s.add_argument("--window", type=int, nargs=2)
    s.add_argument("--max-length", type=int)
    _mc_flags(s)

    s = sub.add_parser("probe", help="quasilocality probe D_n")
    s.add_argument("--beta", type=float)
    s.add_argument("--h", type=float)
    s.add_argument("--N", type=int, help="box half-width")
    s.add_argument("--n-list", type=int, nargs="+")
    _mc_flags(s)

    s = sub.add_parser("golden-regen", help="regenerate (or --check) the golden store")
    s.add_argument("--check", action="store_true", default=None)
    s.add_argument("--path")
    return p


_GLOBAL = {"config", "out", "threads", "dump_config", "command"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = thread_count(args.threads)
        file_cfg = json.loads(Path(args.config).read_text()) if args.config else None
        flags = {k: v for k, v in vars(args).items() if k not in _GLOBAL}
        cfg = resolve_config(args.command, file_cfg, flags)
        if args.dump_config:
            print(dump_config(args.command, cfg))
            return EXIT_OK
        t0 = time.time()
        seeds = [cfg["mc"]["seed"]] if "mc" in cfg else []
        manifest = RunManifest(args.command, cfg, seeds, _versions(), _git_describe())
        out = OutputDir(args.out, manifest)
        code = COMMANDS[args.command](cfg, out, threads)
        out.finish(t0)
        return code
    except (UsageError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"layergibbs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"layergibbs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
