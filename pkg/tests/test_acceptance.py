"""Acceptance criteria 1-12.

Each test prints one ``PASS``/``FAIL`` line (also collected in the terminal
summary) and asserts the criterion.  Tolerances and run-time limits are the
ones the criteria state; Monte Carlo settings are fixed here so the numbers
are reproducible.
"""
import itertools
import math
import time

import numpy as np
import pytest

from layergibbs import thermo as T
from layergibbs.convergence import stress_decay_scan, typical_decay
from layergibbs.decimation import DecimationScheme, decimated_decay_scan, make_mask, mask_margin, stress_set
from layergibbs.exact import BoxProblem, Observable, expectation, layer_kernel, plus_engine
from layergibbs.lattice import LayerConfig, LayerInterval, Site2D, intervals_within, subsets
from layergibbs.mc import MCEngine, McConfig, estimate_expectation, sample_layer_array
from layergibbs.potentials import (
    Potential,
    dobrushin_expectation,
    telescope_potential_abstract,
    telescope_potential_closed,
    telescope_potential_coupled,
    vacuum_potential,
    verify_moebius_roundtrip,
    verify_resummation,
    verify_telescoping_identity,
)

pytestmark = pytest.mark.acceptance

BETAS = (0.0, 0.3, 0.6)
N_EXACT = 3


def windows(n=N_EXACT, max_width=5):
    """Every interval window of width <= max_width in [-n, n] with every spin pattern on it."""
    for w in range(1, max_width + 1):
        for j in range(-n, n - w + 2):
            for vals in itertools.product((1, -1), repeat=w):
                yield LayerInterval(j, j + w - 1), LayerConfig.from_array(vals, j)


def test_criterion_01_moebius(record_criterion):
    t0 = time.time()
    worst, vanish_ok, count = 0.0, True, 0
    for beta in BETAS:
        eng = plus_engine(N_EXACT, beta, 0.0)
        for V, xi in windows():
            worst = max(worst, verify_moebius_roundtrip(V, xi, eng))
            count += 1
            for A in subsets(V.sites):
                if A and any(xi.spin(i) == 1 for i in A) and vacuum_potential(A, xi, eng).value != 0.0:
                    vanish_ok = False
    dt = time.time() - t0
    ok = worst < 1e-9 and vanish_ok and dt < 120
    record_criterion(1, ok, f"Moebius residual {worst:.2e} (<1e-9) over {count} cases; "
                            f"vacuum zero on plus sites: {vanish_ok}; {dt:.0f}s (<120s)")
    assert ok


def test_criterion_02_telescoping(record_criterion):
    t0 = time.time()
    tel, res, agree = 0.0, 0.0, 0.0
    for beta in BETAS:
        eng = plus_engine(N_EXACT, beta, 0.0)
        for V, xi in windows():
            tel = max(tel, verify_telescoping_identity(V, xi, eng))
        for vals in itertools.product((1, -1), repeat=2 * N_EXACT + 1):
            xi = LayerConfig.from_array(vals, -N_EXACT)
            for i in range(-N_EXACT, N_EXACT + 1):
                for m in range(0, min(i + N_EXACT, 4) + 1):
                    res = max(res, verify_resummation(i, m, xi, eng))
            for A in intervals_within(-N_EXACT, N_EXACT, max_length=3):
                a = telescope_potential_abstract(A.k, A.k - A.j, xi, eng).value
                agree = max(agree, abs(a - telescope_potential_closed(A, xi, eng).value))
    dt = time.time() - t0
    ok = tel < 1e-9 and res < 1e-9 and agree < 1e-6 and dt < 300
    record_criterion(2, ok, f"telescoping identity {tel:.2e}, resummation {res:.2e} (<1e-9); "
                            f"closed vs abstract {agree:.2e} (<1e-6, |j-k|<=3); {dt:.0f}s (<300s)")
    assert ok


def test_criterion_03_sign_and_magnitude(record_criterion):
    t0 = time.time()
    worst_sign, worst_ratio, ok_mag = -math.inf, 0.0, True
    for beta in BETAS + (0.9,):
        eng = plus_engine(N_EXACT, beta, 0.0)
        for vals in itertools.product((1, -1), repeat=2 * N_EXACT + 1):
            xi = LayerConfig.from_array(vals, -N_EXACT)
            for A in intervals_within(-N_EXACT, N_EXACT):
                u = telescope_potential_abstract(A.k, A.k - A.j, xi, eng).value
                if A.j < A.k:
                    worst_sign = max(worst_sign, u)
                if abs(u) > 10 * beta + 1e-12:
                    ok_mag = False
                if beta > 0:
                    worst_ratio = max(worst_ratio, abs(u) / beta)
    dt = time.time() - t0
    ok = worst_sign <= 1e-10 and ok_mag and dt < 120
    record_criterion(3, ok, f"max U(j<k) = {worst_sign:.2e} (<=1e-10); max|U|/beta = {worst_ratio:.2f} (<=10); "
                            f"{dt:.0f}s (<120s)")
    assert ok


def test_criterion_04_typical_decay(record_criterion):
    t0 = time.time()
    beta = 0.7
    rows = sample_layer_array(beta, 0.0, 24, McConfig(sweeps=2100, burn_in=500, chains=2, seed=11, thinning=200,
                                                      n_blocks=2))
    xis = [LayerConfig.from_array(r, -24) for r in rows.reshape(-1, 49)[:8]]
    eng = MCEngine(24, beta, 0.0, McConfig(sweeps=40000, burn_in=1000, chains=4, seed=2))
    U = Potential(eng, "coupled", center=True)
    lams, fails = [], []
    for t, xi in enumerate(xis):
        r = typical_decay(xi, eng, anchor=None, max_length=12, potential=U)
        f = r["fit"]
        if f is None or not (f.lambda_ > 0 and f.excludes_zero()):
            fails.append(f"xi{t}: {r['message'] or 'CI includes 0'}")
        else:
            lams.append((f.lambda_, f.ci_[0], f.ci_[1]))
    dt = time.time() - t0
    ok = not fails and len(lams) == 8 and dt < 1800
    lo = min((c[1] for c in lams), default=float("nan"))
    record_criterion(4, ok, f"{len(lams)}/8 xi with lambda>0 and CI excluding 0 "
                            f"(lambda {min((c[0] for c in lams), default=float('nan')):.3f}.."
                            f"{max((c[0] for c in lams), default=float('nan')):.3f}, lowest CI end {lo:.3f})"
                            f"{'; ' + '; '.join(fails) if fails else ''}; {dt:.0f}s (<1800s)")
    assert ok


def test_criterion_05_uniform_regimes(record_criterion):
    t0 = time.time()
    parts, ok = [], True
    for beta, h in ((0.8, 0.5), (0.3, 0.0)):
        eng = MCEngine(24, beta, h, McConfig(sweeps=20000, burn_in=1000, chains=4, seed=5))
        st = {k: v for k, v in stress_set(range(-24, 25)).items() if k != "all-plus"}
        scan = stress_decay_scan(eng, st, lengths=range(2, 13))
        good = scan.passed and scan.fit is not None and scan.fit.lambda_ > 0
        ok &= good
        parts.append(f"beta={beta},h={h}: " + (f"lambda={scan.fit.lambda_:.3f} CI=[{scan.fit.ci_[0]:.3f},"
                                               f"{scan.fit.ci_[1]:.3f}]" if scan.fit else scan.message))
    dt = time.time() - t0
    ok = ok and dt < 1200
    record_criterion(5, ok, "; ".join(parts) + f" (stress set incl. all-minus); {dt:.0f}s (<1200s)")
    assert ok


def _symbolic_margin_ok(k_max=100) -> bool:
    import sympy as sp

    beta = sp.Symbol("beta", positive=True)
    for b in (3, 4, 5):
        scheme = DecimationScheme.regular(b)
        kept = make_mask(scheme, (0, k_max + 1))
        xi = LayerConfig.from_sites({i: -1 for i in kept})
        r = mask_margin(scheme, (0, k_max + 1), xi, beta=1.0)
        for k in range(1, k_max + 1):
            s = sum(sp.Integer(1 - xi.spin(i)) for i in range(k + 1) if i % b == 0)
            expr = 2 * beta * k - 2 * beta * s
            if sp.simplify(expr - (2 * beta * k - 4 * beta * (sp.floor(sp.Rational(k, b)) + 1))) != 0:
                return False
            if expr.subs(beta, 1) != int(r["margin"][k - 1]):
                return False
            if (2 * beta * k - 4 * beta * s).subs(beta, 1) != int(r["margin_doubled"][k - 1]):
                return False
    return True


def test_criterion_06_decimation(record_criterion):
    t0 = time.time()
    eng = MCEngine(24, 0.8, 0.0, McConfig(sweeps=20000, burn_in=1000, chains=4, seed=1))
    parts, ok = [], True
    for scheme, window, max_length in (
        (DecimationScheme.regular(5), LayerInterval(0, 20), 20),
        (DecimationScheme.random(0.2, mask_seed=7), LayerInterval(-16, 16), 16),
    ):
        kept = make_mask(scheme, window)
        st = {k: v for k, v in stress_set(kept).items() if k != "all-plus"}
        scan = decimated_decay_scan(scheme, eng, st, window=window, max_length=max_length)
        ok &= scan.passed
        parts.append(f"{scheme.label()}: " + (f"lambda={scan.fit.lambda_:.3f} CI=[{scan.fit.ci_[0]:.3f},"
                                              f"{scan.fit.ci_[1]:.3f}]" if scan.fit else scan.message))
    sym = _symbolic_margin_ok()
    dt = time.time() - t0
    ok = ok and sym and dt < 1200
    record_criterion(6, ok, "; ".join(parts) + f"; mask_margin symbolic k<=100: {sym}; {dt:.0f}s (<1200s)")
    assert ok


def test_criterion_07_weak_gibbs_consistency(record_criterion):
    t0 = time.time()
    beta = 0.6
    eng = plus_engine(N_EXACT, beta, 0.0)
    omegas = [LayerConfig.all_plus((-3, 3)), LayerConfig.all_minus((-3, 3)), LayerConfig.alternating((-3, 3)),
              LayerConfig.from_string("--+-+--", -3), LayerConfig.from_string("+-----+", -3)]
    worst, ok = 0.0, True
    for U in (Potential(eng, "abstract"), Potential(eng, "closed")):
        for om in omegas:
            est, bound = dobrushin_expectation(lambda s: 1.0 if s.spin(0) == 1 else 0.0, [0], om, U,
                                               cutoff=2 * N_EXACT, sites_range=(-N_EXACT, N_EXACT))
            diff = abs(est.value - layer_kernel([0], {0: 1}, om, N_EXACT, beta))
            worst = max(worst, diff)
            ok &= diff <= 1e-6 + bound
    dt = time.time() - t0
    ok = ok and dt < 300
    record_criterion(7, ok, f"max |R_V(1_+) - gamma_V(+|omega)| = {worst:.2e} (<=1e-6 + truncation 0) "
                            f"over 5 omegas; {dt:.0f}s (<300s)")
    assert ok


def test_criterion_08_thermodynamics(record_criterion):
    t0 = time.time()
    # partition identity
    part = 0.0
    for beta in (0.3, 0.6, 0.9):
        eng = plus_engine(N_EXACT, beta, 0.0)
        P = Potential(eng, "closed")
        for w in (1, 3, 5, 7):
            V = LayerInterval(-(w // 2), w // 2)
            a = T.partition_free(V, potential=P).value
            b = T.partition_free(V, engine=eng, route="kernel").value
            part = max(part, abs(math.expm1(a - b)))
    # variational gaps
    eng = plus_engine(N_EXACT, 0.6, 0.0)
    P = Potential(eng, "closed")
    omegas = (LayerConfig.all_plus((-3, 3)), LayerConfig.all_minus((-3, 3)), LayerConfig.alternating((-3, 3)))
    gap_exact = math.inf
    for src in (plus_engine(3, 0.6, 0.0), plus_engine(3, 0.3, 0.0), plus_engine(3, 0.9, 0.2), plus_engine(3, 0.0, 0.0)):
        for V in (LayerInterval(0, 0), LayerInterval(-1, 1), LayerInterval(-2, 1)):
            m = T.exact_layer_marginal(src, V)
            for om in omegas:
                gap_exact = min(gap_exact, T.variational_gap(m, om, P, sites_range=(-3, 3)).value)
    S = sample_layer_array(0.6, 0.0, 3, McConfig(sweeps=20000, burn_in=1000, chains=4, seed=5))
    z_mc = math.inf
    for V in (LayerInterval(0, 0), LayerInterval(-1, 1)):
        m = T.EmpiricalMarginal.from_samples(S[..., V.j + 3: V.k + 4], V)
        for om in omegas:
            g = T.variational_gap(m, om, P, sites_range=(-3, 3))
            z_mc = min(z_mc, g.value / g.stderr)
    # beta = 0
    e0 = plus_engine(N_EXACT, 0.0, 0.0)
    p0 = T.pressure_series([0, 1, 2, 3], e0, route="kernel").values
    p0 += T.pressure_series([0, 1, 2], e0, route="table", potential=Potential(e0, "closed")).values
    dev0 = max(abs(v - math.log(2)) for v in p0)
    # energy density, two routes
    S = sample_layer_array(0.7, 0.0, 12, McConfig(sweeps=200000, burn_in=2000, chains=4, seed=41, thinning=2,
                                                  n_blocks=8))
    W = T.RelativeLayerWeights(MCEngine(12, 0.7, 0.0, McConfig(sweeps=200000, burn_in=2000, chains=4, seed=42,
                                                               thinning=4, n_blocks=8)), (-5, 5))
    ed = T.energy_density_estimate(S, T.WeightPotential(W), cutoff=5, n=5, window_start=-12)
    d = ed["difference"]
    dt = time.time() - t0
    ok = (part < 1e-8 and gap_exact >= -1e-9 and z_mc >= -3 and dev0 < 1e-12
          and abs(d.value) <= 3 * d.stderr and dt < 900)
    record_criterion(8, ok, f"partition identity {part:.1e} (<1e-8); exact gap min {gap_exact:.2e} (>=-1e-9); "
                            f"MC gap min {z_mc:.2f} sigma (>=-3); beta=0 |P-log2| {dev0:.1e}; energy density "
                            f"ergodic {ed['ergodic']} vs volume {ed['volume']} diff {d.value / d.stderr:.2f} "
                            f"sigma (<=3); {dt:.0f}s (<900s)")
    assert ok


def test_criterion_09_variational_series(record_criterion):
    t0 = time.time()
    S = sample_layer_array(0.7, 0.0, 12, McConfig(sweeps=1_700_000, burn_in=2000, chains=4, seed=31, thinning=2,
                                                  n_blocks=8))
    W = T.RelativeLayerWeights(MCEngine(12, 0.7, 0.0, McConfig(sweeps=2_000_000, burn_in=2000, chains=4, seed=32,
                                                               thinning=16, n_blocks=8)), (-7, 7))
    r = T.variational_functional(S, W, [3, 5, 7])
    gap = r["gap"]
    absg = [abs(v) for v in gap.values]
    decreasing = all(b < a for a, b in zip(absg, absg[1:]))
    dt = time.time() - t0
    ok = decreasing and absg[-1] < 0.05 and dt < 1800
    vals = ", ".join(f"{v:.2e}+-{e:.1e}" for v, e in zip(gap.values, gap.stderr))
    record_criterion(9, ok, f"gap n=3,5,7: {vals}; |gap| decreasing: {decreasing}; final < 0.05: "
                            f"{absg[-1] < 0.05}; {dt:.0f}s (<1800s)")
    assert ok


def test_criterion_10_condition_series(record_criterion):
    t0 = time.time()
    S = sample_layer_array(1.2, 0.0, 24, McConfig(sweeps=42000, burn_in=2000, chains=4, seed=21, thinning=10,
                                                  n_blocks=8))
    s = T.dependence_condition(S, 1.2, [4, 8, 12, 16])
    dt = time.time() - t0
    ok = s.is_decreasing() and dt < 900
    vals = ", ".join(f"{v:.3g}+-{e:.1g}" for v, e in zip(s.values, s.stderr))
    record_criterion(10, ok, f"series n=4,8,12,16: {vals}; decreasing: {s.is_decreasing()}; {dt:.0f}s (<900s)")
    assert ok


def test_criterion_11_quasilocality(record_criterion):
    t0 = time.time()
    cfg = McConfig(sweeps=40000, burn_in=20000, chains=4, seed=3)
    n_list = [2, 4, 6, 8, 10, 12]
    s0 = T.quasilocality_probe(0.9, 0.0, n_list, N=24, config=cfg)
    s5 = T.quasilocality_probe(0.9, 0.5, n_list, N=24, config=cfg)
    stays = all(v > 10 * e for v, e in zip(s0.values, s0.stderr))
    i8 = n_list.index(8)
    decays = any(abs(v) < 3 * e or v == 0 for v, e in zip(s5.values[: i8 + 1], s5.stderr[: i8 + 1]))
    dt = time.time() - t0
    ok = stays and decays and dt < 1800
    fmt = lambda s: ", ".join(f"{v:.3g}+-{e:.1g}" for v, e in zip(s.values, s.stderr))  # noqa: E731
    record_criterion(11, ok, f"h=0: D_n = {fmt(s0)} (all >10 sigma: {stays}); h=0.5: D_n = {fmt(s5)} "
                             f"(below 3 sigma by n=8: {decays}); {dt:.0f}s (<1800s)")
    assert ok


def _cross_engine_cases(n_cases=50, seed=2024):
    rng = np.random.default_rng(seed)
    kinds = ("box_spin", "box_exp", "layer_expect", "log_ratio", "potential", "kernel")
    for c in range(n_cases):
        beta = float(rng.choice([0.2, 0.4, 0.6, 0.8]))
        h = float(rng.choice([0.0, 0.0, 0.3]))
        xi = LayerConfig.from_array(rng.choice([1, -1], size=5), -2)
        x, y = int(rng.integers(-2, 3)), int(rng.choice([-2, -1, 1, 2]))
        j = int(rng.integers(-2, 2))
        k = int(rng.integers(j, 3))
        yield c, kinds[c % len(kinds)], beta, h, xi, x, y, j, k


def test_criterion_12_cross_engine(record_criterion):
    t0 = time.time()
    zs = []
    for c, kind, beta, h, xi, x, y, j, k in _cross_engine_cases():
        cfg = McConfig(sweeps=20000, burn_in=1000, chains=4, seed=100 + c)
        ex, mc = plus_engine(2, beta, h), MCEngine(2, beta, h, cfg)
        if kind == "box_spin":
            p, o = BoxProblem(2, beta, h, "plus"), Observable.spin(Site2D(x, y))
            a, b = expectation(p, o).value, estimate_expectation(p, o, cfg)
        elif kind == "box_exp":
            p, o = BoxProblem(2, beta, h, "plus", frozen_layer=xi), Observable.exp_spin(Site2D(x, y), 0.5)
            a, b = expectation(p, o).value, estimate_expectation(p, o, cfg)
        elif kind == "layer_expect":
            o = Observable.spin(Site2D(x, y))
            a, b = ex.layer_expectation(xi, o).value, mc.layer_expectation(xi, o)
        elif kind == "log_ratio":
            a, b = ex.log_weight_ratio(xi, xi.flip(x)).value, mc.log_weight_ratio(xi, xi.flip(x))
        elif kind == "potential":
            z = xi.with_spins({j: -1, k: -1})
            a, b = telescope_potential_closed((j, k), z, ex).value, telescope_potential_coupled((j, k), z, mc)
        else:
            a, b = ex.log_kernel([x], xi, xi).value, mc.log_kernel([x], xi, xi)
        zs.append(abs(b.value - a) / b.stderr if b.stderr > 0 else (0.0 if b.value == a else math.inf))
    dt = time.time() - t0
    ok = len(zs) == 50 and max(zs) <= 4 and dt < 600
    record_criterion(12, ok, f"{sum(z <= 4 for z in zs)}/50 cases within 4 sigma (max {max(zs):.2f} sigma); "
                             f"{dt:.0f}s (<600s)")
    assert ok
