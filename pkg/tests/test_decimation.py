import math

import numpy as np
import pytest
import sympy as sp

from layergibbs.decimation import (
    DecimationScheme,
    decimated_decay_scan,
    decimated_potential,
    make_mask,
    mask_margin,
    regular_thresholds,
    stress_set,
    worst_case_scan,
)
from layergibbs.exact import plus_engine
from layergibbs.lattice import LayerConfig, LayerInterval
from layergibbs.stats import Estimate


def test_regular_mask():
    assert make_mask(DecimationScheme.regular(5), (0, 10)) == (0, 5, 10)
    m = make_mask(DecimationScheme.regular(3), (-20, 20))
    assert all((i + 3) in m for i in m if i + 3 <= 20)


def test_bad_schemes():
    with pytest.raises(ValueError):
        DecimationScheme.regular(1)
    with pytest.raises(ValueError):
        DecimationScheme.random(1.5)
    with pytest.raises(ValueError):
        decimated_potential((0, 0), LayerConfig.all_minus((0, 0)), 1, plus_engine(1, 0.5, 0.0))


def test_random_mask_reproducible_and_dense():
    s = DecimationScheme.random(0.2, mask_seed=7)
    w = LayerInterval(-300, 5000)
    m = make_mask(s, w)
    assert m == make_mask(s, w)
    # window independence
    assert [i for i in m if 0 <= i <= 50] == list(make_mask(s, (0, 50)))
    assert make_mask(DecimationScheme.random(0.0), w) == ()
    dens = len(m) / len(w)
    assert abs(dens - 0.2) < 4 * math.sqrt(0.2 * 0.8 / len(w))


def test_random_mask_law_of_large_numbers():
    w = 100_000
    m = make_mask(DecimationScheme.random(0.2, mask_seed=3), (0, w - 1))
    assert abs(len(m) / w - 0.2) < 3 * math.sqrt(0.2 * 0.8 / w)


def test_mask_margin_all_plus():
    r = mask_margin(DecimationScheme.regular(5), (0, 20), LayerConfig.all_plus(), beta=0.7)
    np.testing.assert_allclose(r["margin"], 2 * 0.7 * r["k"])
    assert r["k_star"] == 1


@pytest.mark.parametrize("b", [3, 4, 5, 7])
def test_mask_margin_symbolic_all_minus(b):
    beta, k = sp.Symbol("beta", positive=True), sp.Symbol("k", integer=True, positive=True)
    window = LayerInterval(0, 101)
    scheme = DecimationScheme.regular(b)
    kept = make_mask(scheme, window)
    xi = LayerConfig.from_sites({i: -1 for i in kept})
    r = mask_margin(scheme, window, xi, beta=1.0)
    for kk in range(1, 101):
        # sum over [0, k] of n_i (1 - xi_i), symbolically
        s = sum(sp.Integer(1) * (1 - xi.spin(i)) for i in range(0, kk + 1) if i % b == 0)
        once = (2 * beta * k - 2 * beta * s).subs(k, kk)
        twice = (2 * beta * k - 4 * beta * s).subs(k, kk)
        closed = 2 * beta * kk - 4 * beta * (sp.floor(sp.Rational(kk, b)) + 1)
        assert sp.simplify(once - closed) == 0
        assert sp.simplify(once.subs(beta, 1) - int(r["margin"][kk - 1])) == 0
        assert sp.simplify(twice.subs(beta, 1) - int(r["margin_doubled"][kk - 1])) == 0
        # (2 - 4/b) beta k - 4 beta <= margin <= (2 - 4/b) beta k
        slope = (2 - sp.Rational(4, b)) * beta * kk
        assert sp.simplify(slope - once) >= 0 and sp.simplify(once - slope + 4 * beta) >= 0
    assert (r["k_star"] is not None) == (b > regular_thresholds()["margin"])
    assert (r["k_star_doubled"] is not None) == (b > regular_thresholds()["margin_doubled"])


def test_mask_margin_quarter_density_boundary():
    # density exactly 1/4 under the doubled weighting: zero slope
    r = mask_margin(DecimationScheme.regular(4), (0, 400), LayerConfig.from_sites({i: -1 for i in range(0, 401, 4)}))
    assert np.all(r["margin_doubled"] <= 0) and r["k_star_doubled"] is None


def test_decimated_beta_zero_vacuous():
    eng = plus_engine(2, 0.0, 0.0)
    scheme = DecimationScheme.regular(2)
    st = stress_set(make_mask(scheme, (-2, 2)), window=LayerInterval(-2, 2))
    scan = decimated_decay_scan(scheme, eng, st, window=LayerInterval(-2, 2), max_length=4, fit_kwargs={"min_points": 1})
    assert scan.passed and scan.message == "identically zero"


def test_decimated_methods_agree_exact():
    eng = plus_engine(3, 0.7, 0.0)
    kept = [-3, 0, 3]
    xi = LayerConfig.from_sites({-3: -1, 0: 1, 3: -1})
    vals = [decimated_potential((-3, 3), xi, 3, eng, kept=kept, method=m).value for m in ("coupled", "abstract", "closed")]
    assert max(vals) - min(vals) < 1e-12
    assert vals[0] < 0
    assert decimated_potential((0, 3), xi, 3, eng, kept=kept).value == 0.0


def test_worst_case_scan_picks_largest():
    vals = {
        "a": {(0, L): Estimate(2.0 * math.exp(-L), 1e-4, 100, "mc") for L in range(1, 7)},
        "b": {(0, L): Estimate(1.0 * math.exp(-L), 1e-4, 100, "mc") for L in range(1, 7)},
    }
    scan = worst_case_scan(vals)
    assert all(lab.startswith("a@") for lab in scan.worst_label)
    assert scan.passed and scan.fit.lambda_ == pytest.approx(1.0, abs=0.05)
