import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from layergibbs.estimators import DecayNotResolvable, ExponentialDecayFit, TelescopingPotential
from oracles import LayerOracle

L = np.arange(1, 9)


def test_exact_fit_recovers_rate():
    fit = ExponentialDecayFit().fit(L, 3.0 * np.exp(-0.7 * L))
    assert fit.lambda_ == pytest.approx(0.7) and fit.C_ == pytest.approx(3.0)
    assert fit.excludes_zero()
    assert np.allclose(fit.predict(L), 3.0 * np.exp(-0.7 * L))


def test_noisy_fit_interval_covers_truth():
    rng = np.random.default_rng(1)
    s = np.full(len(L), 2e-3)
    y = 2.0 * np.exp(-0.5 * L) + s * rng.standard_normal(len(L))
    fit = ExponentialDecayFit(n_bootstrap=200).fit(L, y, stderr=s)
    assert fit.ci_[0] < 0.5 < fit.ci_[1] and fit.excludes_zero()
    assert np.all(fit.values_ <= fit.envelope_constant() * np.exp(-fit.lambda_ * L) + 1e-12)


def test_unresolvable_inputs():
    with pytest.raises(DecayNotResolvable):
        ExponentialDecayFit(min_points=4).fit(L[:3], np.ones(3))
    with pytest.raises(DecayNotResolvable):
        ExponentialDecayFit().fit(L, np.zeros(len(L)))
    with pytest.raises(DecayNotResolvable):
        ExponentialDecayFit().fit(L, 1e-6 * np.ones(len(L)), stderr=np.ones(len(L)))
    with pytest.raises(ValueError):
        ExponentialDecayFit().fit(L, np.ones(3))


def test_sklearn_protocol():
    est = ExponentialDecayFit(n_bootstrap=10, level=0.9)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.predict(L)
    with pytest.raises(NotFittedError):
        TelescopingPotential().transform(np.ones((1, 7)))
    with pytest.raises(ValueError):
        TelescopingPotential(engine="nope").fit()


def test_per_site_energy_matches_oracle():
    tp = TelescopingPotential(beta=0.6, n=3).fit()
    rows = np.ones((2, 7), dtype=np.int8)
    rows[1, 3] = rows[1, 4] = -1
    f = tp.transform(rows)
    assert f.shape == (2, 1) and f[0, 0] == 0.0
    o = LayerOracle(3, 0.6, 0.0)
    d = {i: int(rows[1, i + 3]) for i in range(-3, 4)}
    ref = sum(o.telescoping(j, k, d) / (k - j + 1) for j in range(-3, 1) for k in range(0, 4))
    assert f[1, 0] == pytest.approx(ref, abs=1e-9)
