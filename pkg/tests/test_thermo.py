import math

import numpy as np
import pytest

from layergibbs.exact import plus_engine
from layergibbs.lattice import LayerConfig, LayerInterval
from layergibbs.potentials import Potential
from layergibbs.thermo import (
    EmpiricalMarginal,
    RelativeLayerWeights,
    ThermoSeries,
    WeightPotential,
    dependence_condition,
    entropy_empirical,
    exact_layer_marginal,
    flipped,
    partition_free,
    relative_entropy,
    variational_gap,
)
from oracles import LayerOracle


@pytest.fixture(scope="module")
def eng():
    return plus_engine(3, 0.6, 0.0)


@pytest.fixture(scope="module")
def oracle():
    return LayerOracle(3, 0.6, 0.0)


def test_exact_marginal_matches_oracle(eng, oracle):
    for V in [(0, 0), (-1, 1), (-3, 0)]:
        m = exact_layer_marginal(eng, V)
        ref = oracle.marginal(range(V[0], V[1] + 1))
        for c, p in ref.items():
            assert m.probabilities.get(c, 0.0) == pytest.approx(p, abs=1e-12)


def test_partition_routes_agree_with_oracle(eng, oracle):
    V = LayerInterval(-1, 1)
    ref = oracle.log_partition_free(V.sites)
    assert partition_free(V, engine=eng, route="kernel").value == pytest.approx(ref, abs=1e-10)
    assert partition_free(V, engine=eng, route="weights").value == pytest.approx(ref, abs=1e-10)
    assert partition_free(V, Potential(eng, "closed")).value == pytest.approx(ref, abs=1e-9)


def test_variational_gap_is_relative_entropy(eng, oracle):
    for V in [(0, 0), (-1, 1), (-2, 1)]:
        m = exact_layer_marginal(eng, V)
        gap = variational_gap(m, LayerConfig.all_plus(), Potential(eng, "closed"), sites_range=(-3, 3))
        ref = oracle.relative_entropy_to_plus_kernel(range(V[0], V[1] + 1))
        assert gap.is_exact
        assert gap.value == pytest.approx(ref, abs=1e-9)
        assert gap.value >= -1e-9


def test_beta_zero_pressure_is_log_two():
    e0 = plus_engine(2, 0.0, 0.0)
    V = LayerInterval(-2, 2)
    for route in ("kernel", "weights"):
        assert partition_free(V, engine=e0, route=route).value / len(V) == pytest.approx(math.log(2), abs=1e-12)


def test_weight_potential_matches_closed_form(eng):
    W = WeightPotential(RelativeLayerWeights(eng, (-3, 3)))
    U = Potential(eng, "closed")
    xi = LayerConfig.from_string("-+--", -1)
    for A in [(0, 0), (-1, 2), (1, 2), (-1, 0)]:
        assert W(LayerInterval(*A), xi).value == pytest.approx(U(A, xi).value, abs=1e-9)


def test_entropy_and_relative_entropy():
    uni = EmpiricalMarginal.from_distribution((0, 1), np.full(4, 0.25))
    assert entropy_empirical(uni).value == pytest.approx(2 * math.log(2))
    point = EmpiricalMarginal.from_distribution((0, 1), {(1, 1): 1.0})
    assert entropy_empirical(point).value == 0.0
    assert relative_entropy(point, uni) == pytest.approx(2 * math.log(2))
    assert relative_entropy(uni, point) == math.inf
    assert flipped(point).probabilities == {(-1, -1): 1.0}


def test_sampled_entropy_is_close_and_has_error():
    rng = np.random.default_rng(0)
    rows = rng.choice([1, -1], size=(20000, 3))
    m = EmpiricalMarginal.from_samples(rows, (0, 2))
    s = entropy_empirical(m)
    assert not m.is_exact and s.stderr > 0
    assert abs(s.value - 3 * math.log(2)) < 4 * s.stderr + 1e-3


def test_marginal_validation():
    with pytest.raises(ValueError):
        EmpiricalMarginal.from_distribution((0, 0), {(1,): 0.5})
    with pytest.raises(ValueError):
        EmpiricalMarginal.from_samples(np.ones((5, 2)), (0, 2))


def test_thermo_series_validation_and_export():
    with pytest.raises(ValueError):
        ThermoSeries([2, 1], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        ThermoSeries([1, 2], [0.0], [0.0, 0.0])
    s = ThermoSeries([1, 2, 3], [3.0, 2.0, 1.0], [0.1, 0.1, 0.1], "x")
    assert s.is_decreasing() and not s.is_decreasing(nsigma=10)
    assert s.cauchy_differences() == [-1.0, -1.0]
    assert s.to_csv().splitlines()[0] == "n,value,stderr"


def test_dependence_condition_all_plus_closed_form():
    rows = np.ones((4, 100, 21), dtype=np.int8)
    beta = 0.7
    s = dependence_condition(rows, beta, [2, 5, 9])
    for n, v in zip(s.n, s.values):
        assert v == pytest.approx(2.0 ** n * math.exp(-beta * n))
    with pytest.raises(ValueError):
        dependence_condition(rows, beta, [11])
