import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layergibbs.decimation import decimated_potential
from layergibbs.exact import plus_engine
from layergibbs.lattice import (
    LayerConfig,
    LayerInterval,
    TelescopeSet,
    enumerate_telescope_cell,
    intervals_within,
    subsets,
    telescope_decompose,
)
from layergibbs.potentials import (
    Potential,
    PotentialTable,
    build_table,
    hamiltonian,
    telescope_potential_abstract,
    telescope_potential_closed,
    telescope_potential_coupled,
    vacuum_potential,
    verify_moebius_roundtrip,
    verify_resummation,
    verify_telescoping_identity,
)
from oracles import LayerOracle


@pytest.fixture(scope="module")
def eng():
    return plus_engine(3, 0.6, 0.0)


@pytest.fixture(scope="module")
def oracle():
    return LayerOracle(3, 0.6, 0.0)


def _as_dict(xi, n=3):
    return {i: xi.spin(i) for i in range(-n, n + 1)}


# -- lattice ---------------------------------------------------------------

def test_layer_config_basics():
    xi = LayerConfig.from_string("+-+", -1)
    assert xi.spin(0) == -1 and xi.spin(5) == 1 and xi.minus_sites() == (0,)
    assert LayerConfig.from_dict(xi.to_dict()) == xi
    assert xi.restrict([0]).spin(-1) == 1
    assert xi.flip(0).spin(0) == 1


def test_intervals_and_subsets():
    assert len(intervals_within(0, 3)) == 10
    assert all(A.k - A.j <= 1 for A in intervals_within(0, 5, max_length=1))
    assert len(list(subsets([1, 2, 3]))) == 8


@given(st.sets(st.integers(-6, 6), min_size=1, max_size=5))
def test_telescope_decomposition_is_a_partition(A):
    i, m = telescope_decompose(A)
    assert tuple(sorted(A)) in enumerate_telescope_cell(i, m)
    L = TelescopeSet(i, m)
    assert set(A) <= set(L.sites)
    if m:
        assert not set(A) <= set(L.previous().sites)


def test_telescope_cells_partition_subsets_of_window():
    cells = [R for i in range(0, 4) for m in range(0, i + 1) for R in enumerate_telescope_cell(i, m)]
    assert sorted(cells) == sorted(s for s in subsets(range(4)) if s)


# -- potentials vs brute force --------------------------------------------

def test_hamiltonian_and_vacuum_match_oracle(eng, oracle):
    for xi in [LayerConfig.all_minus((-3, 3)), LayerConfig.alternating((-3, 3)), LayerConfig.from_string("--+-", -1)]:
        d = _as_dict(xi)
        assert hamiltonian([-1, 0, 1], xi, eng).value == pytest.approx(oracle.hamiltonian([-1, 0, 1], d), abs=1e-10)
        for A in [(0,), (0, 1), (-1, 1), (-1, 0, 1)]:
            assert vacuum_potential(A, xi, eng).value == pytest.approx(oracle.vacuum(A, d), abs=1e-10)


def test_telescoping_forms_match_oracle(eng, oracle):
    xi = LayerConfig.from_string("--+--", -2)
    d = _as_dict(xi)
    for j, k in [(0, 0), (-2, -1), (-2, 1), (-1, 2), (1, 2)]:
        ref = oracle.telescoping(j, k, d)
        assert telescope_potential_abstract(k, k - j, xi, eng).value == pytest.approx(ref, abs=1e-10)
        assert telescope_potential_coupled((j, k), xi, eng).value == pytest.approx(ref, abs=1e-10)
        assert telescope_potential_closed((j, k), xi, eng).value == pytest.approx(ref, abs=1e-9)


def test_decimated_potential_matches_oracle(eng, oracle):
    kept = [-3, -1, 1, 3]
    xi = LayerConfig.from_sites({-3: -1, -1: 1, 1: -1, 3: -1})
    d = _as_dict(xi)
    for j, k in [(-1, 1), (1, 3), (-3, 3), (-3, 1)]:
        if d[j] == 1 or d[k] == 1:
            continue
        ref = oracle.decimated(j, k, d, kept)
        for method in ("coupled", "abstract", "closed"):
            got = decimated_potential((j, k), xi, 2, eng, kept=kept, method=method)
            assert got.value == pytest.approx(ref, abs=1e-9), method


def test_vacuum_property(eng):
    xi = LayerConfig.from_string("-+-", -1)
    assert vacuum_potential((-1, 0, 1), xi, eng).value == pytest.approx(0.0, abs=1e-10)
    assert vacuum_potential((0, 2), LayerConfig.from_string("+", 0), eng).value == pytest.approx(0.0, abs=1e-10)
    assert vacuum_potential((0, 1), LayerConfig.all_plus((-3, 3)), eng).value == 0.0


def test_prefactor_and_beta_zero():
    e0 = plus_engine(2, 0.0, 0.0)
    xi = LayerConfig.all_minus((-2, 2))
    for j, k in [(0, 0), (-1, 1)]:
        assert telescope_potential_closed((j, k), xi, e0).value == pytest.approx(0.0, abs=1e-12)
        assert telescope_potential_abstract(k, k - j, xi, e0).value == pytest.approx(0.0, abs=1e-12)
    e = plus_engine(2, 0.6, 0.0)
    assert telescope_potential_closed((0, 1), LayerConfig.from_string("+-", 0), e).value == 0.0


def test_identities_small(eng):
    for vals in itertools.product((1, -1), repeat=3):
        xi = LayerConfig.from_array(vals, -1)
        V = LayerInterval(-1, 1)
        assert verify_moebius_roundtrip(V, xi, eng) < 1e-9
        assert verify_telescoping_identity(V, xi, eng) < 1e-9
        for m in range(3):
            assert verify_resummation(1, m, xi, eng) < 1e-9


def test_pair_sign(eng):
    xi = LayerConfig.all_minus((-3, 3))
    for j, k in [(0, 1), (0, 2), (-2, 1)]:
        assert telescope_potential_closed((j, k), xi, eng).value <= 1e-10


def test_potential_cache_and_centering():
    e = plus_engine(3, 0.6, 0.0)
    U = Potential(e, "abstract", center=True)
    xi = LayerConfig.all_minus((-10, 10))
    a, b = U((5, 6), xi), U((-6, -5), xi)
    assert a.value == b.value
    assert len(U._cache) == 1


def test_table_roundtrip_and_csv(eng):
    t = build_table(LayerConfig.alternating((-3, 3)), eng, kind="telescoping_closed_form", max_length=3)
    t2 = PotentialTable.from_json(t.to_json())
    assert t2.to_json() == t.to_json()
    d = json.loads(t.to_json())
    assert [(e["k"], e["j"]) for e in d["entries"]] == sorted((e["k"], e["j"]) for e in d["entries"])
    assert t.to_csv().splitlines()[0] == "j,k,value,stderr"
    assert len(build_table(LayerConfig.all_plus((-3, 3)), eng)) == 0


def test_table_beta_zero_all_zero():
    t = build_table(LayerConfig.all_minus((-2, 2)), plus_engine(2, 0.0, 0.0), kind="telescoping")
    assert t.max_abs() == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.sampled_from([1, -1]), min_size=5, max_size=5))
def test_closed_equals_abstract_random(vals):
    e = plus_engine(2, 0.45, 0.1)
    xi = LayerConfig.from_array(vals, -2)
    for A in intervals_within(-2, 2, max_length=3):
        a = telescope_potential_closed(A, xi, e).value
        b = telescope_potential_abstract(A.k, A.k - A.j, xi, e).value
        assert a == pytest.approx(b, abs=1e-9)
