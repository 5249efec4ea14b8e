import json

import numpy as np
import pytest

from layergibbs import golden
from layergibbs.cli import potential_outputs, resolve_config
from oracles import LayerOracle, box_log_partition, half_box_expectation


@pytest.fixture(scope="module")
def store():
    return golden.load()


@pytest.fixture(scope="module")
def o3():
    return LayerOracle(3, 0.6, 0.0)


def test_store_recomputes(store):
    assert golden.compare(store) == []


def test_keys_are_problem_hashes(store):
    for key, e in store["entries"].items():
        assert key == golden.problem_hash({"name": e["name"], **e["problem"]})
        assert e["engine"] == "exact"


def test_values_match_brute_force(store, o3):
    minus = {i: -1 for i in range(-3, 4)}
    alt = {i: (-1 if (i + 2) % 2 == 0 else 1) for i in range(-3, 4)}
    refs = {
        "log_partition": box_log_partition(1, 0.5, 0.0),
        "expectation": half_box_expectation(2, 0.6, 0.0, [-1] * 5, lambda c: np.exp(1.2 * c[:, 0, 2])),
        "layer_kernel": o3.kernel([0], {0: 1}, {}),
        "hamiltonian": o3.hamiltonian([-1, 0, 1], minus),
        "vacuum_potential": o3.vacuum((0, 1), minus),
        "telescope_abstract": o3.telescoping(-1, 0, minus),
        "telescope_closed": o3.telescoping(0, 2, minus),
        "decimated": o3.decimated(-2, 3, {-2: -1, 3: -1}, [-2, 3]),
        "hamiltonian_free_bc": o3.hamiltonian(range(-2, 3), alt),
    }
    for name, ref in refs.items():
        assert golden.lookup(name, store) == pytest.approx(ref, rel=1e-10, abs=1e-12), name


def test_frozen_values(store):
    # values pinned when the store was generated (cross-checked against the brute-force oracles)
    assert golden.lookup("log_partition", store) == pytest.approx(12.196068936920218, rel=1e-12)
    assert golden.lookup("layer_kernel", store) == pytest.approx(0.9899297228252338, rel=1e-12)
    assert golden.lookup("telescope_closed", store) == pytest.approx(-0.13796982113358824, rel=1e-12)


@pytest.mark.parametrize("xi", ["all-minus", "alternating"])
def test_tables_byte_identical_to_cli(store, xi):
    cfg = resolve_config("potential", None, {"beta": 0.6, "engine": "exact", "n": 3, "xi": xi})
    assert potential_outputs(cfg)["table.json"] == store["tables"][xi]


def test_save_load_roundtrip(tmp_path, store):
    p = golden.save(store, tmp_path / "g.json")
    assert golden.load(p) == store
    with pytest.raises(KeyError):
        golden.lookup("nope", store)
    assert json.loads(p.read_text())["entries"]
