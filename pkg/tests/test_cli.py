import json
import time

import pytest

from layergibbs import cli, golden

SUBCOMMANDS = ["potential", "verify", "decay", "thermo", "decimate", "probe", "golden-regen"]
TINY_MC = ["--sweeps", "600", "--burn-in", "100"]


def run(tmp_path, *args):
    return cli.main(["--out", str(tmp_path), *args])


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main([cmd, "--help"])
    assert e.value.code == 0
    assert "usage: layergibbs " + cmd in capsys.readouterr().out


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["nope"])
    assert e.value.code == 2
    assert run(tmp_path, "potential", "--kind", "bogus") == 2
    assert run(tmp_path, "potential", "--xi", "zigzag") == 2
    assert run(tmp_path, "decimate", "--scheme", "regular:1") == 2
    assert run(tmp_path, "--config", str(tmp_path / "missing.json"), "verify") == 2
    (tmp_path / "bad.json").write_text(json.dumps({"verify": {"colour": 1}}))
    assert run(tmp_path, "--config", str(tmp_path / "bad.json"), "verify") == 2


def test_verify_pass_and_negative_controls(tmp_path, capsys):
    assert run(tmp_path / "ok", "verify") == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out
    for ident in ("telescoping", "partition", "variational"):
        assert run(tmp_path / ident, "verify", "--corrupt", ident) == 1
        assert f"FAIL {ident}" in capsys.readouterr().out
    assert run(tmp_path / "b0", "verify", "--beta", "0") == 0


def test_potential_trivial_tables(tmp_path):
    assert run(tmp_path / "a", "potential", "--beta", "0") == 0
    t = json.loads((tmp_path / "a" / "table.json").read_text())
    assert t["entries"] and all(e["value"] == 0 for e in t["entries"])
    assert run(tmp_path / "b", "potential", "--xi", "all-plus") == 0
    assert json.loads((tmp_path / "b" / "table.json").read_text())["entries"] == []


@pytest.mark.parametrize("xi", ["all-minus", "alternating"])
def test_potential_matches_golden_bytes(tmp_path, xi):
    assert run(tmp_path, "potential", "--beta", "0.6", "--engine", "exact", "--n", "3", "--xi", xi) == 0
    assert (tmp_path / "table.json").read_text() == golden.load()["tables"][xi]


def test_manifest_hash_embedded_and_reproducible(tmp_path):
    for d in ("r1", "r2"):
        assert run(tmp_path / d, "potential", "--xi", "alternating") == 0
    m = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    for name in ("table.json", "table.csv", "plot.csv"):
        a = (tmp_path / "r1" / name).read_text()
        assert a == (tmp_path / "r2" / name).read_text()
        assert m["hash"] in a
    assert (tmp_path / "r1" / "plot.csv").read_text().splitlines()[1] == "x,y,y_err,series_label"
    assert m["command"] == "potential" and m["config"]["xi"] == "alternating"
    assert {"numpy", "scipy"} <= set(m["versions"])


def test_config_roundtrip_and_override(tmp_path, capsys):
    cfg = cli.resolve_config("decay", {"decay": {"beta": 0.5, "mc": {"seed": 9}}}, {"mc_sweeps": 1234})
    assert cfg["beta"] == 0.5 and cfg["mc"]["seed"] == 9 and cfg["mc"]["sweeps"] == 1234
    for command in cli.DEFAULTS:
        c = cli.resolve_config(command, None, {})
        text = cli.dump_config(command, c)
        assert cli.parse_config(text) == (command, c)
        assert cli.dump_config(*cli.parse_config(text)) == text
    (tmp_path / "c.json").write_text(json.dumps({"beta": 0.3, "n": 2}))
    assert cli.main(["--config", str(tmp_path / "c.json"), "--dump-config", "potential", "--n", "3"]) == 0
    d = json.loads(capsys.readouterr().out)["potential"]
    assert d["beta"] == 0.3 and d["n"] == 3


def test_threads_env(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.thread_count(None) == 3
    assert cli.thread_count(2) == 2
    monkeypatch.setenv(cli.THREADS_ENV, "x")
    with pytest.raises(cli.UsageError):
        cli.thread_count(None)
    assert cli.parallel_map(lambda x: x * x, range(5), 3) == [0, 1, 4, 9, 16]


def test_thread_count_does_not_change_results(tmp_path, monkeypatch):
    args = ["decay", "--mode", "stress", "--beta", "0.4", "--n", "5", "--max-length", "4", *TINY_MC]
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    run(tmp_path / "t1", *args)
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    run(tmp_path / "t2", *args)
    assert (tmp_path / "t1" / "decay.csv").read_text() == (tmp_path / "t2" / "decay.csv").read_text()


@pytest.mark.parametrize("args", [
    ["potential", "--beta", "0"],
    ["verify", "--beta", "0"],
    ["decay", "--beta", "0", "--n", "6", "--samples", "2", "--max-length", "5", *TINY_MC],
    ["decay", "--mode", "stress", "--beta", "0", "--n", "6", "--max-length", "5", *TINY_MC],
    ["thermo", "--beta", "0", "--engine", "exact", "--n", "3"],
    ["thermo", "--beta", "0", "--quantity", "condition", "--n", "6", "--n-list", "1", "2", *TINY_MC],
    ["decimate", "--beta", "0", "--n", "6", "--scheme", "regular:3", "--max-length", "6", *TINY_MC],
    ["probe", "--beta", "0", "--N", "6", "--n-list", "2", "4", *TINY_MC],
])
def test_beta_zero_smoke(tmp_path, args):
    t0 = time.time()
    assert run(tmp_path, *args) == 0
    assert time.time() - t0 < 10
    assert (tmp_path / "manifest.json").exists()
    plot = (tmp_path / "plot.csv") if (tmp_path / "plot.csv").exists() else None
    if plot is not None:
        assert plot.read_text().splitlines()[1] == "x,y,y_err,series_label"


def test_beta_zero_pressure_is_log2(tmp_path):
    assert run(tmp_path, "thermo", "--beta", "0", "--engine", "exact", "--n", "3") == 0
    lines = (tmp_path / "pressure_free.csv").read_text().splitlines()[2:]
    assert all(abs(float(r.split(",")[1]) - 0.6931471805599453) < 1e-12 for r in lines)


def test_golden_check(tmp_path, capsys):
    assert run(tmp_path, "golden-regen", "--check") == 0
    assert "golden store PASS" in capsys.readouterr().out
