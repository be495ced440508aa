import csv
import json

import numpy as np
import pytest

from frdecomp import ConfigError
from frdecomp.cache import KernelCache, cache_key
from frdecomp.cli import main, run
from frdecomp.config import RunConfig, make_config, read_config_file
from frdecomp.decomposition import rescaled_fluctuation
from frdecomp.lattice import LatticeSpec
from frdecomp.report import SCHEMA, read_kernel_csv, write_kernel_csv


def numerics(path):
    rep = json.loads(path.read_text())
    return rep["checks"], rep["results"]


# ------------------------------------------------------------------- main
def test_verify_defaults_pass(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path), "--quiet"]) == 0
    rep = json.loads((tmp_path / "report_verify.json").read_text())
    assert rep["schema"] == SCHEMA and rep["passed"]
    assert rep["config"]["dim"] == 2 and rep["config"]["levels"] == 2
    for c in rep["checks"]:
        assert {"name", "value", "tolerance", "relation", "passed"} <= set(c)
    assert "PASSED" in capsys.readouterr().out


def test_pole_gives_structured_error(tmp_path, capsys):
    code = main(["decompose", "--a", "0", "--p", "0", "--out", str(tmp_path), "--quiet"])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["type"] == "PoleAtZero" and err["error"] == "computation"


def test_config_error_exit(tmp_path, capsys):
    assert main(["decompose", "--L", "3", "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and err["type"] == "ConfigError"


@pytest.mark.parametrize("command", ["poisson", "averaging", "fluctuation", "decompose",
                                     "levy", "sample"])
def test_each_command_runs(tmp_path, command):
    cfg = make_config(overrides=dict(dim=1, levels=1, samples=2000, out=str(tmp_path)))
    rep = run(cfg, command)
    assert rep.checks and rep.passed
    assert (tmp_path / f"report_{command}.json").exists()


def test_csv_out_path_maps_to_directory(tmp_path):
    target = tmp_path / "fields" / "sample.csv"
    assert main(["sample", "--dim", "1", "--levels", "1", "--samples", "500",
                 "--out", str(target), "--quiet"]) == 0
    assert (tmp_path / "fields" / "sample.csv").exists()


# ------------------------------------------------------------ determinism
def test_repeat_runs_bit_identical(tmp_path):
    cache = tmp_path / "cache"
    for name in ("a", "b"):
        cfg = make_config(overrides=dict(dim=2, levels=1, samples=2000, seed=5,
                                         out=str(tmp_path / name), cache_dir=str(cache)))
        run(cfg, "verify")
    assert numerics(tmp_path / "a" / "report_verify.json") == \
        numerics(tmp_path / "b" / "report_verify.json")
    for f in (tmp_path / "a").glob("*.csv"):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_cache_matches_fresh(tmp_path):
    store = KernelCache(tmp_path)
    spec = LatticeSpec.from_L(2, 2, 1)
    build = lambda: rescaled_fluctuation(spec, 1.0).gamma
    first, hit1 = store.fetch("level", build, d=2, p=1, n=1, a=1.0)
    again, hit2 = store.fetch("level", build, d=2, p=1, n=1, a=1.0)
    assert (hit1, hit2) == (False, True)
    fresh = build()
    assert np.allclose(again.values, fresh.values, rtol=0, atol=1e-12 * np.abs(fresh.values).max())
    assert again.spec == fresh.spec and again.origin == fresh.origin
    assert cache_key("level", a=1.0) != cache_key("level", a=1.0 + 1e-15)


def test_cache_hits_recorded(tmp_path):
    cfg = make_config(overrides=dict(dim=1, levels=1, out=str(tmp_path), cache_dir=str(tmp_path)))
    run(cfg, "decompose")
    rep = run(cfg, "decompose")
    assert rep.provenance["cache_hits"] > 0


# ----------------------------------------------------------------- config
def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("dim = 3  # three dimensions\nL = 4\nlevels = 1\nmass = 0.25, 1\nseed = 9\n")
    raw = read_config_file(path)
    cfg = make_config(raw, dict(seed=3, levels=None))
    assert (cfg.dim, cfg.L, cfg.levels, cfg.mass, cfg.seed) == (3, 4, 1, (0.25, 1.0), 3)


def test_config_file_via_main(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("dim = 1\nlevels = 1\nsamples = 500\n")
    assert main(["sample", "--config", str(path), "--seed", "4", "--out", str(tmp_path),
                 "--quiet"]) == 0
    rep = json.loads((tmp_path / "report_sample.json").read_text())
    assert rep["config"]["dim"] == 1 and rep["config"]["seed"] == 4


@pytest.mark.parametrize("overrides", [dict(L=6), dict(dim=5), dict(levels=3, dim=3),
                                       dict(tol=1e-20), dict(mass="-1"), dict(alpha=2.5),
                                       dict(bogus=1), dict(dim="two"), dict(p="1,2,3")])
def test_config_errors(overrides):
    with pytest.raises(ConfigError):
        make_config(overrides=overrides)


def test_config_defaults_and_aliases():
    cfg = make_config(overrides={"d": 3, "n": 2, "a": "0,1", "cache-dir": "x"})
    assert (cfg.dim, cfg.levels, cfg.mass, cfg.cache_dir) == (3, 2, (0.0, 1.0), "x")
    assert RunConfig().as_dict()["L"] == 2
    assert make_config(overrides=dict(p="0.5")).momentum() == (0.5, 0.5)


def test_unparsable_config_file(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("this line has no separator\n")
    assert main(["verify", "--config", str(path), "--out", str(tmp_path)]) == 2


# -------------------------------------------------------------------- CSV
def test_kernel_csv_columns_and_round_trip(tmp_path):
    k = rescaled_fluctuation(LatticeSpec.from_L(2, 2, 1), 1.0).gamma
    path = write_kernel_csv(k, tmp_path / "k.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "x2", "value"]
    assert len(rows) - 1 == k.values.size
    offsets, values = read_kernel_csv(path)
    for o, v in zip(offsets, values):
        assert k(tuple(o)) == v


def test_commands_write_csv(tmp_path):
    cfg = make_config(overrides=dict(dim=2, levels=1, out=str(tmp_path)))
    run(cfg, "decompose")
    names = {p.name for p in tmp_path.glob("*.csv")}
    assert any(n.startswith("level") for n in names)
    with next(tmp_path.glob("level*.csv")).open() as fh:
        assert next(csv.reader(fh)) == ["x1", "x2", "value"]
