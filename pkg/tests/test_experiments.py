import csv
import json

import numpy as np
import pytest

from lipca.core import Init
from lipca.errors import InvalidConfig
from lipca.experiments import (
    CONVERGENCE_COLUMNS,
    CONVERGENCE_RAW_COLUMNS,
    LIPSCHITZ_COLUMNS,
    SYNC_COLUMNS,
    ConvergenceConfig,
    fit_loglog_slope,
    load_config,
    nv_rule,
    off_pattern_mass,
    parse_init,
    run_experiment,
)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_defaults(self):
        cfg = load_config("convergence")
        assert cfg.M_grid == [100, 316, 1000, 3162, 10000] and cfg.pool == 50_000
        assert load_config("lipschitz").N_list == [2, 3, 4]

    @pytest.mark.parametrize("name,bad", [
        ("lipschitz", {"K_list": [1]}),
        ("lipschitz", {"pairs": 0}),
        ("convergence", {"M_grid": [10, 100], "pool": 50}),
        ("convergence", {"n_v": -1}),
        ("convergence", {"K": 2}),
        ("sync-predict", {"theta": 1.5}),
        ("sync-predict", {"unknown": 3}),
        ("sync-predict", {"experiment": "lipschitz"}),
    ])
    def test_rejects(self, name, bad):
        with pytest.raises(ValueError):
            load_config(name, bad)

    def test_unknown_experiment(self):
        with pytest.raises(InvalidConfig):
            load_config("nope")

    def test_from_json_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"experiment": "sync-predict", "M": 50, "theta": 0.1}))
        cfg = load_config("sync-predict", p)
        assert cfg.M == 50 and cfg.theta == 0.1

    def test_nv_rule(self):
        assert [nv_rule("default", n) for n in (2, 3, 4, 8)] == [1, 1, 2, 3]
        assert nv_rule(2, 9) == 2
        with pytest.raises(InvalidConfig):
            nv_rule("half", 4)


class TestParseInit:
    def test_forms(self):
        assert parse_init("uniform").kind == "uniform"
        pt = parse_init("point:1,3,2", K=3)
        assert pt.kind == "point" and list(pt.value) == [0, 2, 1]
        assert list(parse_init("site:0.6,0.3,0.1").value) == [0.6, 0.3, 0.1]
        assert parse_init({"kind": "point", "value": [2, 2]}).value == (1, 1)
        assert parse_init(Init.uniform()).kind == "uniform"

    @pytest.mark.parametrize("bad", ["point:0,1", "site:0.5,-1", "wat:1", 3])
    def test_bad(self, bad):
        with pytest.raises(InvalidConfig):
            parse_init(bad, K=2)


def test_loglog_slope_and_pattern_mass():
    M = np.array([10, 100, 1000])
    assert fit_loglog_slope(M, 3 * M ** -0.5) == pytest.approx(-0.5)
    T = np.array([[0, 1.0], [1, 0]])
    assert off_pattern_mass([[0.1, 0.9], [0.97, 0.03]], T) == pytest.approx(0.1)


def test_lipschitz_small(tmp_path):
    res = run_experiment("lipschitz", {"N_list": [2, 3], "K_list": [2], "pairs": 10, "output_dir": str(tmp_path)})
    rows = read_rows(tmp_path / "lipschitz.csv")
    assert list(rows[0]) == LIPSCHITZ_COLUMNS
    assert len(rows) == 2
    for r in rows:
        assert int(r["pairs"]) == 10
        assert float(r["max_dP1_over_bound"]) <= 1 + 1e-9
        assert float(r["max_dpi1_over_bound"]) <= 1 + 1e-9
    assert float(rows[0]["dP1_dT1"]) <= 4 + 1e-9
    assert (tmp_path / "lipschitz.png").stat().st_size > 0
    assert res.files["figure"].endswith("lipschitz.png")


def test_lipschitz_deterministic_across_workers(tmp_path):
    base = {"N_list": [2, 3], "K_list": [2], "pairs": 4, "plots": False}
    run_experiment("lipschitz", {**base, "output_dir": str(tmp_path / "a")})
    run_experiment("lipschitz", {**base, "output_dir": str(tmp_path / "b"), "workers": 2})
    assert (tmp_path / "a" / "lipschitz.csv").read_bytes() == (tmp_path / "b" / "lipschitz.csv").read_bytes()


def test_convergence_small(tmp_path):
    cfg = ConvergenceConfig(N=4, K=2, n_v=1, T=[[0.7, 0.3], [0.4, 0.6]], pool=400, L=4, M_grid=[50, 200],
                            init="site:0.8,0.2", resamples=3, output_dir=str(tmp_path), plots=True)
    res = run_experiment("convergence", cfg)
    rows = read_rows(tmp_path / "convergence.csv")
    assert list(rows[0]) == CONVERGENCE_COLUMNS
    assert {(r["M"], r["estimator"]) for r in rows} == {(m, e) for m in ("50", "200") for e in ("multi-trajectory", "ensemble")}
    raw = read_rows(tmp_path / "convergence_raw.csv")
    assert list(raw[0]) == CONVERGENCE_RAW_COLUMNS and len(raw) == 2 * 2 * 3
    for r in rows:
        assert float(r["min"]) <= float(r["median"]) <= float(r["max"])
    summary = json.loads((tmp_path / "convergence_summary.json").read_text())
    assert set(summary["slopes"]) == {"multi-trajectory", "ensemble"}
    assert summary == json.loads(json.dumps(res.summary))
    assert (tmp_path / "convergence.png").exists()


def test_sync_predict_pattern(tmp_path):
    res = run_experiment("sync-predict", {"M": 400, "L": 40, "theta": 0.05, "sim_runs": 5, "sim_L": 60,
                                          "output_dir": str(tmp_path), "plots": False})
    rows = read_rows(tmp_path / "sync_predict.csv")
    assert list(rows[0]) == SYNC_COLUMNS and len(rows) == 4
    multi = [r for r in res.summary["rows"] if r["estimator"] == "multi-trajectory"]
    assert multi[0]["off_pattern_mass"] < 0.02
    thr = next(r for r in multi if r["thresholded"])
    assert thr["predicts_sync"] is True and thr["synchronized"] == 5
    assert not (tmp_path / "sync_predict.png").exists()


def test_output_dir_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("LIPCA_OUTPUT_DIR", str(tmp_path / "env"))
    run_experiment("lipschitz", {"N_list": [2], "K_list": [2], "pairs": 2, "plots": False})
    assert (tmp_path / "env" / "lipschitz.csv").exists()
