import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from cfcl.cli import main
from cfcl.config import ConfigError, RunConfig, config_from_dict, load_config
from cfcl.estimator import CFCLEmbedder

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_follow_reference_setup():
    cfg = RunConfig()
    assert (cfg.K_reserve, cfg.K_approx, cfg.cluster_count, cfg.T, cfg.T_a, cfg.T_p) == (500, 1000, 4, 2500, 50, 10)
    assert cfg.temperature(0) == 4 and cfg.temperature(cfg.T) == 10


def test_sections_flatten():
    cfg = config_from_dict({"schedule": {"T": 30, "T_a": 10}, "seed": 3})
    assert cfg.T == 30 and cfg.T_a == 10 and cfg.seed == 3


@pytest.mark.parametrize("key,value", [
    ("strategy", "gossip"), ("T", 0), ("budget", -1), ("budget", 5000), ("K_reserve", 7000),
    ("margin", -0.1), ("buffer", "huge"), ("reserve_selection", "best"), ("labels_per_device", 11),
    ("target_degree", 20), ("mask_fraction", 2.0), ("scale_range", [1.2, 0.8]), ("sigma", -1.0),
    ("activation", "gelu"), ("source", "csv"), ("rate_bps", 0),
])
def test_validation_names_the_field(key, value):
    with pytest.raises(ConfigError) as err:
        config_from_dict({key: value})
    assert err.value.key == key


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as err:
        config_from_dict({"schedule": {"TT": 3}})
    assert err.value.key == "TT"


def test_explicit_topology_needs_adjacency():
    with pytest.raises(ConfigError):
        config_from_dict({"topology": "explicit", "devices": 3})


def test_shipped_configs_load():
    for path in CONFIGS.glob("*.yaml"):
        load_config(path)


def test_simulate_missing_config_exits_2(tmp_path, capsys):
    code = main(["simulate", "--config", str(tmp_path / "absent.yaml"), "--out", str(tmp_path / "o")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "io"


def test_simulate_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schedule: {T: -5}\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err == {"error": "config", "message": "T: must be >= 1", "key": "T"}


def _smoke(tmp_path, **over):
    cfg = yaml.safe_load((CONFIGS / "smoke.yaml").read_text())
    cfg.update(over)
    path = tmp_path / "smoke.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_simulate_writes_schemas_and_is_deterministic(tmp_path):
    cfg = _smoke(tmp_path)
    for out in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / out), "--svg", "--seed", "3"]) == 0
    for name in ("run_log.csv", "exchange_log.csv", "eval_log.csv", "pull_log.csv", "aggregations.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    headers = {n: next(csv.reader(open(tmp_path / "a" / n))) for n in ("run_log.csv", "exchange_log.csv", "eval_log.csv")}
    assert headers["run_log.csv"] == ["t", "device", "loss"]
    assert headers["exchange_log.csv"] == ["t", "i", "j", "candidate_id", "probability", "chosen"]
    assert headers["eval_log.csv"] == ["gamma", "t", "accuracy", "label_variance_mean", "cumulative_delay_s"]
    assert (tmp_path / "a" / "accuracy_vs_delay.svg").read_text().startswith("<svg")
    assert load_config(tmp_path / "a" / "config.yaml").seed == 3


def test_exchange_log_probabilities_sum_to_one(tmp_path):
    cfg = _smoke(tmp_path)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
    sums, chosen = {}, {}
    with open(tmp_path / "o" / "exchange_log.csv") as f:
        for r in csv.DictReader(f):
            key = (r["t"], r["i"], r["j"])
            sums[key] = sums.get(key, 0.0) + float(r["probability"])
            chosen[key] = chosen.get(key, 0) + int(r["chosen"])
    assert sums and all(abs(v - 1) < 1e-9 for v in sums.values())
    assert set(chosen.values()) == {10}


def test_strategy_flag_overrides(tmp_path):
    cfg = _smoke(tmp_path)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "f"), "--strategy", "fedavg"]) == 0
    with open(tmp_path / "f" / "exchange_log.csv") as f:
        assert len(f.readlines()) == 1


def test_make_data_then_simulate(tmp_path):
    cfg = _smoke(tmp_path)
    assert main(["make-data", "--config", cfg, "--out", str(tmp_path / "data")]) == 0
    made = tmp_path / "data" / "config.yaml"
    assert load_config(made).source == "idx"
    assert main(["simulate", "--config", str(made), "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "eval_log.csv").exists()


def test_make_data_repacks_idx(tmp_path):
    cfg = _smoke(tmp_path)
    main(["make-data", "--config", cfg, "--out", str(tmp_path / "d1")])
    img = next((tmp_path / "d1").glob("train-images*"))
    lab = next((tmp_path / "d1").glob("train-labels*"))
    assert main(["make-data", "--config", cfg, "--out", str(tmp_path / "d2"), "--images", str(img),
                 "--labels", str(lab), "--limit", "30"]) == 0
    from cfcl.data import read_idx
    out = read_idx(next((tmp_path / "d2").glob("images*")))
    assert np.array_equal(out, read_idx(img)[:30])


def test_eval_and_dump_embeddings(tmp_path, capsys):
    cfg = _smoke(tmp_path)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "r")])
    capsys.readouterr()
    assert main(["eval", "--config", cfg, "--model", str(tmp_path / "r" / "model.npz")]) == 0
    acc = float(capsys.readouterr().out.strip().split("=")[1])
    assert 0 <= acc <= 1
    out = tmp_path / "emb.csv"
    assert main(["dump-embeddings", "--config", cfg, "--model", str(tmp_path / "r" / "model.npz"),
                 "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["e0", "e1", "e2", "e3", "label"] and len(rows) > 1


def test_eval_missing_model(tmp_path):
    assert main(["eval", "--config", _smoke(tmp_path), "--model", str(tmp_path / "none.npz")]) == 2


def test_embedder_estimator():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(k, 0.2, (30, 4)) for k in range(4)])
    est = CFCLEmbedder(devices=4, T=20, T_a=10, T_p=5, budget=5, K_reserve=5, K_approx=10,
                       hidden_dims=(8,), embedding_dim=3, target_degree=2)
    assert est.get_params()["budget"] == 5
    Z = est.fit(X, device=np.repeat(np.arange(4), 30)).transform(X)
    assert Z.shape == (120, 3)
    assert np.array_equal(est.fit_transform(X), est.transform(X))
    with pytest.raises(ValueError):
        est.transform(np.zeros((2, 5)))
