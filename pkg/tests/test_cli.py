import csv
import json
import os
import subprocess
import sys

import pytest
import yaml

from oafmtl import cli
from oafmtl import config as cfgmod
from oafmtl.training import CSV_COLUMNS

SMALL = {
    "rounds": 3,
    "num_devices": 4,
    "rows": 96,
    "learning_rate": 1.0,
    "tasks": [{"dim": 128, "top_k": 13, "kind": "logistic", "classes": 4, "reg": 1e-3}] * 2,
    "data": {"samples_per_device": 30, "test_samples": 50, "informative": 4},
    "recover": {"dim": 256, "rows": 192, "iterations": 5},
    "bound": {"dim": 64, "rows": 48, "top_k": 8, "rounds": 4, "samples_per_device": 20},
}


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_schema_lists_every_column(capsys):
    assert cli.main(["schema"]) == 0
    out = capsys.readouterr().out
    for name, cols in cli.SCHEMAS.items():
        assert name in out
        for c in cols:
            assert c in out


def test_schema_covers_training_columns():
    assert set(CSV_COLUMNS) | {"seed"} == set(cli.SCHEMAS["train.csv"])


def test_bad_config_field_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"rows": 2000, "recover": {"rows": 9000}}))
    assert cli.main(["se", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "tasks[0].dim: rows (2000) exceeds dim (1024)" in err
    assert "recover.rows" in err
    assert not (tmp_path / "o").exists()


def test_unknown_field_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("turbo:\n  max_iter: 3\n")
    assert cli.main(["se", "--config", str(bad)]) == 2
    assert "turbo.max_iter: unknown field" in capsys.readouterr().err


def test_bad_seeds_flag(capsys):
    assert cli.main(["se", "--seeds", "1,x"]) == 2


def test_se_and_recover_outputs(small_cfg, tmp_path):
    out = tmp_path / "o"
    assert cli.main(["se", "--config", str(small_cfg), "--out", str(out)]) == 0
    se = read_rows(out / "se.csv")
    assert list(se[0]) == list(cli.SCHEMAS["se.csv"])
    assert cli.main(["recover", "--config", str(small_cfg), "--out", str(out), "--seeds", "0,1"]) == 0
    rows = read_rows(out / "recover.csv")
    assert {r["scheme"] for r in rows} == {"m_turbo_cs", "scheme2", "tdm", "se"}
    assert {r["seed"] for r in rows} == {"0", "1"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "recover" and man["seeds"] == [0, 1]


def test_single_task_recover_columns_identical(tmp_path):
    path = tmp_path / "one.yaml"
    path.write_text(yaml.safe_dump(dict(SMALL, recover={**SMALL["recover"], "signal_priors": [[0.3, 1.0]]})))
    assert cli.main(["recover", "--config", str(path), "--out", str(tmp_path), "--seed", "2"]) == 0
    rows = read_rows(tmp_path / "recover.csv")
    joint = [(r["iteration"], r["predicted_v"], r["simulated_mse"]) for r in rows if r["scheme"] == "m_turbo_cs"]
    blind = [(r["iteration"], r["predicted_v"], r["simulated_mse"]) for r in rows if r["scheme"] == "scheme2"]
    assert joint == blind and joint


def test_train_outputs_and_tstar(small_cfg, tmp_path):
    out = tmp_path / "o"
    assert cli.main(["train", "--config", str(small_cfg), "--out", str(out), "--seed", "0"]) == 0
    rows = read_rows(out / "train.csv")
    assert {r["scheme"] for r in rows} == {"oa_fmtl", "scheme1_tdm", "scheme2", "error_free"}
    assert len(rows) == 4 * 3 * 2
    ts = read_rows(out / "tstar.csv")
    assert sorted({float(r["xi"]) for r in ts}) == [0.8, 0.85, 0.9, 0.95, 1.0]
    assert len(ts) == 4 * 5


def test_bound_output(small_cfg, tmp_path):
    assert cli.main(["bound", "--config", str(small_cfg), "--out", str(tmp_path), "--seeds", "0,1"]) == 0
    rows = read_rows(tmp_path / "bound.csv")
    assert len(rows) == 2 * 4
    assert all(r["dominates"] == "1" for r in rows)


def test_deterministic_across_pool_sizes(small_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["train", "--config", str(small_cfg), "--seeds", "0,1", "--scheme", "oa_fmtl"]
    assert cli.main(args + ["--out", str(a), "--jobs", "1"]) == 0
    assert cli.main(args + ["--out", str(b), "--jobs", "2"]) == 0
    for name in ("train.csv", "tstar.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_manifest_replays_run(small_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["recover", "--config", str(small_cfg), "--out", str(a), "--seed", "3"]) == 0
    assert cli.main(["recover", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "recover.csv").read_bytes() == (b / "recover.csv").read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["config_hash"] == mb["config_hash"]


def test_flags_override_file(small_cfg):
    conf = cfgmod.load(small_cfg, cli._overrides(cli.build_parser().parse_args(
        ["recover", "--paper-ratio", "--paper-sigma", "--seeds", "4,5", "--jobs", "3"])))
    assert conf["recover"]["paper_ratio"] and conf["turbo"]["paper_ratio"]
    assert conf["paper_sigma"] and conf["recover"]["paper_sigma"]
    assert conf["seeds"] == [4, 5] and conf["jobs"] == 3


def test_output_dir_env_var(small_cfg, tmp_path):
    env_dir = tmp_path / "from_env"
    proc = subprocess.run(
        [sys.executable, "-m", "oafmtl.cli", "se", "--config", str(small_cfg)],
        env={**os.environ, cfgmod.OUTPUT_ENV: str(env_dir)}, capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (env_dir / "se.csv").exists()
