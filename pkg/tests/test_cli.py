"""CLI dispatch: exit codes, help, stage gating, data generation."""

import json
from pathlib import Path

import pytest

from tiva.config import load_config_file
from tiva.gateway.cli import main


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    for sub in ["gen-data", "train", "eval", "serve", "run-offline", "bench-latency"]:
        assert main([sub, "--help"]) == 0


def test_unknown_subcommand_exits_one(capsys):
    assert main(["frobnicate"]) == 1


def test_gen_data_writes_dataset(tmp_path, capsys):
    rc = main(["gen-data", "--out", str(tmp_path / "ds"), "--count", "4",
               "--frames", "24"])
    assert rc == 0
    dirs = list((tmp_path / "ds").iterdir())
    assert len(dirs) == 4
    meta = json.loads((dirs[0] / "meta.json").read_text())
    assert set(meta["masks"]) == {"s", "r", "P", "Vh"}
    for name in ["frames.rgb8", "agent.pcm", "human.pcm", "conditions.bin"]:
        assert (dirs[0] / name).exists()


def test_train_lsvm_without_lsm_is_user_error(tmp_path, capsys):
    rc = main(["train", "--stage", "lsvm", "--out", str(tmp_path / "run")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "codec" in err or "lsm" in err


def test_config_file_formats(tmp_path):
    j = tmp_path / "c.json"
    j.write_text('{"backbone": {"layers": 2}}')
    assert load_config_file(j) == {"backbone": {"layers": 2}}
    kv = tmp_path / "c.cfg"
    kv.write_text("backbone.layers=2\nsession.fps=24\n# comment\n")
    parsed = load_config_file(kv)
    assert parsed["backbone"]["layers"] == 2
    assert parsed["session"]["fps"] == 24
    bad = tmp_path / "bad.cfg"
    bad.write_text("not a pair\n")
    with pytest.raises(ValueError, match="key=value"):
        load_config_file(bad)


def test_bench_latency_smoke(tmp_path, capsys):
    rc = main(["bench-latency", "--frames", "12"])
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    rec = json.loads(out[-1])
    assert rec["frames"] == 12
    assert "p99_ms" in rec
