import json

import pytest

from mamifuse.config import DEFAULTS, checkpoints, load_config, parse_override, require, run_root, snapshot
from mamifuse.errors import ConfigError


def test_defaults_layered(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train:\n  batch_size: 8\n  lr:\n    text: 1.0e-4\nsplit: {k: 3}\n")
    cfg = load_config(p, ["split.k=4", "train.tta=false"])
    assert cfg["train.batch_size"] == 8
    assert cfg["train.lr.text"] == 1e-4
    assert cfg["split.k"] == 4
    assert cfg["train.tta"] is False
    assert cfg["train.epochs"] == DEFAULTS["train.epochs"]


def test_list_valued_key_not_flattened(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("model:\n  backbones: [toy_image:x, toy_image:y]\n")
    assert load_config(p)["model.backbones"] == ["toy_image:x", "toy_image:y"]


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="train.epoch"):
        load_config(overrides=["train.epoch=3"])
    p = tmp_path / "c.yaml"
    p.write_text("bogus: 1\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_checkpoint_keys_open():
    cfg = load_config(overrides=["checkpoints.resnet18=/w/r18.pt"])
    assert checkpoints(cfg) == {"resnet18": "/w/r18.pt"}


def test_manifest_as_config(tmp_path):
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps({"status": "finalized", "config": snapshot(load_config(overrides=["split.k=7"]))}))
    assert load_config(p)["split.k"] == 7


def test_bad_inputs(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1,\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        parse_override("no-equals-sign")


def test_require_names_missing_key():
    with pytest.raises(ConfigError, match="data.external"):
        require(load_config(), "data.external")


def test_run_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("MAMIFUSE_RUN_ROOT", str(tmp_path))
    assert run_root() == tmp_path
    monkeypatch.delenv("MAMIFUSE_RUN_ROOT")
    assert str(run_root()) == "runs"


def test_snapshot_sorted_and_json_safe():
    snap = snapshot(load_config())
    assert list(snap) == sorted(snap)
    json.dumps(snap)
