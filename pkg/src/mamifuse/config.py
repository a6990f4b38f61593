"""Layered flat key-value configuration.

Layers, lowest first: built-in defaults, a YAML file (nested mappings are
flattened to dotted keys) or a run ``manifest.json``, then ``key=value``
overrides from the command line.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable

import yaml

from mamifuse.errors import ConfigError

RUN_ROOT_ENV = "MAMIFUSE_RUN_ROOT"

DEFAULTS: dict = {
    "data.train": None,
    "data.test": None,
    "data.test_labels": None,
    "data.external": None,
    "data.image_root": None,
    "data.negative_levels": ["not_offensive", "not offensive", "slight", "slight_offensive",
                             "slightly_offensive", "slight offensive"],
    "split.k": 5,
    "split.seed": 0,
    "split.folds": None,
    "train.epochs": 10,
    "train.batch_size": 64,
    "train.warmup_fraction": 0.10,
    "train.early_stop_patience": 3,
    "train.seed": 0,
    "train.weight_decay": 0.01,
    "train.grad_clip": 1.0,
    "train.lr.text": 5e-5,
    "train.lr.image": 1e-4,
    "train.lr.fusion": 1e-3,
    "train.lr.single_flow": 5e-5,
    "train.tta": True,
    "train.fold_aggregation": "mean",
    "train.pos_weight": None,
    "train.flatten_subtask_b": False,
    "image.resize": 256,
    "image.crop": 224,
    "model.text_encoder": "toy_text",
    "model.image_encoder": "toy_image",
    "model.backbones": ["toy_image:a", "toy_image:b", "toy_image:c", "toy_image:d"],
    "model.hidden_dims": [256, 64],
    "model.dropout": 0.2,
    "model.width": 128,
    "model.layers": 2,
    "model.n_heads": 4,
    "model.ff_dim": 256,
    "model.sf_dropout": 0.1,
    "model.max_text_len": 64,
    "model.freeze_backbones": True,
    "model.text_dim": 256,
    "model.image_dim": 32,
    "ensemble.alpha": 0.1,
    "postprocess.threshold": 0.5,
    "postprocess.replace_misogynous": True,
    "evaluate.primary": "macro",
}

_OPEN_PREFIXES = ("checkpoints.",)


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in tree.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict) and full not in DEFAULTS:
            out.update(flatten(value, full + "."))
        else:
            out[full] = value
    return out


def _check_keys(values: dict, origin: str) -> None:
    for key in values:
        if key not in DEFAULTS and not key.startswith(_OPEN_PREFIXES):
            raise ConfigError(f"{origin}: unknown configuration key {key!r}")


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".json":
            tree = json.loads(text)
            if isinstance(tree, dict) and "config" in tree and isinstance(tree["config"], dict):
                tree = tree["config"]  # a run manifest
        else:
            tree = yaml.safe_load(text) or {}
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    values = flatten(tree)
    _check_keys(values, str(path))
    return values


def parse_override(item: str) -> tuple[str, object]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    try:
        value = yaml.safe_load(raw) if raw else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override {item!r}: {exc}") from exc
    return key.strip(), value


def load_config(path=None, overrides: Iterable[str] = ()) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        cfg.update(read_config_file(path))
    extra = dict(parse_override(o) for o in overrides)
    _check_keys(extra, "command line")
    cfg.update(extra)
    return cfg


def checkpoints(cfg: dict) -> dict:
    return {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("checkpoints.") and v}


def require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"missing required configuration key(s): {', '.join(missing)}")


def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def snapshot(cfg: dict) -> dict:
    """JSON-safe copy with sorted keys, for manifests."""
    return json.loads(json.dumps({k: cfg[k] for k in sorted(cfg)}))
