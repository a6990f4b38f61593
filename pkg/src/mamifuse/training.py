"""Staged k-fold training.

Stage 1 trains a five-head multi-task model on the main corpus only. Stage 2
trains a single misogyny head with external negatives added to every fold's
training side. Both produce out-of-fold predictions for the training corpus
and fold-averaged, five-crop test predictions.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from mamifuse.config import checkpoints, snapshot
from mamifuse.data import LABELS, Dataset, LabelVector, MemeSample
from mamifuse.ensemble import PredictionMatrix
from mamifuse.errors import DataError
from mamifuse.images import five_crop, load_and_resize, sample_rng, train_augment, tta_average
from mamifuse.metrics import task_macro_f1
from mamifuse.models import ModelSpec, build_model, parameter_groups, prepare_batch
from mamifuse.splitting import FoldPlan

log = logging.getLogger(__name__)

ARCHS = ("double_tower", "single_flow")

# choices the published description leaves open; echoed into every manifest
DECISIONS = {
    "augment.random_resized_crop_scale": [0.8, 1.0],
    "augment.flip_probability": 0.5,
    "inference.five_crop_size": 224,
    "double_tower.mlp": "hidden (256, 64), tanh, dropout 0.2",
    "single_flow.visual_tokens": "one projected token per backbone, shared position embedding",
    "single_flow.pooling": "first position",
    "single_flow.backbones_frozen": True,
    "optimizer": "AdamW, weight decay 0.01 on non-bias parameters",
    "grad_clip_norm": 1.0,
    "early_stop.metric": "validation macro-F1 at threshold 0.5",
    "test_aggregation": "mean over fold models",
    "stage2.external_placement": "all external rows in every fold's training side; never in validation",
    "class_weighting": "none",
}


@dataclass
class TrainingConfig:
    epochs: int = 10
    batch_size: int = 64
    warmup_fraction: float = 0.10
    early_stop_patience: int = 3
    k_folds: int = 5
    seed: int = 0
    lr_map: dict = field(default_factory=lambda: {"text": 5e-5, "image": 1e-4, "fusion": 1e-3, "single_flow": 5e-5})
    weight_decay: float = 0.01
    grad_clip: float | None = 1.0
    tta: bool = True
    fold_aggregation: str = "mean"
    pos_weight: list | None = None
    flatten_subtask_b: bool = False
    resize: int = 256
    crop: int = 224

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if self.early_stop_patience >= self.epochs:
            raise ValueError("early_stop_patience must be smaller than epochs")
        if self.fold_aggregation not in ("mean", "single"):
            raise ValueError(f"unknown fold aggregation {self.fold_aggregation!r}")

    @classmethod
    def from_config(cls, cfg: dict) -> "TrainingConfig":
        return cls(
            epochs=int(cfg["train.epochs"]),
            batch_size=int(cfg["train.batch_size"]),
            warmup_fraction=float(cfg["train.warmup_fraction"]),
            early_stop_patience=int(cfg["train.early_stop_patience"]),
            k_folds=int(cfg["split.k"]),
            seed=int(cfg["train.seed"]),
            lr_map={g: float(cfg[f"train.lr.{g}"]) for g in ("text", "image", "fusion", "single_flow")},
            weight_decay=float(cfg["train.weight_decay"]),
            grad_clip=None if cfg["train.grad_clip"] is None else float(cfg["train.grad_clip"]),
            tta=bool(cfg["train.tta"]),
            fold_aggregation=str(cfg["train.fold_aggregation"]),
            pos_weight=cfg["train.pos_weight"],
            flatten_subtask_b=bool(cfg["train.flatten_subtask_b"]),
            resize=int(cfg["image.resize"]),
            crop=int(cfg["image.crop"]),
        )


def model_spec_from_config(cfg: dict, arch: str, tasks: Sequence[str], seed: int = 0) -> ModelSpec:
    return ModelSpec(
        arch=arch,
        tasks=tuple(tasks),
        text_encoder=cfg["model.text_encoder"],
        image_encoder=cfg["model.image_encoder"],
        backbones=tuple(cfg["model.backbones"]),
        hidden_dims=tuple(int(h) for h in cfg["model.hidden_dims"]),
        dropout=float(cfg["model.dropout"]),
        width=int(cfg["model.width"]),
        layers=int(cfg["model.layers"]),
        n_heads=int(cfg["model.n_heads"]),
        ff_dim=int(cfg["model.ff_dim"]),
        sf_dropout=float(cfg["model.sf_dropout"]),
        max_text_len=int(cfg["model.max_text_len"]),
        freeze_backbones=bool(cfg["model.freeze_backbones"]),
        text_dim=int(cfg["model.text_dim"]),
        image_dim=int(cfg["model.image_dim"]),
        seed=seed,
        checkpoints=checkpoints(cfg),
    )


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_fraction: float = 0.10) -> float:
    """Linear warmup over the first ceil(warmup_fraction * total) steps, then linear decay to 0."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = math.ceil(warmup_fraction * total_steps)
    if step < warmup:
        return base_lr * step / warmup
    if step >= total_steps:
        return 0.0
    return base_lr * (total_steps - step) / (total_steps - warmup)


def multitask_bce_loss(logits, labels, tasks: Sequence[str] | None = None, pos_weight=None):
    """Mean over tasks (and rows) of binary cross-entropy on sigmoid(logits).

    Torch inputs give a differentiable tensor; anything else gives a float.
    """
    as_float = not isinstance(logits, torch.Tensor)
    x = torch.as_tensor(np.asarray(logits, dtype=np.float64)) if as_float else logits
    if isinstance(labels, LabelVector):
        labels = [getattr(labels, t) for t in (tasks or LABELS)]
    y = labels if isinstance(labels, torch.Tensor) else torch.as_tensor(np.asarray(labels, dtype=np.float64))
    y = y.to(x.dtype)
    if tasks is not None and x.shape[-1] != len(tasks):
        raise ValueError(f"logit width {x.shape[-1]} != number of tasks {len(tasks)}")
    if x.shape != y.shape:
        raise ValueError(f"logits {tuple(x.shape)} and labels {tuple(y.shape)} differ")
    pw = None if pos_weight is None else torch.as_tensor(pos_weight, dtype=x.dtype)
    loss = F.binary_cross_entropy_with_logits(x, y, pos_weight=pw)
    return float(loss) if as_float else loss


@dataclass(frozen=True)
class EarlyStopDecision:
    stop: bool
    best_epoch: int


def early_stop(history: Sequence[float], patience: int = 3) -> EarlyStopDecision:
    if not history:
        raise ValueError("empty validation history")
    best = int(np.argmax(history))
    return EarlyStopDecision(len(history) - 1 - best >= patience, best)


class ImageStore:
    """Decoded, resized images kept as uint8 so large folds stay small in memory."""

    def __init__(self, size: int = 256, max_items: int = 5000):
        self.size = size
        self.max_items = max_items
        self._cache: dict[str, np.ndarray] = {}

    def get(self, sample: MemeSample) -> np.ndarray:
        arr = self._cache.get(sample.image_ref)
        if arr is None:
            img = load_and_resize(sample.image_ref, self.size, sample_id=sample.id)
            arr = np.round(img * 255.0).astype(np.uint8)
            if len(self._cache) < self.max_items:
                self._cache[sample.image_ref] = arr
        return arr.astype(np.float32) / 255.0


def _label_matrix(samples: Sequence[MemeSample], tasks: Sequence[str]) -> np.ndarray:
    return np.array([[getattr(s.labels, t) for t in tasks] for s in samples], dtype=np.float32).reshape(len(samples), len(tasks))


def _make_optimizer(model: nn.Module, cfg: TrainingConfig) -> tuple[torch.optim.Optimizer, list[float]]:
    groups, base = [], []
    name_of = {id(p): n for n, p in model.named_parameters()}
    for gname, params in parameter_groups(model).items():
        lr = cfg.lr_map[gname]
        decay = [p for p in params if not name_of[id(p)].endswith("bias")]
        no_decay = [p for p in params if name_of[id(p)].endswith("bias")]
        for plist, wd in ((decay, cfg.weight_decay), (no_decay, 0.0)):
            if plist:
                groups.append({"params": plist, "lr": 0.0, "weight_decay": wd, "name": gname})
                base.append(lr)
    return torch.optim.AdamW(groups), base


@torch.no_grad()
def predict_probs(model: nn.Module, samples: Sequence[MemeSample], images: ImageStore, tta: bool = True,
                  crop: int = 224, batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        texts = [s.text for s in chunk]
        imgs = [images.get(s) for s in chunk]
        if tta:
            crops = [five_crop(img, crop) for img in imgs]
            views = []
            for v in range(5):
                batch = prepare_batch(model, texts, [c[v] for c in crops])
                views.append(torch.sigmoid(model(*batch)).double().numpy())
            out.append(tta_average(views))
        else:
            out.append(torch.sigmoid(model(*prepare_batch(model, texts, imgs))).double().numpy())
    width = model.heads.width
    return np.concatenate(out) if out else np.zeros((0, width))


@dataclass
class FoldResult:
    fold: int
    model: nn.Module
    val_history: list[float]
    train_loss: list[float]
    best_epoch: int
    n_train: int
    n_val: int
    train_ids: list[str] = field(default_factory=list)
    val_ids: list[str] = field(default_factory=list)


def fit(model: nn.Module, train: Sequence[MemeSample], val: Sequence[MemeSample], tasks: Sequence[str],
        cfg: TrainingConfig, seed: int, images: ImageStore) -> FoldResult:
    """Train one model; keep the weights of the best validation epoch."""
    y_train = _label_matrix(train, tasks)
    y_val = _label_matrix(val, tasks) if val else None
    opt, base = _make_optimizer(model, cfg)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total = max(1, cfg.epochs * steps_per_epoch)
    order_rng = np.random.default_rng([seed, 17])
    pos_weight = None if cfg.pos_weight is None else torch.tensor(cfg.pos_weight, dtype=torch.float32)
    step = 0
    history: list[float] = []
    losses: list[float] = []
    best_state = copy.deepcopy(model.state_dict())
    best_epoch = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = order_rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(train), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            chunk = [train[i] for i in idx]
            imgs = [train_augment(images.get(s), sample_rng(seed, s.id, epoch)) for s in chunk]
            batch = prepare_batch(model, [s.text for s in chunk], imgs)
            logits = model(*batch)
            loss = multitask_bce_loss(logits, torch.from_numpy(y_train[idx]).to(logits.dtype), tasks, pos_weight)
            for g, b in zip(opt.param_groups, base):
                g["lr"] = lr_schedule(step, total, b, cfg.warmup_fraction)
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip is not None:
                nn.utils.clip_grad_norm_([p for g in opt.param_groups for p in g["params"]], cfg.grad_clip)
            opt.step()
            step += 1
            epoch_loss += loss.item() * len(idx)
        losses.append(epoch_loss / len(train))
        if not val:
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
            continue
        probs = predict_probs(model, val, images, tta=cfg.tta, crop=cfg.crop, batch_size=cfg.batch_size)
        score = task_macro_f1((probs >= 0.5).astype(np.uint8), y_val.astype(np.uint8))
        history.append(score)
        decision = early_stop(history, cfg.early_stop_patience)
        if decision.best_epoch == epoch:
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
        log.info("epoch %d loss %.4f val macro-F1 %.4f", epoch, losses[-1], score)
        if decision.stop:
            break
    model.load_state_dict(best_state)
    model.eval()
    return FoldResult(-1, model, history, losses, best_epoch, len(train), len(val))


def _fold_seed(seed: int, fold: int) -> int:
    # independent of the stage, so stage 2 without external rows replays a one-head stage 1
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0] & 0x7FFFFFFF)


def _flatten(samples: Sequence[MemeSample], tasks: Sequence[str]) -> list[MemeSample]:
    """One single-label copy per task; the task name is prepended to the text."""
    out = []
    for s in samples:
        for t in tasks:
            lab = LabelVector(misogynous=getattr(s.labels, t)) if s.labels is not None else None
            out.append(MemeSample(f"{s.id}#{t}", f"{t} {s.text}", s.image_ref, lab, "main"))
    return out


@dataclass
class StageResult:
    stage: int
    arch: str
    tasks: tuple[str, ...]
    folds: list[FoldResult]
    oof: PredictionMatrix
    test: PredictionMatrix | None
    specs: list[ModelSpec]


def _predict_stage(model, samples, tasks, cfg, images, flatten):
    if not flatten:
        return predict_probs(model, samples, images, tta=cfg.tta, crop=cfg.crop, batch_size=cfg.batch_size)
    flat = predict_probs(model, _flatten(samples, tasks), images, tta=cfg.tta, crop=cfg.crop, batch_size=cfg.batch_size)
    return flat.reshape(len(samples), len(tasks))


def _train_kfold(stage: int, train: Dataset, extra: Sequence[MemeSample], plan: FoldPlan, arch: str,
                 cfg: TrainingConfig, config: dict, tasks: Sequence[str], test: Dataset | None) -> StageResult:
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}")
    if set(plan.assignment) != set(train.ids):
        raise ValueError("fold plan does not cover the training dataset")
    if not train.labeled:
        raise ValueError("training dataset must be labeled")
    flatten = cfg.flatten_subtask_b and stage == 1 and len(tasks) > 1
    model_tasks = ("misogynous",) if flatten else tuple(tasks)
    images = ImageStore(cfg.resize)
    oof = np.full((len(train), len(tasks)), np.nan)
    index = {sid: i for i, sid in enumerate(train.ids)}
    folds, specs = [], []
    test_sum = None
    k = plan.k if cfg.fold_aggregation == "mean" else 1
    for fold in range(plan.k):
        val = [s for s in train if plan.assignment[s.id] == fold]
        tr = [s for s in train if plan.assignment[s.id] != fold] + list(extra)
        if flatten:
            tr, val_fit = _flatten(tr, tasks), _flatten(val, tasks)
        else:
            val_fit = val
        seed = _fold_seed(cfg.seed, fold)
        torch.manual_seed(seed)
        spec = model_spec_from_config(config, arch, model_tasks, seed=seed)
        model = build_model(spec)
        result = fit(model, tr, val_fit, model_tasks, cfg, seed, images)
        result.fold = fold
        result.train_ids = [s.id for s in tr]
        result.val_ids = [s.id for s in val_fit]
        folds.append(result)
        specs.append(spec)
        if val:
            probs = _predict_stage(model, val, tasks, cfg, images, flatten)
            oof[[index[s.id] for s in val]] = probs
        if test is not None and len(test) and fold < k:
            p = _predict_stage(model, list(test), tasks, cfg, images, flatten)
            test_sum = p if test_sum is None else test_sum + p
    if np.isnan(oof).any():
        raise RuntimeError("out-of-fold predictions do not cover every training sample")
    oof_pm = PredictionMatrix(train.ids, tuple(tasks), oof)
    test_pm = None
    if test is not None:
        vals = test_sum / k if test_sum is not None else np.zeros((0, len(tasks)))
        test_pm = PredictionMatrix(test.ids, tuple(tasks), vals)
    return StageResult(stage, arch, tuple(tasks), folds, oof_pm, test_pm, specs)


def train_stage1(train: Dataset, plan: FoldPlan, arch: str, cfg: TrainingConfig, config: dict,
                 test: Dataset | None = None, tasks: Sequence[str] = LABELS) -> StageResult:
    """Multi-task training on the main corpus: five heads, no external data."""
    if any(s.source != "main" for s in train):
        raise ValueError("stage 1 trains on the main corpus only")
    return _train_kfold(1, train, (), plan, arch, cfg, config, tuple(tasks), test)


def train_stage2(train: Dataset, external: Dataset, plan: FoldPlan, arch: str, cfg: TrainingConfig, config: dict,
                 test: Dataset | None = None) -> StageResult:
    """Single-task misogyny training; external negatives join every fold's training side."""
    bad = [s.id for s in external if s.labels is None or any(s.labels.as_tuple())]
    if bad:
        raise ValueError(f"external sample {bad[0]!r} carries a positive label")
    clash = set(train.ids) & set(external.ids)
    if clash:
        raise DataError(f"external ids collide with training ids: {sorted(clash)[:3]}")
    return _train_kfold(2, train, list(external), plan, arch, cfg, config, ("misogynous",), test)


class RunManifest:
    """manifest.json for one stage run: written as 'started', then finalized."""

    def __init__(self, path, config: dict, stage: int, arch: str, plan: FoldPlan | None):
        self.path = Path(path)
        self.data = {
            "status": "started",
            "stage": stage,
            "arch": arch,
            "config": snapshot(config),
            "fold_plan_sha256": plan.digest() if plan is not None else None,
            "decisions": dict(DECISIONS),
            "folds": [],
            "outputs": {},
        }

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def finalize(self, result: StageResult, outputs: dict[str, str]) -> None:
        self.data["status"] = "finalized"
        self.data["tasks"] = list(result.tasks)
        self.data["folds"] = [
            {
                "fold": f.fold,
                "n_train": f.n_train,
                "n_val": f.n_val,
                "best_epoch": f.best_epoch,
                "val_macro_f1": [round(v, 6) for v in f.val_history],
                "train_loss": [round(v, 6) for v in f.train_loss],
            }
            for f in result.folds
        ]
        self.data["outputs"] = dict(sorted(outputs.items()))
        self.write()
