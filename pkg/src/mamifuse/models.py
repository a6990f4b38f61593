"""Double-tower and single-flow multimodal classifiers.

Both models take ``(ids, mask, pixels)``: token ids and attention mask from the
text encoder's tokenizer, and an NCHW float batch of [0, 1] images. They return
one logit per configured task.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from mamifuse.data import LABELS
from mamifuse.encoders import MAX_TEXT_LEN, EncoderRegistry, normalize
from mamifuse.images import to_tensor

WEIGHTS_FORMAT = "mamifuse-weights"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class HeadConfig:
    tasks: tuple[str, ...] = LABELS
    hidden_dims: tuple[int, ...] = (256, 64)

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("at least one task is required")
        unknown = [t for t in self.tasks if t not in LABELS]
        if unknown:
            raise ValueError(f"unknown tasks {unknown}")
        if list(self.tasks) != [t for t in LABELS if t in self.tasks]:
            raise ValueError("tasks must follow the canonical label order")

    @property
    def width(self) -> int:
        return len(self.tasks)


class DoubleTower(nn.Module):
    """Text tower and image tower, concatenated and fused by an MLP."""

    arch = "double_tower"

    def __init__(self, text_encoder: nn.Module, image_encoder: nn.Module, heads: HeadConfig = HeadConfig(),
                 dropout: float = 0.2, fusion_in_dim: int | None = None):
        super().__init__()
        in_dim = text_encoder.dim + image_encoder.dim
        if fusion_in_dim is not None and fusion_in_dim != in_dim:
            raise ValueError(f"fusion input dim {fusion_in_dim} != text {text_encoder.dim} + image {image_encoder.dim}")
        self.heads = heads
        self.text_encoder = text_encoder
        self.image_encoder = image_encoder
        layers = []
        prev = in_dim
        for h in heads.hidden_dims:
            layers += [nn.Linear(prev, h), nn.Tanh(), nn.Dropout(dropout)]
            prev = h
        self.mlp = nn.Sequential(*layers)
        self.head = nn.Linear(prev, heads.width)
        for mod in layers:
            if isinstance(mod, nn.Linear):
                nn.init.xavier_uniform_(mod.weight, gain=nn.init.calculate_gain("tanh"))
                nn.init.zeros_(mod.bias)

    def fused_features(self, ids, mask, pixels):
        _, pooled = self.text_encoder(ids, mask)
        img = self.image_encoder(normalize(pixels, self.image_encoder))
        return torch.cat([pooled, img], dim=-1)

    def forward(self, ids, mask, pixels):
        return self.head(self.mlp(self.fused_features(ids, mask, pixels)))

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "text": [p for p in self.text_encoder.parameters() if p.requires_grad],
            "image": [p for p in self.image_encoder.parameters() if p.requires_grad],
            "fusion": [p for p in list(self.mlp.parameters()) + list(self.head.parameters()) if p.requires_grad],
        }


class SingleFlow(nn.Module):
    """One transformer over [CLS, text tokens, one projected token per image backbone].

    Text tokens get position and segment-0 embeddings; visual tokens share a
    single position embedding and segment 1. Logits come from position 0.
    """

    arch = "single_flow"

    def __init__(self, text_encoder: nn.Module, backbones: dict[str, nn.Module], heads: HeadConfig = HeadConfig(),
                 width: int = 128, layers: int = 2, n_heads: int = 4, ff_dim: int = 256, dropout: float = 0.1,
                 max_text_len: int = MAX_TEXT_LEN, freeze_backbones: bool = True):
        super().__init__()
        if not backbones:
            raise ValueError("single-flow model needs at least one image backbone")
        self.heads = heads
        self.max_text_len = max_text_len
        self.backbone_ids = list(backbones)
        self.text_encoder = text_encoder
        self.backbones = nn.ModuleList(backbones.values())
        self.freeze_backbones = freeze_backbones
        if freeze_backbones:
            for p in self.backbones.parameters():
                p.requires_grad_(False)
        self.text_proj = nn.Linear(text_encoder.dim, width) if text_encoder.dim != width else nn.Identity()
        self.visual_proj = nn.ModuleList(nn.Linear(b.dim, width) for b in self.backbones)
        self.cls = nn.Parameter(torch.zeros(width))
        self.segment = nn.Embedding(2, width)
        self.position = nn.Embedding(max_text_len, width)
        self.visual_position = nn.Parameter(torch.zeros(width))
        self.embed_norm = nn.LayerNorm(width)
        self.embed_dropout = nn.Dropout(dropout)
        layer = nn.TransformerEncoderLayer(width, n_heads, ff_dim, dropout, activation="gelu", batch_first=True,
                                           norm_first=True)
        self.transformer = nn.TransformerEncoder(layer, layers, norm=nn.LayerNorm(width), enable_nested_tensor=False)
        self.head = nn.Linear(width, heads.width)
        for p in (self.cls, self.visual_position, self.segment.weight, self.position.weight):
            nn.init.normal_(p, std=0.02)

    def visual_features(self, pixels) -> list[torch.Tensor]:
        feats = []
        for b in self.backbones:
            x = normalize(pixels, b)
            if self.freeze_backbones:
                with torch.no_grad():
                    feats.append(b(x))
            else:
                feats.append(b(x))
        return feats

    def sequence(self, ids, mask, pixels):
        if ids.shape[1] > self.max_text_len:
            raise ValueError(f"text length {ids.shape[1]} exceeds model maximum {self.max_text_len}")
        n = ids.shape[0]
        seg_text = self.segment.weight[0]
        seg_img = self.segment.weight[1]
        positions = torch.arange(ids.shape[1])
        text = self.text_proj(self.text_encoder.embed(ids)) + self.position(positions) + seg_text
        cls = (self.cls + seg_text).expand(n, 1, -1)
        visual = [proj(f) + self.visual_position + seg_img for proj, f in zip(self.visual_proj, self.visual_features(pixels))]
        seq = torch.cat([cls, text, torch.stack(visual, dim=1)], dim=1)
        keep = torch.cat([torch.ones(n, 1, dtype=torch.bool), mask, torch.ones(n, len(visual), dtype=torch.bool)], dim=1)
        return seq, keep

    def forward(self, ids, mask, pixels):
        seq, keep = self.sequence(ids, mask, pixels)
        hidden = self.transformer(self.embed_dropout(self.embed_norm(seq)), src_key_padding_mask=~keep)
        return self.head(hidden[:, 0])

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {"single_flow": [p for p in self.parameters() if p.requires_grad]}


def parameter_groups(model: nn.Module) -> dict[str, list[nn.Parameter]]:
    """Disjoint learning-rate groups covering every trainable parameter."""
    groups = model.parameter_groups()
    seen: dict[int, str] = {}
    for name, params in groups.items():
        for p in params:
            if id(p) in seen:
                raise RuntimeError(f"parameter in both {seen[id(p)]!r} and {name!r}")
            seen[id(p)] = name
    orphans = [n for n, p in model.named_parameters() if p.requires_grad and id(p) not in seen]
    if orphans:
        raise RuntimeError(f"parameters without a group: {orphans}")
    return {name: params for name, params in groups.items() if params}


@dataclass
class ModelSpec:
    """Everything needed to rebuild a model before loading weights."""

    arch: str
    tasks: tuple[str, ...] = LABELS
    text_encoder: str = "toy_text"
    image_encoder: str = "toy_image"
    backbones: tuple[str, ...] = ("toy_image:a", "toy_image:b", "toy_image:c", "toy_image:d")
    hidden_dims: tuple[int, ...] = (256, 64)
    dropout: float = 0.2
    width: int = 128
    layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    sf_dropout: float = 0.1
    max_text_len: int = MAX_TEXT_LEN
    freeze_backbones: bool = True
    text_dim: int = 256
    image_dim: int = 32
    seed: int = 0
    checkpoints: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for key in ("tasks", "backbones", "hidden_dims"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for key in ("tasks", "backbones", "hidden_dims"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def build_model(spec: ModelSpec) -> nn.Module:
    torch.manual_seed(spec.seed)
    registry = EncoderRegistry(spec.checkpoints, image_dim=spec.image_dim, text_dim=spec.text_dim, seed=spec.seed)
    heads = HeadConfig(tuple(spec.tasks), tuple(spec.hidden_dims))
    text = registry.text(spec.text_encoder)
    if spec.arch == "double_tower":
        return DoubleTower(text, registry.image(spec.image_encoder), heads, dropout=spec.dropout)
    if spec.arch == "single_flow":
        # a repeated id reuses the same backbone module but gets its own projection
        backbones = {f"{i}:{b}": registry.image(b) for i, b in enumerate(spec.backbones)}
        return SingleFlow(text, backbones, heads, width=spec.width, layers=spec.layers, n_heads=spec.n_heads,
                          ff_dim=spec.ff_dim, dropout=spec.sf_dropout, max_text_len=spec.max_text_len,
                          freeze_backbones=spec.freeze_backbones)
    raise ValueError(f"unknown architecture {spec.arch!r}")


def prepare_batch(model: nn.Module, texts: Sequence[str], images: Sequence[np.ndarray]):
    ids, mask = model.text_encoder.batch_tokenize(texts)
    pixels = to_tensor(images)
    dtype = next(model.parameters()).dtype
    return ids, mask, pixels.to(dtype)


@torch.no_grad()
def predict_logits(model: nn.Module, text: str, img: np.ndarray) -> np.ndarray:
    was_training = model.training
    model.eval()
    try:
        out = model(*prepare_batch(model, [text], [img]))[0]
    finally:
        model.train(was_training)
    return out.numpy()


def double_tower_forward(model: DoubleTower, text: str, img: np.ndarray) -> np.ndarray:
    return predict_logits(model, text, img)


def single_flow_forward(model: SingleFlow, text: str, img: np.ndarray) -> np.ndarray:
    return predict_logits(model, text, img)


def save_weights(model: nn.Module, directory, spec: ModelSpec | None = None, extra: dict | None = None) -> None:
    """Write ``weights.json`` (manifest) and ``weights.bin`` (raw little-endian blobs)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(directory / "weights.bin", "wb") as fh:
        for name, tensor in model.state_dict().items():
            arr = tensor.detach().cpu().contiguous().numpy()
            blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
            entries.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(blob)})
            fh.write(blob)
            offset += len(blob)
    manifest = {
        "format": WEIGHTS_FORMAT,
        "version": WEIGHTS_VERSION,
        "spec": spec.to_dict() if spec is not None else None,
        "extra": extra or {},
        "tensors": entries,
    }
    (directory / "weights.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_weights(directory, model: nn.Module | None = None) -> nn.Module:
    directory = Path(directory)
    manifest = json.loads((directory / "weights.json").read_text())
    if manifest.get("format") != WEIGHTS_FORMAT:
        raise ValueError(f"{directory}: not a {WEIGHTS_FORMAT} container")
    if manifest.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"{directory}: unsupported weights version {manifest.get('version')}")
    if model is None:
        if manifest["spec"] is None:
            raise ValueError(f"{directory}: no model spec stored; pass a model")
        model = build_model(ModelSpec.from_dict(manifest["spec"]))
    raw = (directory / "weights.bin").read_bytes()
    state = {}
    for e in manifest["tensors"]:
        dtype = np.dtype("<" + e["dtype"]) if e["dtype"] not in ("b1", "u1", "i1") else np.dtype(e["dtype"])
        arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        state[e["name"]] = torch.from_numpy(arr.reshape(e["shape"]).copy())
    model.load_state_dict(state)
    return model
