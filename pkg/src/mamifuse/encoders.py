"""Text and image encoders behind one registry.

Toy encoders are small seeded modules that make every downstream code path
testable on CPU. Checkpoint-backed encoders wrap torchvision / transformers
models and need a local weights path; they are optional.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from mamifuse.errors import RegistryError

MAX_TEXT_LEN = 64

PAD, BOS, EOS, UNK = 0, 1, 2, 3
N_SPECIAL = 4
_WORD = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass
class TextEncoding:
    token_embeddings: np.ndarray  # (T, D)
    pooled: np.ndarray  # (D,)
    attention_mask: np.ndarray  # (T,) bool


@dataclass
class ImageFeature:
    backbone_id: str
    vector: np.ndarray


def _seed_for(name: str, base_seed: int) -> int:
    return (zlib.crc32(name.encode("utf-8")) ^ (base_seed * 2654435761)) & 0x7FFFFFFF


class ToyTextEncoder(nn.Module):
    """Hashed-word tokenizer plus a seeded embedding table; pooled = masked mean."""

    n_special = 2  # BOS and EOS wrap every sequence

    def __init__(self, dim: int = 64, vocab_size: int = 4096, max_len: int = MAX_TEXT_LEN, seed: int = 0):
        super().__init__()
        self.dim = dim
        self.vocab_size = vocab_size
        self.max_len = max_len
        gen = torch.Generator().manual_seed(seed)
        self.embedding = nn.Embedding(vocab_size, dim, padding_idx=PAD)
        with torch.no_grad():
            self.embedding.weight.copy_(torch.randn(vocab_size, dim, generator=gen))
            self.embedding.weight[PAD].zero_()

    def token_ids(self, text: str) -> list[int]:
        words = _WORD.findall(text.lower())
        ids = [N_SPECIAL + zlib.crc32(w.encode("utf-8")) % (self.vocab_size - N_SPECIAL) for w in words]
        ids = ids[: self.max_len - 2]
        return [BOS] + ids + [EOS]

    def batch_tokenize(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        seqs = [self.token_ids(t) for t in texts]
        width = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), width), PAD, dtype=torch.long)
        mask = torch.zeros((len(seqs), width), dtype=torch.bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s)
            mask[i, : len(s)] = True
        return ids, mask

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        return self.embedding(ids)

    def forward(self, ids, mask):
        tokens = self.embedding(ids)
        m = mask.unsqueeze(-1).to(tokens.dtype)
        pooled = (tokens * m).sum(dim=1) / m.sum(dim=1).clamp_min(1.0)
        return tokens, pooled


class ToyImageEncoder(nn.Module):
    """Strided patch projection, tanh, global average, plus an output bias.

    Expects normalized input; an all-zero input therefore yields the bias.
    """

    mean = (0.5, 0.5, 0.5)
    std = (0.5, 0.5, 0.5)

    def __init__(self, dim: int = 32, patch: int = 16, seed: int = 0):
        super().__init__()
        self.dim = dim
        gen = torch.Generator().manual_seed(seed)
        self.proj = nn.Conv2d(3, dim, kernel_size=patch, stride=patch, bias=False)
        self.bias = nn.Parameter(torch.randn(dim, generator=gen) * 0.1)
        with torch.no_grad():
            fan_in = 3 * patch * patch
            self.proj.weight.copy_(torch.randn(self.proj.weight.shape, generator=gen) / fan_in**0.5)

    def forward(self, x):
        return torch.tanh(self.proj(x)).mean(dim=(2, 3)) + self.bias


_TORCHVISION = {
    "resnet18": ("resnet18", 512),
    "resnet152": ("resnet152", 2048),
    "efficientnet_b2": ("efficientnet_b2", 1408),
    "efficientnet_b4": ("efficientnet_b4", 1792),
    "efficientnet_b7": ("efficientnet_b7", 2560),
}


class TorchvisionBackbone(nn.Module):
    mean = (0.485, 0.456, 0.406)
    std = (0.229, 0.224, 0.225)

    def __init__(self, backbone_id: str, checkpoint):
        super().__init__()
        import torchvision

        arch, self.dim = _TORCHVISION[backbone_id]
        net = getattr(torchvision.models, arch)(weights=None)
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
        if hasattr(net, "fc"):
            net.fc = nn.Identity()
        else:
            net.classifier = nn.Identity()
        self.net = net

    def forward(self, x):
        return self.net(x)


class HFTextEncoder(nn.Module):
    """Pretrained transformer text encoder loaded from a local directory."""

    n_special = 2

    def __init__(self, checkpoint, max_len: int = MAX_TEXT_LEN):
        super().__init__()
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        self.model = AutoModel.from_pretrained(checkpoint)
        self.dim = self.model.config.hidden_size
        self.max_len = max_len

    def token_ids(self, text):
        return self.tokenizer(text, truncation=True, max_length=self.max_len)["input_ids"]

    def batch_tokenize(self, texts):
        enc = self.tokenizer(list(texts), truncation=True, max_length=self.max_len, padding=True, return_tensors="pt")
        return enc["input_ids"], enc["attention_mask"].bool()

    def embed(self, ids):
        return self.model.get_input_embeddings()(ids)

    def forward(self, ids, mask):
        out = self.model(input_ids=ids, attention_mask=mask.long()).last_hidden_state
        return out, out[:, 0]


TEXT_IDS = ("toy_text", "bertweet", "bert-base-uncased")
IMAGE_IDS = ("toy_image",) + tuple(_TORCHVISION)


def is_registered_image(backbone_id: str) -> bool:
    return backbone_id in IMAGE_IDS or backbone_id.startswith("toy_image:")


def _checkpoint(backbone_id: str, checkpoints: dict) -> Path:
    path = checkpoints.get(backbone_id)
    if not path:
        raise RegistryError(f"no checkpoint configured for {backbone_id!r}")
    path = Path(path)
    if not path.exists():
        raise RegistryError(f"checkpoint for {backbone_id!r} not found: {path}")
    return path


def build_text_encoder(encoder_id: str, checkpoints: dict | None = None, dim: int = 64, seed: int = 0,
                       max_len: int = MAX_TEXT_LEN) -> nn.Module:
    checkpoints = checkpoints or {}
    if encoder_id == "toy_text":
        return ToyTextEncoder(dim=dim, max_len=max_len, seed=_seed_for(encoder_id, seed))
    if encoder_id in TEXT_IDS:
        return HFTextEncoder(_checkpoint(encoder_id, checkpoints), max_len=max_len)
    raise RegistryError(f"unknown text encoder {encoder_id!r}")


def build_image_encoder(backbone_id: str, checkpoints: dict | None = None, dim: int = 32, seed: int = 0) -> nn.Module:
    checkpoints = checkpoints or {}
    if backbone_id == "toy_image" or backbone_id.startswith("toy_image:"):
        return ToyImageEncoder(dim=dim, seed=_seed_for(backbone_id, seed))
    if backbone_id in _TORCHVISION:
        return TorchvisionBackbone(backbone_id, _checkpoint(backbone_id, checkpoints))
    raise RegistryError(f"unknown image backbone {backbone_id!r}")


def normalize(batch: torch.Tensor, encoder: nn.Module) -> torch.Tensor:
    mean = torch.tensor(encoder.mean, dtype=batch.dtype).view(1, 3, 1, 1)
    std = torch.tensor(encoder.std, dtype=batch.dtype).view(1, 3, 1, 1)
    return (batch - mean) / std


class EncoderRegistry:
    """Builds encoders on first use and hands out the same instance afterwards."""

    def __init__(self, checkpoints: dict | None = None, image_dim: int = 32, text_dim: int = 64, seed: int = 0):
        self.checkpoints = dict(checkpoints or {})
        self.image_dim = image_dim
        self.text_dim = text_dim
        self.seed = seed
        self._cache: dict[tuple[str, str], nn.Module] = {}

    def text(self, encoder_id: str) -> nn.Module:
        key = ("text", encoder_id)
        if key not in self._cache:
            self._cache[key] = build_text_encoder(encoder_id, self.checkpoints, self.text_dim, self.seed)
        return self._cache[key]

    def image(self, backbone_id: str) -> nn.Module:
        key = ("image", backbone_id)
        if key not in self._cache:
            self._cache[key] = build_image_encoder(backbone_id, self.checkpoints, self.image_dim, self.seed)
        return self._cache[key]


_default_registry = EncoderRegistry()


@torch.no_grad()
def encode_text(text: str, encoder: nn.Module | None = None, max_len: int = MAX_TEXT_LEN) -> TextEncoding:
    encoder = encoder if encoder is not None else _default_registry.text("toy_text")
    ids = encoder.token_ids(text)[:max_len]
    ids_t = torch.tensor([ids], dtype=torch.long)
    mask = torch.ones_like(ids_t, dtype=torch.bool)
    tokens, pooled = encoder(ids_t, mask)
    return TextEncoding(tokens[0].numpy(), pooled[0].numpy(), mask[0].numpy())


@torch.no_grad()
def encode_image(img: np.ndarray, backbone_id: str, registry: EncoderRegistry | None = None) -> ImageFeature:
    registry = registry if registry is not None else _default_registry
    encoder = registry.image(backbone_id)
    x = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)
    vec = encoder(normalize(x, encoder))[0].numpy()
    return ImageFeature(backbone_id, vec)


def multi_backbone_features(img: np.ndarray, backbone_ids: Sequence[str],
                            registry: EncoderRegistry | None = None) -> list[ImageFeature]:
    unknown = [b for b in backbone_ids if not is_registered_image(b)]
    if unknown:
        raise RegistryError(f"unknown image backbone(s): {unknown}")
    return [encode_image(img, b, registry) for b in backbone_ids]
