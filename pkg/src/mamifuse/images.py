"""Image decoding, training augmentation and five-crop test-time averaging.

Images are float32 numpy arrays of shape (H, W, 3) with values in [0, 1].
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from mamifuse.errors import ImageDecodeError

RESIZE = 256
CROP = 224
SCALE_RANGE = (0.8, 1.0)
FLIP_P = 0.5


def load_and_resize(image_ref, target: int = RESIZE, sample_id: str | None = None) -> np.ndarray:
    try:
        with Image.open(image_ref) as im:
            im = im.convert("RGB")
            if im.size != (target, target):
                im = im.resize((target, target), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32)
    except (OSError, ValueError) as exc:
        who = sample_id if sample_id is not None else str(image_ref)
        raise ImageDecodeError(f"cannot decode image for sample {who!r}: {exc}") from exc
    return arr / 255.0


def _resize_float(img: np.ndarray, size: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).numpy().clip(0.0, 1.0)


@dataclass(frozen=True)
class AugmentParams:
    side: int
    top: int
    left: int
    hflip: bool
    vflip: bool


def sample_augment_params(rng: np.random.Generator, size: int = RESIZE) -> AugmentParams:
    scale = rng.uniform(*SCALE_RANGE)
    side = min(size, max(1, int(round(size * math.sqrt(scale)))))
    top = int(rng.integers(0, size - side + 1))
    left = int(rng.integers(0, size - side + 1))
    return AugmentParams(side, top, left, bool(rng.random() < FLIP_P), bool(rng.random() < FLIP_P))


def apply_augment(img: np.ndarray, params: AugmentParams) -> np.ndarray:
    size = img.shape[0]
    out = img[params.top : params.top + params.side, params.left : params.left + params.side]
    if params.side != size:
        out = _resize_float(out, size)
    if params.hflip:
        out = out[:, ::-1]
    if params.vflip:
        out = out[::-1]
    return np.ascontiguousarray(out, dtype=np.float32)


def train_augment(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random resized crop (area 0.8-1.0), then horizontal and vertical flips at p=0.5."""
    return apply_augment(img, sample_augment_params(rng, img.shape[0]))


def sample_rng(seed: int, sample_id: str, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(sample_id.encode("utf-8")), epoch])


def five_crop(img: np.ndarray, crop: int = CROP) -> list[np.ndarray]:
    """Corner crops then the center crop: [TL, TR, BL, BR, C]."""
    h, w = img.shape[:2]
    if crop > min(h, w) or crop < 1:
        raise ValueError(f"crop {crop} does not fit image {h}x{w}")
    top, left = (h - crop) // 2, (w - crop) // 2
    origins = [(0, 0), (0, w - crop), (h - crop, 0), (h - crop, w - crop), (top, left)]
    return [img[y : y + crop, x : x + crop] for y, x in origins]


def tta_average(preds: Sequence) -> np.ndarray:
    if len(preds) == 0:
        raise ValueError("tta_average needs at least one prediction")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in preds])
    # sort before summing so the result does not depend on argument order
    return np.sort(stacked, axis=0).sum(axis=0) / len(preds)


def to_tensor(batch: Sequence[np.ndarray]) -> torch.Tensor:
    """Stack HWC arrays into an NCHW float tensor."""
    return torch.from_numpy(np.stack(batch)).permute(0, 3, 1, 2).contiguous()
