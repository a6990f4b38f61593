"""Independent reference computations used by the tests.

Nothing here imports the code under test except to read weights.
"""

from fractions import Fraction
from itertools import product

import numpy as np
import torch


def f1_fraction(pred, gold) -> Fraction:
    """Exact F1 of the positive class by enumerating every cell; 0 when undefined."""
    tp = fp = fn = 0
    for p, g in zip(pred, gold):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif g and not p:
            fn += 1
    if tp == 0:
        return Fraction(0)
    return Fraction(2 * tp, 2 * tp + fp + fn)


def binary_macro_fraction(pred, gold) -> Fraction:
    inv_p = [1 - int(v) for v in pred]
    inv_g = [1 - int(v) for v in gold]
    return (f1_fraction(pred, gold) + f1_fraction(inv_p, inv_g)) / 2


def multilabel_fraction(pred, gold):
    """(macro, weighted, per-label) F1 as Fractions for (N, L) 0/1 matrices."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    per = [f1_fraction(pred[:, j].tolist(), gold[:, j].tolist()) for j in range(gold.shape[1])]
    support = [int(gold[:, j].sum()) for j in range(gold.shape[1])]
    macro = sum(per, Fraction(0)) / len(per)
    total = sum(support)
    weighted = Fraction(0) if total == 0 else sum((f * s for f, s in zip(per, support)), Fraction(0)) / total
    return macro, weighted, per


def hierarchy_ok(row) -> bool:
    return row[0] == 1 or not any(row[1:])


def all_label_vectors():
    return [tuple(v) for v in product((0, 1), repeat=5)]


def bce_mean(logits: np.ndarray, labels: np.ndarray) -> float:
    """Numerically stable mean binary cross-entropy on logits, float64."""
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))))


def finite_difference_check(loss_fn, params, step=1e-5, max_entries=None, rng=None):
    """Compare autograd with central differences on each tensor in ``params``.

    Returns the worst relative error |a - n| / max(|a|, |n|, 1e-8).
    """
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        analytic = p.grad.detach().clone().reshape(-1)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.numel())
        if max_entries is not None and len(idx) > max_entries:
            idx = rng.choice(idx, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
            numeric = (up - down) / (2 * step)
            a = analytic[i].item()
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


def double_tower_recompute(model, ids, mask, pixels) -> np.ndarray:
    """Straight-line numpy replay of the double-tower forward pass (eval mode)."""
    table = model.text_encoder.embedding.weight.detach().double().numpy()
    ids = ids.numpy()
    m = mask.numpy().astype(np.float64)
    tok = table[ids]
    pooled = (tok * m[..., None]).sum(axis=1) / np.maximum(m.sum(axis=1, keepdims=True), 1.0)

    enc = model.image_encoder
    w = enc.proj.weight.detach().double().numpy()  # (D, 3, P, P)
    patch = w.shape[-1]
    x = (pixels.double().numpy() - 0.5) / 0.5
    n, _, h, wd = x.shape
    gh, gw = h // patch, wd // patch
    feats = np.zeros((n, w.shape[0]))
    for i in range(gh):
        for j in range(gw):
            block = x[:, :, i * patch : (i + 1) * patch, j * patch : (j + 1) * patch]
            feats += np.tanh(np.einsum("nchw,dchw->nd", block, w))
    img = feats / (gh * gw) + enc.bias.detach().double().numpy()

    z = np.concatenate([pooled, img], axis=1)
    for layer in model.mlp:
        if isinstance(layer, torch.nn.Linear):
            z = z @ layer.weight.detach().double().numpy().T + layer.bias.detach().double().numpy()
        elif isinstance(layer, torch.nn.Tanh):
            z = np.tanh(z)
    head = model.head
    return z @ head.weight.detach().double().numpy().T + head.bias.detach().double().numpy()
