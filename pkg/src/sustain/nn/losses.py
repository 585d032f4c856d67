"""Binary cross-entropy with optional per-class weights."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor

EPS_CLIP = 1e-7


def bce_elementwise(p, y, eps=EPS_CLIP):
    """Plain numpy ``-y log p - (1-y) log(1-p)`` with ``p`` clipped into [eps, 1-eps]."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    return -y * np.log(p) - (1.0 - y) * np.log1p(-p)


def class_weights(labels, min_prior=None):
    """Per-class weights ``1 + log2(1 / prior)``.

    ``labels`` is an (n_samples, n_classes) array; fractional targets are
    fine since the prior is just the column mean. Classes with no positives
    get the prior ``min_prior`` (default ``1 / n_samples``).
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2:
        raise ShapeError(f"class_weights expects (samples, classes), got {labels.shape}")
    prior = labels.mean(axis=0)
    floor = (1.0 / labels.shape[0]) if min_prior is None else min_prior
    prior = np.clip(prior, floor, 1.0)
    return 1.0 + np.log2(1.0 / prior)


def bce_loss(p, y, weights=None, eps=EPS_CLIP, positive_only=False) -> Tensor:
    """Mean binary cross-entropy over classes and batch.

    ``y`` may hold fractional targets in [0, 1]. ``weights`` (length C)
    scales the whole per-class term by default; with ``positive_only`` only
    the ``-y log p`` part is scaled.
    """
    p = as_tensor(p)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"bce_loss: prediction shape {p.shape} != target shape {y.shape}")
    pc = p.clip(eps, 1.0 - eps)
    pos = pc.log() * (-y)
    neg = (1.0 - pc).log() * (-(1.0 - y))
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (p.shape[-1],):
            raise ShapeError(f"bce_loss: weights shape {w.shape} does not match {p.shape[-1]} classes")
        if positive_only:
            pos = pos * w
        else:
            pos, neg = pos * w, neg * w
    return (pos + neg).mean()
