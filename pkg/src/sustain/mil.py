"""Multiple-instance head: segment scores, class-specific attention pooling,
mean/max baselines and the small convolutional bag network.

Shapes follow the convention ``S[..., c, k]``: class ``c``, segment ``k``.
All pooling functions accept a single bag (C, K) or a batch (B, C, K).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import GeometryError, ShapeError
from .nn import ParamSet, Tensor, as_tensor, bce_loss, conv1d, dense_forward, glorot_uniform, pool1d

POOLING_MODES = ("attention", "mean", "max")


class PooledPrediction(NamedTuple):
    o: Tensor  # (..., C)
    A: Tensor  # (..., C, K)


def attention_pool(S, W) -> PooledPrediction:
    """Class-specific attention over segments.

    ``A = softmax_k(W @ S)`` and ``o_c = sum_k A[c, k] * S[c, k]``. With
    ``W = 0`` every segment gets weight ``1/K`` and ``o`` is the segment mean.
    """
    S, W = as_tensor(S), as_tensor(W)
    C = S.shape[-2]
    if W.shape != (C, C):
        raise ShapeError(f"attention weights must be ({C}, {C}) for {C} classes, got {W.shape}")
    A = (W @ S).softmax(axis=-1)
    return PooledPrediction((A * S).sum(axis=-1), A)


def mean_pool(S) -> Tensor:
    return as_tensor(S).mean(axis=-1)


def max_pool(S) -> Tensor:
    return as_tensor(S).max(axis=-1)


@dataclass
class WeaNetConfig:
    """Geometry of the scaled-down bag network.

    The conv blocks (3-wide convs with padding 1, ReLU, then non-overlapping
    pooling) downsample frames by ``hop = prod(pools)``. A final conv of width
    ``segment_width`` without padding turns each window of ``segment_width``
    pooled steps into one segment embedding, so each segment covers
    ``segment_width * hop`` input frames and consecutive segments are ``hop``
    frames apart.
    """

    n_classes: int
    feature_dim: int
    channels: tuple = (16, 32)
    pools: tuple = (4, 8)
    segment_width: int = 3
    embed_dim: int = 64
    hidden_dims: tuple = (64,)
    pooling: str = "attention"
    padding_mode: str = "edge"
    pool_mode: str = "max"
    zero_init_head: bool = False

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.pools = tuple(int(p) for p in self.pools)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if len(self.channels) != len(self.pools):
            raise ValueError("channels and pools must have the same length")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.n_classes < 1 or self.feature_dim < 1:
            raise ValueError("n_classes and feature_dim must be positive")

    @property
    def hop(self) -> int:
        return int(np.prod(self.pools)) if self.pools else 1

    @property
    def receptive_field(self) -> int:
        return self.segment_width * self.hop

    def segment_count(self, frames: int) -> int:
        return (frames - self.receptive_field) // self.hop + 1

    def to_dict(self):
        d = asdict(self)
        for k in ("channels", "pools", "hidden_dims"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ForwardResult(NamedTuple):
    S: Tensor           # (B, C, K) segment probabilities
    o: Tensor           # (B, C) bag probabilities
    A: Tensor           # (B, C, K) pooling weights
    embeddings: Tensor  # (B, E, K) per-segment embeddings


@dataclass
class WeaNet:
    """Parameters plus forward pass of the bag network."""

    config: WeaNetConfig
    params: ParamSet = field(default_factory=ParamSet)

    @classmethod
    def create(cls, config: WeaNetConfig, seed: int = 0) -> "WeaNet":
        rng = np.random.default_rng(seed)
        net = cls(config)
        p = net.params
        cin = config.feature_dim
        for i, cout in enumerate(config.channels):
            p.add(f"conv{i}.kernel", glorot_uniform(rng, (cout, cin, 3), cin * 3, cout * 3))
            p.add(f"conv{i}.bias", np.zeros(cout))
            cin = cout
        w = config.segment_width
        E = config.embed_dim
        p.add("segment.kernel", glorot_uniform(rng, (E, cin, w), cin * w, E * w))
        p.add("segment.bias", np.zeros(E))
        din = E
        for i, h in enumerate(config.hidden_dims):
            p.add(f"hidden{i}.weight", glorot_uniform(rng, (din, h), din, h))
            p.add(f"hidden{i}.bias", np.zeros(h))
            din = h
        C = config.n_classes
        head = np.zeros((din, C)) if config.zero_init_head else glorot_uniform(rng, (din, C), din, C)
        p.add("head.weight", head)
        p.add("head.bias", np.zeros(C))
        # zero attention gives equal weights 1/K at initialisation
        p.add("attention", np.zeros((C, C)))
        return net

    @property
    def n_classes(self):
        return self.config.n_classes

    def check_geometry(self, frames: int):
        if self.config.segment_count(frames) < 1:
            raise GeometryError(
                f"bag has {frames} frames but at least {self.config.receptive_field} are needed "
                f"(segment receptive field {self.config.receptive_field}, hop {self.config.hop})")

    def embed(self, X) -> Tensor:
        """(B, frames, dim) features -> (B, embed_dim, K) segment embeddings."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[2] != self.config.feature_dim:
            raise ShapeError(
                f"expected features of shape (batch, frames, {self.config.feature_dim}), got {X.shape}")
        self.check_geometry(X.shape[1])
        p, cfg = self.params, self.config
        h = Tensor(X.transpose(0, 2, 1))
        for i, size in enumerate(cfg.pools):
            h = conv1d(h, p[f"conv{i}.kernel"], p[f"conv{i}.bias"], padding=1,
                       padding_mode=cfg.padding_mode).relu()
            h = pool1d(h, size, cfg.pool_mode)
        return conv1d(h, p["segment.kernel"], p["segment.bias"]).relu()

    def segment_scores(self, emb: Tensor) -> Tensor:
        p = self.params
        h = emb.transpose(0, 2, 1)  # (B, K, E)
        for i in range(len(self.config.hidden_dims)):
            h = dense_forward(h, p[f"hidden{i}.weight"], p[f"hidden{i}.bias"], "relu")
        S = dense_forward(h, p["head.weight"], p["head.bias"], "sigmoid")
        return S.transpose(0, 2, 1)  # (B, C, K)

    def pool(self, S: Tensor, mode: str | None = None) -> PooledPrediction:
        mode = mode or self.config.pooling
        K = S.shape[-1]
        if mode == "attention":
            return attention_pool(S, self.params["attention"])
        if mode == "mean":
            return PooledPrediction(mean_pool(S), Tensor(np.full(S.shape, 1.0 / K)))
        if mode == "max":
            onehot = np.zeros(S.shape)
            np.put_along_axis(onehot, np.argmax(S.data, axis=-1)[..., None], 1.0, axis=-1)
            return PooledPrediction(max_pool(S), Tensor(onehot))
        raise ValueError(f"unknown pooling mode {mode!r}")

    def forward(self, X, pooling: str | None = None) -> ForwardResult:
        emb = self.embed(X)
        S = self.segment_scores(emb)
        o, A = self.pool(S, pooling)
        return ForwardResult(S, o, A, emb)

    def predict(self, X, batch_size=256) -> np.ndarray:
        """Bag probabilities (n_bags, C) without building a training graph."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        out = [self.forward(X[i:i + batch_size]).o.data for i in range(0, len(X), batch_size)]
        return np.concatenate(out, axis=0)

    def copy(self) -> "WeaNet":
        return WeaNet(WeaNetConfig.from_dict(self.config.to_dict()), self.params.copy())


def weanet_forward(bag, model: WeaNet) -> ForwardResult:
    """Forward a single bag (anything with ``.features`` or a (frames, dim) array)."""
    feats = getattr(bag, "features", bag)
    return model.forward(np.asarray(feats)[None])


def mil_loss(model: WeaNet, X, targets, weights=None, positive_only=False) -> Tensor:
    """Weighted BCE between pooled bag predictions and (possibly soft) targets."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[None]
    if targets.shape[-1] != model.n_classes:
        raise ShapeError(f"targets have {targets.shape[-1]} classes, model has {model.n_classes}")
    return bce_loss(model.forward(X).o, targets, weights, positive_only=positive_only)


def extract_embeddings(X, model: WeaNet, batch_size=256) -> np.ndarray:
    """Segment embeddings max-pooled over segments: (n_bags, embed_dim)."""
    X = np.asarray(getattr(X, "features", X), dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    chunks = [model.embed(X[i:i + batch_size]).data.max(axis=-1) for i in range(0, len(X), batch_size)]
    return np.concatenate(chunks, axis=0)
