"""Symmetric label-noise model, teacher-noise algebra and Monte-Carlo checks.

``delta`` is the probability that an observed label equals the true label,
so ``delta < 0.5`` is the high-noise regime. A teacher with per-class
accuracy ``eps`` (agreement with the observed labels it was trained on)
matches the truth with probability ``eps*delta + (1-eps)*(1-delta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .metrics import per_class_accuracy

MIN_MC_SAMPLES = 1000


def _as_delta(delta, n_classes=None):
    d = np.asarray(delta, dtype=np.float64)
    if np.any(~np.isfinite(d)) or np.any(d < 0.0) or np.any(d > 1.0):
        raise ValueError(f"noise probabilities must lie in [0, 1], got {delta!r}")
    if d.ndim == 1 and n_classes is not None and d.shape[0] != n_classes:
        raise ValueError(f"per-class delta has {d.shape[0]} entries for {n_classes} classes")
    return d


@dataclass
class NoiseSpec:
    """Uniform ``delta`` or per-class ``delta_c``, plus the flip seed."""

    delta: float | list = 1.0
    seed: int = 0

    def __post_init__(self):
        d = _as_delta(self.delta)
        self.delta = float(d) if d.ndim == 0 else [float(v) for v in d]

    @property
    def is_uniform(self):
        return not isinstance(self.delta, list)

    def regime(self) -> str:
        """'high' when labels are wrong more often than right, else 'low'."""
        d = np.asarray(self.delta)
        if np.all(d < 0.5):
            return "high"
        if np.all(d >= 0.5):
            return "low"
        return "mixed"

    def to_dict(self):
        return {"delta": self.delta, "seed": self.seed}


def inject_noise(true_labels, delta, rng=None, seed=0) -> np.ndarray:
    """Keep each label with probability ``delta`` (per class if a vector), else flip it."""
    y_true = np.asarray(true_labels)
    if not np.isin(y_true, (0, 1)).all():
        raise ValueError("true labels must be binary")
    d = _as_delta(delta, y_true.shape[-1] if y_true.ndim else None)
    rng = np.random.default_rng(seed) if rng is None else rng
    keep = rng.random(y_true.shape) < d
    return np.where(keep, y_true, 1 - y_true).astype(np.int8)


def predicted_teacher_noise(eps, delta):
    """Probability that the teacher's label equals the truth."""
    eps = np.asarray(eps, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    out = eps * delta + (1.0 - eps) * (1.0 - delta)
    return float(out) if out.ndim == 0 else out


class Gain(NamedTuple):
    delta_bar: float
    alignment: float     # alpha0*delta + (1-alpha0)*delta_bar
    proof_gain: float    # alignment - delta == (1-alpha0)(1-eps)(1-2 delta)
    stated_gain: float   # (1-eps)(1-2 delta), no alpha0 factor
    improves: bool       # stated_gain > 0, i.e. delta < 1/2 and eps < 1
    strict_improves: bool  # alignment > delta; false whenever alpha0 == 1


def predicted_gain(eps, delta, alpha0) -> Gain:
    for name, v in (("eps", eps), ("delta", delta), ("alpha0", alpha0)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    db = predicted_teacher_noise(eps, delta)
    align = alpha0 * delta + (1.0 - alpha0) * db
    stated = (1.0 - eps) * (1.0 - 2.0 * delta)
    return Gain(db, align, align - delta, stated, stated > 0.0, align > delta)


@dataclass
class TeacherModel:
    """Per-class teacher accuracy ``eps`` (agreement with observed labels).

    ``mode='synthetic'`` samples hard teacher labels from the noise model;
    ``mode='network'`` records accuracies measured on a trained model.
    """

    eps: np.ndarray
    mode: str = "synthetic"

    def __post_init__(self):
        self.eps = np.atleast_1d(np.asarray(self.eps, dtype=np.float64))
        if self.mode not in ("synthetic", "network"):
            raise ValueError(f"unknown teacher mode {self.mode!r}")

    def sample_composed(self, observed, rng) -> np.ndarray:
        """Agree with each observed label with probability ``eps``."""
        observed = np.asarray(observed)
        agree = rng.random(observed.shape) < self.eps
        return np.where(agree, observed, 1 - observed).astype(np.int8)

    @staticmethod
    def sample_direct(true_labels, delta_bar, rng) -> np.ndarray:
        """Match the truth with probability ``delta_bar`` directly."""
        return inject_noise(true_labels, delta_bar, rng=rng)


class MCEstimate(NamedTuple):
    estimate: float
    stderr: float
    n: int
    low_sample: bool

    def within(self, expected, n_sigma=3.0, binomial=None) -> bool:
        """|estimate - expected| <= n_sigma standard errors.

        ``binomial`` substitutes the exact binomial error ``sqrt(p(1-p)/n)``
        evaluated at that probability.
        """
        se = self.stderr if binomial is None else math.sqrt(binomial * (1.0 - binomial) / self.n)
        return abs(self.estimate - expected) <= n_sigma * se + 1e-15


def _sample_triples(delta, eps, n, rng, prior=0.5, teacher="composed"):
    y_true = (rng.random(n) < prior).astype(np.int8)
    y_obs = inject_noise(y_true, delta, rng=rng)
    if teacher == "composed":
        p_hat = TeacherModel(eps).sample_composed(y_obs, rng)
    elif teacher == "direct":
        p_hat = TeacherModel.sample_direct(y_true, predicted_teacher_noise(eps, delta), rng)
    else:
        raise ValueError(f"unknown teacher sampler {teacher!r}")
    return y_true, y_obs, p_hat


def monte_carlo_teacher_agreement(delta, eps, n_samples=100_000, seed=0, teacher="composed") -> MCEstimate:
    """Empirical P(teacher label == true label)."""
    rng = np.random.default_rng(seed)
    y_true, _, p_hat = _sample_triples(delta, eps, n_samples, rng, teacher=teacher)
    hits = (p_hat == y_true).astype(np.float64)
    return MCEstimate(float(hits.mean()), float(hits.std() / math.sqrt(n_samples)), n_samples,
                      n_samples < MIN_MC_SAMPLES)


def monte_carlo_alignment(delta, eps, alpha0, n_samples=100_000, seed=0, teacher="composed") -> MCEstimate:
    """Average weight the blended target puts on the true label.

    Each sample contributes ``alpha0*[y == y*] + (1-alpha0)*[p_hat == y*]``;
    its expectation is ``alpha0*delta + (1-alpha0)*delta_bar``.
    """
    rng = np.random.default_rng(seed)
    y_true, y_obs, p_hat = _sample_triples(delta, eps, n_samples, rng, teacher=teacher)
    w = alpha0 * (y_obs == y_true) + (1.0 - alpha0) * (p_hat == y_true)
    return MCEstimate(float(w.mean()), float(w.std() / math.sqrt(n_samples)), n_samples,
                      n_samples < MIN_MC_SAMPLES)


def measure_teacher_accuracy(scores, true_labels, threshold=0.5) -> np.ndarray:
    """Per-class agreement between thresholded scores and ``true_labels``.

    Classes with no positive example come back as NaN (absent).
    """
    y = np.asarray(true_labels)
    acc = per_class_accuracy(scores, y, threshold).astype(np.float64)
    if y.ndim == 2:
        acc[y.sum(axis=0) == 0] = np.nan
    return acc


@dataclass
class GainReport:
    delta: float
    alpha0: float
    eps: np.ndarray
    delta_bar: np.ndarray
    alignment: np.ndarray
    proof_gain: np.ndarray
    stated_gain: np.ndarray
    improves: np.ndarray
    empirical_alignment: np.ndarray | None = None
    regime: str = "high"

    def rows(self):
        for c in range(len(self.eps)):
            yield {
                "class": c, "eps": float(self.eps[c]), "delta_bar": float(self.delta_bar[c]),
                "alignment": float(self.alignment[c]), "proof_gain": float(self.proof_gain[c]),
                "stated_gain": float(self.stated_gain[c]), "improves": bool(self.improves[c]),
                "empirical_alignment": None if self.empirical_alignment is None
                else float(self.empirical_alignment[c]),
                "regime": self.regime,
            }


def gain_report(eps, delta, alpha0, n_samples=0, seed=0) -> GainReport:
    """Predicted per-class gains for a uniform ``delta``; optionally with
    Monte-Carlo alignment estimates. Both the alpha-scaled proof quantity and
    the alpha-free stated gain are reported side by side."""
    eps = np.atleast_1d(np.asarray(eps, dtype=np.float64))
    gains = [predicted_gain(float(e), delta, alpha0) for e in eps]
    emp = None
    if n_samples:
        emp = np.array([monte_carlo_alignment(delta, float(e), alpha0, n_samples, seed + c).estimate
                        for c, e in enumerate(eps)])
    return GainReport(
        delta=float(delta), alpha0=float(alpha0), eps=eps,
        delta_bar=np.array([g.delta_bar for g in gains]),
        alignment=np.array([g.alignment for g in gains]),
        proof_gain=np.array([g.proof_gain for g in gains]),
        stated_gain=np.array([g.stated_gain for g in gains]),
        improves=np.array([g.improves for g in gains]),
        empirical_alignment=emp,
        regime=NoiseSpec(delta).regime(),
    )
