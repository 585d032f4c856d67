"""scikit-learn style estimators around the bag network and the linear probe."""

from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ShapeError
from .metrics import evaluate
from .mil import WeaNet, WeaNetConfig, extract_embeddings
from .nn import AdamState, Tensor, adam_step, bce_loss, class_weights, dense_forward, glorot_uniform
from .nn.layers import ParamSet

log = logging.getLogger(__name__)


def check_bags(X, feature_dim=None) -> np.ndarray:
    """Validate a (n_bags, frames, dim) feature array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ShapeError(f"expected bags of shape (n_bags, frames, dim), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain NaN or infinity")
    if feature_dim is not None and X.shape[2] != feature_dim:
        raise ShapeError(f"model was fitted on feature dim {feature_dim}, got {X.shape[2]}")
    return X


def check_targets(y, n_samples=None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise ShapeError(f"targets must be (n_samples, n_classes), got {y.shape}")
    if np.any(y < 0) or np.any(y > 1) or not np.all(np.isfinite(y)):
        raise ValueError("targets must lie in [0, 1]")
    if n_samples is not None and len(y) != n_samples:
        raise ShapeError(f"{len(y)} target rows for {n_samples} bags")
    return y


def warmup_epochs(epochs, fraction) -> int:
    """Epochs during which the attention matrix stays frozen."""
    return int(math.floor(epochs * fraction + 0.5))


class WeaNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Multi-label bag classifier trained with (weighted) BCE on soft targets.

    ``fit`` accepts fractional targets, so blended labels plug in directly.
    With ``eval_set=(X_val, Y_val)`` the epoch with the best validation mAP
    is kept. ``transform`` returns max-pooled segment embeddings.
    """

    def __init__(self, channels=(16, 32), pools=(4, 8), segment_width=3, embed_dim=64,
                 hidden_dims=(64,), pooling="attention", padding_mode="edge", epochs=8,
                 batch_size=64, learning_rate=1e-3, beta1=0.9, beta2=0.999, adam_eps=1e-8,
                 attention_warmup=0.2, class_weighting=True, positive_only_weights=False,
                 select_best=True, zero_init_head=False, random_state=0):
        self.channels = channels
        self.pools = pools
        self.segment_width = segment_width
        self.embed_dim = embed_dim
        self.hidden_dims = hidden_dims
        self.pooling = pooling
        self.padding_mode = padding_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.attention_warmup = attention_warmup
        self.class_weighting = class_weighting
        self.positive_only_weights = positive_only_weights
        self.select_best = select_best
        self.zero_init_head = zero_init_head
        self.random_state = random_state

    def _config(self, n_classes, feature_dim):
        return WeaNetConfig(
            n_classes=n_classes, feature_dim=feature_dim, channels=tuple(self.channels),
            pools=tuple(self.pools), segment_width=self.segment_width, embed_dim=self.embed_dim,
            hidden_dims=tuple(self.hidden_dims), pooling=self.pooling,
            padding_mode=self.padding_mode, zero_init_head=self.zero_init_head)

    def fit(self, X, y, eval_set=None, class_weight_labels=None, init_from=None):
        """Train from scratch, or from a copy of ``init_from``'s parameters.

        ``class_weight_labels`` sets the labels the class priors are computed
        from (defaults to ``y``).
        """
        X = check_bags(X)
        Y = check_targets(y, len(X))
        seed = 0 if self.random_state is None else int(self.random_state)
        self.model_ = WeaNet.create(self._config(Y.shape[1], X.shape[2]), seed=seed)
        self.model_.check_geometry(X.shape[1])
        if init_from is not None:
            self.model_.params.load_state_dict(init_from.params.state_dict())
        self.n_classes_ = Y.shape[1]
        self.n_features_in_ = X.shape[2]
        self.classes_ = np.arange(self.n_classes_)
        ref = Y if class_weight_labels is None else check_targets(class_weight_labels)
        self.class_weights_ = class_weights(ref) if self.class_weighting else None
        params = self.model_.params
        state = AdamState(self.learning_rate, self.beta1, self.beta2, self.adam_eps)
        rng = np.random.default_rng([seed, 1])
        frozen_until = warmup_epochs(self.epochs, self.attention_warmup) if self.pooling == "attention" else 0
        self.history_ = []
        best_score, best_state, self.best_epoch_ = -np.inf, None, None
        for epoch in range(self.epochs):
            params.set_trainable("attention", epoch >= frozen_until and self.pooling == "attention")
            order = rng.permutation(len(X))
            total = 0.0
            for start in range(0, len(X), self.batch_size):
                idx = order[start:start + self.batch_size]
                params.zero_grad()
                out = self.model_.forward(X[idx])
                loss = bce_loss(out.o, Y[idx], self.class_weights_, positive_only=self.positive_only_weights)
                loss.backward()
                adam_step(params, state)
                total += loss.item() * len(idx)
            record = {"epoch": epoch + 1, "train_loss": total / len(X)}
            if eval_set is not None:
                Xv, Yv = eval_set
                score = evaluate(self.model_.predict(check_bags(Xv)), np.asarray(Yv)).mAP
                record["val_mAP"] = score
                if self.select_best and score > best_score:
                    best_score, best_state, self.best_epoch_ = score, params.state_dict(), epoch + 1
            self.history_.append(record)
            log.debug("epoch %s %s", epoch + 1, record)
        if best_state is not None:
            params.load_state_dict(best_state)
        else:
            self.best_epoch_ = self.epochs
        # leave the model trainable everywhere once training is done
        params.set_trainable("attention", True)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_bags(X, self.n_features_in_))

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X) >= threshold).astype(np.int8)

    def decision_function(self, X):
        return self.predict_proba(X)

    def score(self, X, y, sample_weight=None):
        """Mean average precision against binary ``y``."""
        return evaluate(self.predict_proba(X), np.asarray(y)).mAP

    def transform(self, X):
        check_is_fitted(self, "model_")
        return extract_embeddings(check_bags(X, self.n_features_in_), self.model_)

    @classmethod
    def from_model(cls, model: WeaNet, **params):
        """Wrap an already trained network (e.g. one loaded from disk)."""
        cfg = model.config
        est = cls(channels=cfg.channels, pools=cfg.pools, segment_width=cfg.segment_width,
                  embed_dim=cfg.embed_dim, hidden_dims=cfg.hidden_dims, pooling=cfg.pooling,
                  padding_mode=cfg.padding_mode, zero_init_head=cfg.zero_init_head, **params)
        est.model_ = model
        est.n_classes_ = cfg.n_classes
        est.n_features_in_ = cfg.feature_dim
        est.classes_ = np.arange(cfg.n_classes)
        return est


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Logistic regression on fixed features, trained by full-batch Adam.

    ``y`` is either a 1-d array of class indices (softmax, single label) or
    a (n, C) binary matrix (independent sigmoids, multi-label).
    """

    def __init__(self, epochs=300, learning_rate=0.05, l2=1e-4, standardize=True, random_state=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.l2 = l2
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ShapeError(f"probe expects (n_samples, n_features), got {X.shape}")
        y = np.asarray(y)
        self.multilabel_ = y.ndim == 2
        if self.multilabel_:
            T = y.astype(np.float64)
        else:
            self.classes_ = np.unique(y)
            T = (y[:, None] == self.classes_[None]).astype(np.float64)
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0) if self.standardize else np.zeros(X.shape[1])
        self.scale_ = X.std(axis=0) if self.standardize else np.ones(X.shape[1])
        self.scale_[self.scale_ == 0] = 1.0
        Z = (X - self.mean_) / self.scale_
        rng = np.random.default_rng(self.random_state)
        params = ParamSet()
        W = params.add("weight", glorot_uniform(rng, (Z.shape[1], T.shape[1]), Z.shape[1], T.shape[1]))
        b = params.add("bias", np.zeros(T.shape[1]))
        state = AdamState(lr=self.learning_rate)
        Zt = Tensor(Z)
        for _ in range(self.epochs):
            params.zero_grad()
            logits = dense_forward(Zt, W, b)
            if self.multilabel_:
                loss = bce_loss(logits.sigmoid(), T)
            else:
                p = logits.softmax(axis=1).clip(1e-12, 1.0)
                loss = (p.log() * T).sum(axis=1).mean() * -1.0
            loss = loss + (W * W).sum() * self.l2
            loss.backward()
            adam_step(params, state)
        self.params_ = params
        return self

    def _logits(self, X):
        check_is_fitted(self, "params_")
        Z = (np.asarray(X, dtype=np.float64) - self.mean_) / self.scale_
        return Z @ self.params_["weight"].data + self.params_["bias"].data

    def predict_proba(self, X):
        z = self._logits(X)
        if self.multilabel_:
            return 1.0 / (1.0 + np.exp(-z))
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        p = self.predict_proba(X)
        if self.multilabel_:
            return (p >= 0.5).astype(np.int8)
        return self.classes_[np.argmax(p, axis=1)]

    def score(self, X, y, sample_weight=None):
        """Accuracy for single-label targets, mAP for multi-label."""
        if self.multilabel_:
            return evaluate(self.predict_proba(X), np.asarray(y)).mAP
        return float(np.mean(self.predict(X) == np.asarray(y)))
