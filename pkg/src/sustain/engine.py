"""Sequential self-teaching: blended targets, stage training, schedules and
the saturation stopping rule.

Stage 0 trains on the observed labels. Every later stage trains a fresh
network on a convex blend of the observed labels and the cached soft
predictions of one or more earlier stages.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .errors import ConvexityError, UsageError
from .estimators import WeaNetClassifier, check_bags
from .metrics import MetricsReport, evaluate

log = logging.getLogger(__name__)

CONVEXITY_TOL = 1e-12
DEFAULT_TAU_SAT = 0.002


def check_alphas(alphas) -> np.ndarray:
    a = np.asarray(alphas, dtype=np.float64)
    if a.ndim != 1 or len(a) == 0:
        raise ConvexityError(alphas, float("nan"))
    total = float(a.sum())
    if np.any(a < 0) or abs(total - 1.0) > CONVEXITY_TOL:
        raise ConvexityError(alphas, total)
    return a


def blend_targets(observed, teacher_predictions, alphas) -> np.ndarray:
    """``alphas[0] * observed + sum_j alphas[j+1] * teacher_predictions[j]``.

    With ``alphas == [1]`` (or a zero weight on every teacher) the observed
    labels come back unchanged.
    """
    a = check_alphas(alphas)
    teacher_predictions = list(teacher_predictions)
    if len(teacher_predictions) != len(a) - 1:
        raise ValueError(f"{len(a)} weights need {len(a) - 1} teacher prediction arrays, "
                         f"got {len(teacher_predictions)}")
    y = np.asarray(observed, dtype=np.float64)
    out = a[0] * y
    for w, p in zip(a[1:], teacher_predictions):
        p = np.asarray(p, dtype=np.float64)
        if p.shape != y.shape:
            raise ValueError(f"teacher predictions {p.shape} do not match labels {y.shape}")
        if w != 0.0:
            out = out + w * p
    if a[0] == 1.0:
        return y.copy()
    return np.clip(out, 0.0, 1.0)


@dataclass
class StagePlan:
    """One stage: which earlier stages teach, with what weights.

    ``alphas[0]`` weighs the observed labels, ``alphas[j + 1]`` weighs
    ``teachers[j]``.
    """

    stage: int
    teachers: list = field(default_factory=list)
    alphas: list = field(default_factory=lambda: [1.0])
    epochs: int | None = None
    seed: int | None = None

    def __post_init__(self):
        self.teachers = [int(t) for t in self.teachers]
        self.alphas = [float(a) for a in self.alphas]
        check_alphas(self.alphas)
        if len(self.alphas) != len(self.teachers) + 1:
            raise ValueError(f"stage {self.stage}: {len(self.teachers)} teachers need "
                             f"{len(self.teachers) + 1} weights, got {len(self.alphas)}")
        bad = [t for t in self.teachers if not 0 <= t < self.stage]
        if bad:
            raise ValueError(f"stage {self.stage}: teachers must be earlier stages, got {bad}")
        if self.stage == 0 and self.alphas != [1.0]:
            raise ValueError("stage 0 trains on the observed labels only (alpha0 = 1)")

    @property
    def alpha0(self):
        return self.alphas[0]

    def to_dict(self):
        return {"stage": self.stage, "teachers": self.teachers, "alphas": self.alphas,
                "epochs": self.epochs, "seed": self.seed}


def single_teacher_schedule(alpha0s) -> list:
    """Stage t is taught by stage t-1 with weight ``1 - alpha0s[t]``; ``alpha0s[0]`` must be 1."""
    plans = [StagePlan(0, [], [1.0])]
    if not alpha0s or float(alpha0s[0]) != 1.0:
        raise ValueError("the first entry is the default teacher and must be 1.0")
    for t, a in enumerate(alpha0s[1:], start=1):
        plans.append(StagePlan(t, [t - 1], [a, 1.0 - a]))
    return plans


def fixed_alpha_schedule(alpha0, n_students) -> list:
    return single_teacher_schedule([1.0] + [alpha0] * n_students)


def window_schedule(alpha_rows) -> list:
    """Teachers are the previous ``m`` stages, oldest first.

    ``alpha_rows[t]`` lists ``[alpha0, w_oldest, ..., w_newest]`` for stage
    ``t >= 1``; early stages use as many teachers as exist.
    """
    plans = [StagePlan(0, [], [1.0])]
    for t, row in enumerate(alpha_rows, start=1):
        m = len(row) - 1
        teachers = list(range(max(0, t - m), t))
        weights = list(row[1:])[-len(teachers):] if teachers else []
        plans.append(StagePlan(t, teachers, [row[0]] + weights))
    return plans


# two teachers from stage 2 on, observed-label weight 1.0 -> 0.3 -> 0.2 -> 0.1 -> 0.05
TWO_TEACHER_ROWS = [
    [0.3, 0.7],
    [0.2, 0.3, 0.5],
    [0.1, 0.4, 0.5],
    [0.05, 0.45, 0.5],
]


def two_teacher_schedule() -> list:
    return window_schedule(TWO_TEACHER_ROWS)


class StopDecision(NamedTuple):
    stop: bool
    best_stage: int


def stopping_rule(history, tol=DEFAULT_TAU_SAT) -> StopDecision:
    """Stop once the newest metric fails to beat the best earlier one by more than ``tol``.

    ``best_stage`` is the argmax of the whole history (first on ties).
    """
    h = [float(v) for v in history]
    if not h:
        raise ValueError("stopping rule needs at least one metric value")
    best = int(np.argmax(h))
    if len(h) == 1:
        return StopDecision(False, 0)
    return StopDecision(h[-1] <= max(h[:-1]) + tol, best)


@dataclass
class StageRecord:
    plan: StagePlan
    estimator: WeaNetClassifier
    train_predictions: np.ndarray
    val: MetricsReport
    test: MetricsReport
    test_true: MetricsReport | None = None
    val_true: MetricsReport | None = None

    def row(self) -> dict:
        r = {
            "stage": self.plan.stage,
            "teachers": " ".join(f"N{t}" for t in self.plan.teachers) or "-",
            "alpha0": self.plan.alpha0,
            "teacher_alphas": " ".join(f"{a:g}" for a in self.plan.alphas[1:]) or "-",
            "best_epoch": self.estimator.best_epoch_,
            "val_mAP": self.val.mAP,
            "test_mAP": self.test.mAP,
            "test_mAUC": self.test.mAUC,
            "test_lwlrap": self.test.lwlrap,
        }
        if self.test_true is not None:
            r["test_mAP_true"] = self.test_true.mAP
            r["test_mAUC_true"] = self.test_true.mAUC
        return r


@dataclass
class Cascade:
    """Trained stages in order plus their frozen training-set predictions."""

    stages: list = field(default_factory=list)
    stopped_early: bool = False
    best_stage: int | None = None

    def __len__(self):
        return len(self.stages)

    def __getitem__(self, t) -> StageRecord:
        return self.stages[t]

    def predictions(self, t) -> np.ndarray:
        return self.stages[t].train_predictions

    def targets_for(self, plan: StagePlan, observed) -> np.ndarray:
        """Recompute the blended targets of ``plan`` from the cache."""
        missing = [t for t in plan.teachers if t >= len(self.stages)]
        if missing:
            raise KeyError(f"stage {plan.stage} refers to untrained teachers {missing}")
        return blend_targets(observed, [self.predictions(t) for t in plan.teachers], plan.alphas)

    def history(self, key="val_mAP"):
        return [s.row()[key] for s in self.stages]

    def table(self):
        return [s.row() for s in self.stages]

    def model(self, t=-1) -> WeaNetClassifier:
        return self.stages[t].estimator


def _evaluate_split(est, split, reference, threshold):
    p = est.predict_proba(split.X)
    report = evaluate(p, split.labels(reference), threshold)
    true_report = None
    if split.y_true is not None and reference != "true":
        true_report = evaluate(p, split.y_true, threshold)
    return report, true_report


def run_stage(cascade: Cascade, plan: StagePlan, dataset, estimator=None, reference="observed",
              threshold=0.5, warm_start=False) -> StageRecord:
    """Train a fresh student for ``plan`` and append it to ``cascade``."""
    if plan.stage != len(cascade):
        raise UsageError(f"cascade has {len(cascade)} stages; cannot run stage {plan.stage} next")
    targets = cascade.targets_for(plan, dataset.train.y)
    est = clone(estimator if estimator is not None else WeaNetClassifier())
    if plan.epochs is not None:
        est.set_params(epochs=plan.epochs)
    if plan.seed is not None:
        est.set_params(random_state=plan.seed)
    val = dataset.val
    est.fit(dataset.train.X, targets, eval_set=(val.X, val.labels(reference)),
            class_weight_labels=dataset.train.y,
            init_from=cascade.model(-1).model_ if warm_start and len(cascade) else None)
    preds = est.predict_proba(dataset.train.X)
    preds.setflags(write=False)
    val_report, val_true = _evaluate_split(est, val, reference, threshold)
    test_report, test_true = _evaluate_split(est, dataset.test, reference, threshold)
    record = StageRecord(plan, est, preds, val_report, test_report, test_true, val_true)
    cascade.stages.append(record)
    log.info("stage %d done: %s", plan.stage, record.row())
    return record


def run_cascade(dataset, schedule, estimator=None, stop_tol=None, reference="observed",
                threshold=0.5, warm_start=False, callback=None) -> Cascade:
    """Run ``schedule`` in order. With ``stop_tol`` set, halt as soon as the
    validation mAP saturates (see ``stopping_rule``)."""
    if not schedule:
        raise ValueError("schedule is empty")
    if schedule[0].stage != 0 or schedule[0].alphas != [1.0]:
        raise ValueError("the first plan must be the stage-0 default teacher")
    cascade = Cascade()
    for plan in schedule:
        run_stage(cascade, plan, dataset, estimator, reference, threshold, warm_start)
        if callback is not None:
            callback(cascade)
        if stop_tol is not None and len(cascade) > 1:
            decision = stopping_rule(cascade.history("val_mAP"), stop_tol)
            if decision.stop:
                cascade.stopped_early = plan is not schedule[-1]
                cascade.best_stage = decision.best_stage
                break
    if cascade.best_stage is None:
        cascade.best_stage = int(np.argmax(cascade.history("val_mAP")))
    return cascade


class AlphaSearchResult(NamedTuple):
    best_alpha: float
    rows: list
    baseline: StageRecord


def alpha_search(dataset, grid, estimator=None, cascade=None, reference="observed", n_jobs=1) -> AlphaSearchResult:
    """Train one single-teacher stage-1 student per ``alpha0`` in ``grid``;
    pick the one with the best validation mAP."""
    grid = [float(a) for a in grid]
    if not grid:
        raise ValueError("alpha grid is empty")
    if cascade is None:
        cascade = Cascade()
        run_stage(cascade, StagePlan(0), dataset, estimator, reference)
    base = cascade.stages[:1]

    def one(alpha):
        c = Cascade(stages=list(base))
        rec = run_stage(c, StagePlan(1, [0], [alpha, 1.0 - alpha]), dataset, estimator, reference)
        row = {"alpha0": alpha}
        row.update({k: v for k, v in rec.row().items() if k.endswith(("mAP", "mAUC", "lwlrap", "_true"))})
        return row

    if n_jobs == 1:
        rows = [one(a) for a in grid]
    else:
        from joblib import Parallel, delayed
        rows = Parallel(n_jobs=n_jobs)(delayed(one)(a) for a in grid)
    best = max(rows, key=lambda r: r["val_mAP"])["alpha0"]
    return AlphaSearchResult(best, rows, base[0])


class SustainClassifier(ClassifierMixin, BaseEstimator):
    """Cascade of self-taught students behind the usual fit/predict surface.

    ``alpha0s`` gives a single-teacher schedule; ``schedule`` (a list of
    ``StagePlan``) overrides it. Predictions come from the last stage, or
    from the best validation stage with ``use_best_stage=True``.
    """

    def __init__(self, base_estimator=None, alpha0s=(1.0, 0.3, 0.2, 0.1), schedule=None,
                 stop_tol=None, use_best_stage=False, warm_start=False):
        self.base_estimator = base_estimator
        self.alpha0s = alpha0s
        self.schedule = schedule
        self.stop_tol = stop_tol
        self.use_best_stage = use_best_stage
        self.warm_start = warm_start

    def fit(self, X, y, eval_set=None):
        from .data import Dataset, Split
        X = check_bags(X)
        y = np.asarray(y)
        if eval_set is None:
            raise ValueError("SustainClassifier needs eval_set=(X_val, y_val) for model selection")
        Xv, yv = eval_set
        tr = Split(X, y, None, [str(i) for i in range(len(X))])
        va = Split(check_bags(Xv), np.asarray(yv), None, [str(i) for i in range(len(Xv))])
        ds = Dataset(None, tr, va, va)
        schedule = copy.deepcopy(self.schedule) if self.schedule is not None else single_teacher_schedule(list(self.alpha0s))
        self.cascade_ = run_cascade(ds, schedule, self.base_estimator, self.stop_tol, warm_start=self.warm_start)
        self.classes_ = np.arange(y.shape[1])
        return self

    @property
    def final_estimator_(self) -> WeaNetClassifier:
        check_is_fitted(self, "cascade_")
        t = self.cascade_.best_stage if self.use_best_stage else -1
        return self.cascade_.model(t)

    def predict_proba(self, X):
        return self.final_estimator_.predict_proba(X)

    def predict(self, X, threshold=0.5):
        return self.final_estimator_.predict(X, threshold)

    def transform(self, X):
        return self.final_estimator_.transform(X)

    def score(self, X, y, sample_weight=None):
        return self.final_estimator_.score(X, y)
