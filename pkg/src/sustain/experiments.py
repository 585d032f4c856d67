"""Multi-seed experiment runners shared by the CLI and the acceptance tests.

Each runner returns plain dict rows (ready for CSV) plus a summary with a
``passed`` flag, so the caller decides how to report or exit.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSpec, generate_dataset
from .engine import DEFAULT_TAU_SAT, alpha_search, run_cascade, single_teacher_schedule
from .estimators import LinearProbe, WeaNetClassifier
from .metrics import evaluate
from .mil import WeaNet, WeaNetConfig, attention_pool, max_pool, mean_pool, mil_loss
from .nn import (ParamSet, Tensor, analytic_gradient, bce_loss, conv1d, dense_forward,
                 finite_diff_gradient, pool1d, relative_error)
from .noise import monte_carlo_alignment, monte_carlo_teacher_agreement, predicted_gain

log = logging.getLogger(__name__)

# Geometry used by the benchmarks. With 128-frame bags the default pools
# (4, 8) leave only two segments per bag, so the benchmarks use a hop of 8.
BENCHMARK_MODEL = dict(pools=(2, 4), epochs=8, learning_rate=3e-3)
BENCHMARK_ALPHA0S = (1.0, 0.3, 0.2, 0.1)
DELTA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
EPS_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
ALPHA_GRID = (0.0, 0.3, 0.7, 1.0)


def benchmark_estimator(**overrides) -> WeaNetClassifier:
    params = dict(BENCHMARK_MODEL)
    params.update(overrides)
    return WeaNetClassifier(**params)


def _median(values):
    return float(np.median(np.asarray(values, dtype=np.float64)))


def curve_shape_ok(curve, tol=DEFAULT_TAU_SAT) -> bool:
    """Non-decreasing up to the maximum, then never more than ``tol`` below it."""
    c = np.asarray(curve, dtype=np.float64)
    top = int(np.argmax(c))
    rising = bool(np.all(np.diff(c[:top + 1]) >= 0))
    return rising and bool(np.all(c[top:] >= c[top] - tol))


@dataclass
class SeedSweep:
    """Per-seed cascade tables and the median metric-vs-stage curve."""

    preset: str
    seeds: list
    tables: list = field(default_factory=list)
    seconds: float = 0.0

    def curve(self, key="test_mAP"):
        n = min(len(t) for t in self.tables)
        return [_median([t[s][key] for t in self.tables]) for s in range(n)]

    def per_seed(self, stage, key="test_mAP"):
        return [t[stage][key] for t in self.tables]

    def rows(self):
        out = []
        for seed, table in zip(self.seeds, self.tables):
            for r in table:
                out.append({"seed": seed, **r})
        return out


def run_seeds(preset="standard", seeds=range(5), alpha0s=BENCHMARK_ALPHA0S, estimator=None,
              stop_tol=None, dataset_overrides=None, callback=None) -> SeedSweep:
    """Generate one dataset per seed and run the same single-teacher cascade on each."""
    sweep = SeedSweep(preset, list(seeds))
    estimator = estimator if estimator is not None else benchmark_estimator()
    start = time.perf_counter()
    for seed in sweep.seeds:
        ds = generate_dataset(DatasetSpec.preset(preset, seed=seed, **(dataset_overrides or {})))
        est = estimator.set_params(random_state=seed)
        cascade = run_cascade(ds, single_teacher_schedule(list(alpha0s)), est, stop_tol)
        sweep.tables.append(cascade.table())
        log.info("seed %s: %s", seed, [round(r["test_mAP"], 4) for r in sweep.tables[-1]])
        if callback is not None:
            callback(seed, cascade)
    sweep.seconds = time.perf_counter() - start
    return sweep


def high_noise_improvement(seeds=range(5), min_gain=0.02, **kw):
    """Stage-3 vs stage-0 test mAP on the delta = 0.3 benchmark."""
    sweep = run_seeds("standard", seeds, **kw)
    curve = sweep.curve()
    gain = curve[-1] - curve[0]
    summary = {
        "median_curve": curve,
        "median_curve_true": sweep.curve("test_mAP_true"),
        "median_gain": gain,
        "shape_ok": curve_shape_ok(curve),
        "seconds": sweep.seconds,
    }
    summary["passed"] = gain >= min_gain and summary["shape_ok"] and sweep.seconds < 900
    return sweep, summary


def clean_regime_neutrality(seeds=range(5), stop_tol=DEFAULT_TAU_SAT, **kw):
    """delta = 0.95: the first student should not move mAP beyond seed noise."""
    stopped_at = []

    def note(seed, cascade):
        stopped_at.append(len(cascade) - 1)

    sweep = run_seeds("clean", seeds, alpha0s=(1.0, 0.3, 0.2, 0.1), stop_tol=stop_tol, callback=note, **kw)
    s0, s1 = sweep.per_seed(0), sweep.per_seed(1)
    diff = abs(_median(s1) - _median(s0))
    spread = float(np.std(s0, ddof=1))
    summary = {"median_stage0": _median(s0), "median_stage1": _median(s1), "abs_diff": diff,
               "cross_seed_std": spread, "last_stage_trained": stopped_at, "seconds": sweep.seconds}
    summary["passed"] = diff <= spread and max(stopped_at) <= 2
    return sweep, summary


def alpha_sweep(seeds=range(5), grid=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0), preset="standard",
                estimator=None, dataset_overrides=None):
    """Stage-1 test mAP as a function of alpha0, median over seeds."""
    estimator = estimator if estimator is not None else benchmark_estimator()
    rows = []
    start = time.perf_counter()
    for seed in seeds:
        ds = generate_dataset(DatasetSpec.preset(preset, seed=seed, **(dataset_overrides or {})))
        res = alpha_search(ds, grid, estimator.set_params(random_state=seed))
        rows.extend({"seed": seed, **r} for r in res.rows)
    medians = {a: _median([r["test_mAP"] for r in rows if r["alpha0"] == a]) for a in grid}
    interior = {a: m for a, m in medians.items() if 0.0 < a < 1.0}
    best = max(interior, key=interior.get)
    summary = {"median_by_alpha": medians, "best_interior_alpha": best,
               "seconds": time.perf_counter() - start}
    summary["passed"] = medians[best] > medians.get(0.0, -np.inf) and medians[best] > medians.get(1.0, -np.inf)
    return rows, summary


def probe_embeddings(source, probe_split, test_split, reference="true", probe=None):
    """Fit a linear probe on ``source`` embeddings of one split, score it on another."""
    probe = LinearProbe() if probe is None else probe
    y_fit = probe_split.labels(reference)
    y_eval = test_split.labels(reference)
    probe.fit(source.transform(probe_split.X), y_fit)
    return evaluate(probe.predict_proba(source.transform(test_split.X)), y_eval).mAP


def transfer_direction(seeds=range(5), alpha0s=BENCHMARK_ALPHA0S, estimator=None):
    """Probe mAP from stage-0 vs final-stage embeddings on the noisy-probe preset.

    The cascade learns from the noisy training split; the probe is fitted on
    the validation split and scored on the test split, both with true labels.
    """
    estimator = estimator if estimator is not None else benchmark_estimator()
    rows = []
    start = time.perf_counter()
    for seed in seeds:
        ds = generate_dataset(DatasetSpec.preset("noisy-probe", seed=seed))
        cascade = run_cascade(ds, single_teacher_schedule(list(alpha0s)), estimator.set_params(random_state=seed))
        for t in (0, len(cascade) - 1):
            score = probe_embeddings(cascade.model(t), ds.val, ds.test, probe=LinearProbe(random_state=seed))
            rows.append({"seed": seed, "stage": t, "probe_mAP": score})
    last = max(r["stage"] for r in rows)
    first = _median([r["probe_mAP"] for r in rows if r["stage"] == 0])
    final = _median([r["probe_mAP"] for r in rows if r["stage"] == last])
    summary = {"median_stage0": first, "median_final": final, "seconds": time.perf_counter() - start}
    summary["passed"] = final >= first
    return rows, summary


# ---------------------------------------------------------------- noise model grid
def verify_grid(deltas=DELTA_GRID, epss=EPS_GRID, alphas=ALPHA_GRID, n_samples=100_000, seed=0,
                teacher="composed", n_sigma=3.0):
    """Compare Monte-Carlo teacher agreement and target alignment with their
    closed forms on every (delta, eps, alpha0) cell."""
    rows = []
    cell = 0
    for d in deltas:
        for e in epss:
            agree = monte_carlo_teacher_agreement(d, e, n_samples, seed=seed + cell, teacher=teacher)
            for a in alphas:
                g = predicted_gain(e, d, a)
                mc = monte_carlo_alignment(d, e, a, n_samples, seed=seed + 7919 * (cell + 1), teacher=teacher)
                rows.append({
                    "delta": d, "eps": e, "alpha0": a,
                    "delta_bar": g.delta_bar, "mc_agreement": agree.estimate,
                    "agreement_ok": agree.within(g.delta_bar, n_sigma, binomial=g.delta_bar),
                    "alignment": g.alignment, "mc_alignment": mc.estimate, "mc_stderr": mc.stderr,
                    "alignment_ok": mc.within(g.alignment, n_sigma),
                    "proof_gain": g.proof_gain, "stated_gain": g.stated_gain, "improves": g.improves,
                })
            cell += 1
    return rows


def summarize_grid(rows, min_pass=0.99):
    cells = {(r["delta"], r["eps"]): r["agreement_ok"] for r in rows}
    agree_rate = float(np.mean(list(cells.values())))
    align_rate = float(np.mean([r["alignment_ok"] for r in rows]))
    flag_ok = all(r["improves"] == (r["delta"] < 0.5 and r["eps"] < 1.0) for r in rows)
    return {"agreement_pass_rate": agree_rate, "alignment_pass_rate": align_rate, "flag_region_ok": flag_ok,
            "passed": agree_rate >= min_pass and align_rate >= min_pass and flag_ok}


# ---------------------------------------------------------------- gradient checks
def _case_params(rng, **shapes):
    ps = ParamSet()
    for name, shape in shapes.items():
        ps.add(name, rng.normal(size=shape))
    return ps


def gradient_cases(seed=0):
    """(name, loss_fn, params) triples covering every layer type and the full network."""
    rng = np.random.default_rng(seed)
    cases = []
    x = rng.normal(size=(4, 5))
    y = rng.uniform(size=(4, 3))
    for act in ("linear", "relu", "sigmoid"):
        ps = _case_params(rng, weight=(5, 3), bias=(3,))
        cases.append((f"dense-{act}", lambda ps=ps, act=act: _dense_loss(x, y, ps, act), ps))
    xs = rng.normal(size=(2, 3, 12))
    for mode, stride in (("zeros", 1), ("edge", 1), ("zeros", 2)):
        ps = _case_params(rng, kernel=(4, 3, 3), bias=(4,), x=(2, 3, 12))
        ps["x"].data = xs.copy()
        cases.append((f"conv1d-{mode}-s{stride}",
                      lambda ps=ps, mode=mode, stride=stride: (conv1d(ps["x"], ps["kernel"], ps["bias"], stride, 1, mode)
                                                               .sigmoid() * rng_weights(4)).sum(), ps))
    for mode in ("max", "avg"):
        ps = _case_params(rng, x=(2, 3, 12))
        cases.append((f"pool1d-{mode}", lambda ps=ps, mode=mode: _square_sum(pool1d(ps["x"], 3, mode)), ps))
    ps = _case_params(rng, logits=(4, 3))
    w = np.array([1.0, 2.0, 3.5])
    cases.append(("bce-weighted", lambda ps=ps: bce_loss(ps["logits"].sigmoid(), y, w), ps))
    ps = _case_params(rng, S=(2, 3, 5), W=(3, 3))
    ps["S"].data = rng.uniform(0.05, 0.95, size=(2, 3, 5))
    cases.append(("attention-pool", lambda ps=ps: bce_loss(attention_pool(ps["S"], ps["W"]).o, y[:2]), ps))
    ps = _case_params(rng, S=(2, 3, 5))
    ps["S"].data = rng.uniform(0.05, 0.95, size=(2, 3, 5))
    cases.append(("mean-pool", lambda ps=ps: bce_loss(mean_pool(ps["S"]), y[:2]), ps))
    cases.append(("max-pool", lambda ps=ps: bce_loss(max_pool(ps["S"]), y[:2]), ps))
    X = rng.normal(size=(2, 16, 4))
    for pooling in ("attention", "mean", "max"):
        cfg = WeaNetConfig(n_classes=3, feature_dim=4, channels=(3, 4), pools=(2, 2), segment_width=2,
                           embed_dim=5, hidden_dims=(4,), pooling=pooling)
        net = WeaNet.create(cfg, seed)
        net.params["attention"].data = rng.normal(size=(3, 3))
        cases.append((f"network-{pooling}",
                      lambda net=net: mil_loss(net, X, y[:2], weights=w), net.params))
    return cases


def _square_sum(t):
    return (t * t).sum()


def _dense_loss(x, y, ps, act):
    out = dense_forward(x, ps["weight"], ps["bias"], act)
    return bce_loss(out, y) if act == "sigmoid" else _square_sum(out) * (1.0 / out.data.size)


def rng_weights(n):
    # fixed, non-uniform readout so every output channel matters differently
    return Tensor(np.linspace(0.5, 1.5, n)[None, :, None])


def gradcheck_suite(tol=1e-4, h=1e-5, floor=1e-6, corrupt=None, seed=0):
    """Run every gradient case. ``corrupt`` names cases whose analytic gradient
    is perturbed by 10% before comparison (negative control)."""
    rows = []
    corrupt = set(corrupt or ())
    start = time.perf_counter()
    for name, fn, params in gradient_cases(seed):
        analytic = analytic_gradient(fn, params)
        numeric = finite_diff_gradient(fn, params, h)
        if name in corrupt:
            analytic = {k: g * 1.1 + 1e-3 for k, g in analytic.items()}
        for pname in analytic:
            if not params.is_trainable(pname):
                continue
            err = relative_error(analytic[pname], numeric[pname], floor)
            rows.append({"case": name, "param": pname, "rel_error": err, "passed": err < tol})
    summary = {"max_rel_error": max(r["rel_error"] for r in rows), "seconds": time.perf_counter() - start,
               "failed": sorted({r["case"] for r in rows if not r["passed"]})}
    summary["passed"] = not summary["failed"]
    return rows, summary


def attention_identity(n_instances=1000, max_classes=16, max_segments=64, seed=0):
    """W = 0 attention vs mean pooling, plus row sums, on random instances."""
    rng = np.random.default_rng(seed)
    worst_mean, worst_rows = 0.0, 0.0
    for _ in range(n_instances):
        C = int(rng.integers(1, max_classes + 1))
        K = int(rng.integers(1, max_segments + 1))
        S = rng.uniform(size=(C, K))
        o, A = attention_pool(S, np.zeros((C, C)))
        worst_mean = max(worst_mean, float(np.max(np.abs(o.data - mean_pool(S).data))))
        _, A2 = attention_pool(S, rng.normal(scale=5.0, size=(C, C)))
        worst_rows = max(worst_rows, float(np.max(np.abs(A.data.sum(-1) - 1))),
                         float(np.max(np.abs(A2.data.sum(-1) - 1))))
    return {"max_mean_gap": worst_mean, "max_rowsum_gap": worst_rows,
            "passed": worst_mean <= 1e-12 and worst_rows <= 1e-12}


__all__ = [
    "ALPHA_GRID", "BENCHMARK_ALPHA0S", "BENCHMARK_MODEL", "DELTA_GRID", "EPS_GRID", "SeedSweep",
    "alpha_sweep", "attention_identity", "benchmark_estimator", "clean_regime_neutrality",
    "curve_shape_ok", "gradcheck_suite", "gradient_cases", "high_noise_improvement",
    "probe_embeddings", "run_seeds", "summarize_grid", "transfer_direction", "verify_grid",
]
