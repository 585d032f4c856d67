"""Command line entry point: ``sustain <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 a statistical
check did not pass.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import config_schema, load_config
from .data import SPLITS, file_digest, generate_dataset, load_dataset, load_model, save_model
from .engine import alpha_search, run_cascade
from .errors import SustainError, UsageError
from .estimators import LinearProbe, WeaNetClassifier
from .experiments import gradcheck_suite, gradient_cases, probe_embeddings, summarize_grid, verify_grid
from .svg import heatmap, line_chart

log = logging.getLogger("sustain")

EXIT_OK, EXIT_INVALID, EXIT_STAT = 0, 1, 2


class StatisticalFailure(Exception):
    pass


# ---------------------------------------------------------------- helpers
def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else f"{float(v):.10f}"
    if isinstance(v, (list, tuple)):
        return " ".join(str(_fmt(x)) for x in v)
    return v


def write_csv(path, rows, columns=None) -> str:
    columns = columns or list(rows[0]) if rows else columns or []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def print_table(rows, columns):
    widths = [max(len(c), *(len(str(_fmt(r.get(c, "")))) for r in rows)) for c in columns]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        print("  ".join(str(_fmt(r.get(c, ""))).ljust(w) for c, w in zip(columns, widths)))


def _config(args):
    overrides = {"seed": args.seed, "output": args.out}
    cfg = load_config(args.config, **overrides)
    if getattr(args, "preset", None):
        cfg.dataset.preset = args.preset
    if getattr(args, "stop_rule", None) is not None:
        cfg.metrics.stop_rule = args.stop_rule == "on"
    return cfg


def _dataset(cfg, data_dir=None):
    path = data_dir or cfg.dataset.path
    if path is not None:
        return load_dataset(path)
    return generate_dataset(cfg.dataset.spec(cfg.seed))


def _estimator(cfg):
    return WeaNetClassifier(random_state=cfg.seed, **cfg.model.estimator_params())


# ---------------------------------------------------------------- subcommands
def cmd_generate(args):
    cfg = _config(args)
    spec = cfg.dataset.spec(cfg.seed)
    out = Path(cfg.output)
    ds = generate_dataset(spec, out)
    rows = []
    for name in SPLITS:
        sp = ds.split(name)
        rows.append({"split": name, "bags": len(sp), "frames": sp.X.shape[1], "dim": sp.X.shape[2],
                     "observed_pos": int(sp.y.sum()), "true_pos": int(sp.y_true.sum()),
                     "label_agreement": float(np.mean(sp.y == sp.y_true))})
    print_table(rows, list(rows[0]))
    print(f"dataset written to {out} (sha256 {file_digest(out)[:16]})")
    return EXIT_OK


def _stage_manifest(rec, path):
    return {**rec.plan.to_dict(), "seed": rec.estimator.random_state, "best_epoch": rec.estimator.best_epoch_,
            "model": path.name, "val": rec.val.summary(), "test": rec.test.summary(),
            "test_true": rec.test_true.summary() if rec.test_true is not None else None}


def cmd_train(args):
    cfg = _config(args)
    ds = _dataset(cfg, args.data)
    plans = cfg.stage_plans()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    tol = cfg.metrics.tau_sat if cfg.metrics.stop_rule else None
    cascade = run_cascade(ds, plans, _estimator(cfg), stop_tol=tol, reference=cfg.metrics.reference,
                          threshold=cfg.metrics.threshold)
    stages = []
    for rec in cascade.stages:
        t = rec.plan.stage
        path = out / f"stage{t}.npz"
        save_model(rec.estimator.model_, path, {"stage": t, "alphas": rec.plan.alphas, "teachers": rec.plan.teachers})
        rec.val.to_csv(out / f"stage{t}_val_metrics.csv")
        rec.test.to_csv(out / f"stage{t}_test_metrics.csv")
        stages.append(_stage_manifest(rec, path))
    table = cascade.table()
    write_csv(out / "stages.csv", table)
    write_json(out / "manifest.json", {
        "seed": cfg.seed, "config": cfg.model_dump(), "stages": stages,
        "stopped_early": cascade.stopped_early, "best_stage": cascade.best_stage,
        "dataset": ds.spec.to_dict() if ds.spec is not None else {"path": args.data or cfg.dataset.path},
    })
    series = {"val mAP": cascade.history("val_mAP"), "test mAP": cascade.history("test_mAP")}
    (out / "curve.svg").write_text(line_chart(series, range(len(cascade)), "mAP by stage", "stage", "mAP"))
    print_table(table, ["stage", "teachers", "alpha0", "teacher_alphas", "val_mAP", "test_mAP"])
    print(f"best stage {cascade.best_stage}" + (" (stopped at saturation)" if cascade.stopped_early else ""))
    return EXIT_OK


def cmd_verify(args):
    cfg = _config(args)
    rows = verify_grid(n_samples=args.samples, seed=cfg.seed, teacher=args.teacher)
    summary = summarize_grid(rows)
    out = Path(cfg.output)
    write_csv(out / "verify.csv", rows)
    write_json(out / "verify_summary.json", summary)
    deltas = sorted({r["delta"] for r in rows})
    epss = sorted({r["eps"] for r in rows})
    grid = [[next(r["stated_gain"] for r in rows if r["delta"] == d and r["eps"] == e) for e in epss] for d in deltas]
    (out / "gain.svg").write_text(heatmap(grid, [f"d={d:g}" for d in deltas], [f"e={e:g}" for e in epss],
                                          "predicted gain (1-eps)(1-2 delta)"))
    print(json.dumps(summary, indent=2))
    if not summary["passed"]:
        raise StatisticalFailure("theory and simulation disagree beyond 3 standard errors")
    return EXIT_OK


def cmd_alpha_sweep(args):
    cfg = _config(args)
    ds = _dataset(cfg, args.data)
    res = alpha_search(ds, cfg.alpha_grid, _estimator(cfg), reference=cfg.metrics.reference,
                       n_jobs=max(1, args.threads))
    out = Path(cfg.output)
    write_csv(out / "alpha_sweep.csv", res.rows)
    xs = [r["alpha0"] for r in res.rows]
    (out / "alpha_sweep.svg").write_text(line_chart({"val mAP": [r["val_mAP"] for r in res.rows],
                                                     "test mAP": [r["test_mAP"] for r in res.rows]},
                                                    xs, "stage-1 mAP by alpha0", "alpha0", "mAP"))
    print_table(res.rows, ["alpha0", "val_mAP", "test_mAP"])
    print(f"best alpha0 {res.best_alpha:g}")
    return EXIT_OK


def cmd_gradcheck(args):
    if args.corrupt and args.corrupt not in {n for n, _, _ in gradient_cases()}:
        raise UsageError(f"unknown gradient case {args.corrupt!r}")
    rows, summary = gradcheck_suite(tol=args.tol, corrupt=[args.corrupt] if args.corrupt else None)
    if args.out:
        write_csv(Path(args.out) / "gradcheck.csv", rows)
    print_table(rows, ["case", "param", "rel_error", "passed"])
    print(f"max relative error {summary['max_rel_error']:.3e}")
    if not summary["passed"]:
        raise StatisticalFailure(f"gradient check failed for {summary['failed']}")
    return EXIT_OK


def _load_stage(cascade_dir, stage):
    manifest = json.loads((Path(cascade_dir) / "manifest.json").read_text())
    stages = manifest["stages"]
    if not stages:
        raise UsageError("cascade has no trained stages")
    index = {s["stage"]: s for s in stages}
    if stage not in index:
        raise UsageError(f"stage {stage} not in cascade (have {sorted(index)})")
    model, _ = load_model(Path(cascade_dir) / index[stage]["model"])
    return WeaNetClassifier.from_model(model), sorted(index)


def cmd_transfer(args):
    cfg = _config(args)
    probe_ds = load_dataset(args.probe_data) if args.probe_data else _dataset(cfg, None)
    manifest = json.loads((Path(args.cascade) / "manifest.json").read_text())
    available = [s["stage"] for s in manifest["stages"]]
    if not available:
        raise UsageError("cascade has no trained stages")
    stages = [int(s) for s in args.stages.split(",")] if args.stages else sorted({available[0], available[-1]})
    reference = "true" if probe_ds.val.y_true is not None else "observed"
    rows = []
    for t in stages:
        est, _ = _load_stage(args.cascade, t)
        if est.n_features_in_ != probe_ds.feature_dim:
            raise UsageError(f"stage {t} expects feature dim {est.n_features_in_}, probe data has {probe_ds.feature_dim}")
        score = probe_embeddings(est, probe_ds.val, probe_ds.test, reference, LinearProbe(random_state=cfg.seed))
        rows.append({"stage": t, "probe_mAP": score})
    write_csv(Path(cfg.output) / "transfer.csv", rows)
    print_table(rows, ["stage", "probe_mAP"])
    return EXIT_OK


def cmd_dump_attention(args):
    model, _ = load_model(args.model)
    ds = load_dataset(args.data)
    sp = ds.split(args.split)
    idx = sp.ids.index(args.bag) if args.bag in sp.ids else int(args.bag)
    res = model.forward(sp.X[idx][None])
    S, A = res.S.data[0], res.A.data[0] if res.A is not None else None
    K = S.shape[1]
    rows = []
    for c in range(S.shape[0]):
        for k in range(K):
            rows.append({"class": c, "segment": k, "onset_frame": k * model.config.hop, "score": float(S[c, k]),
                         "weight": float(A[c, k]) if A is not None else float("nan"), "uniform": 1.0 / K})
    text = write_csv(Path(args.out) / f"attention_{sp.ids[idx]}.csv" if args.out else None, rows)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_config_schema(args):
    print(json.dumps(config_schema(), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- parser
def build_parser():
    parser = argparse.ArgumentParser(prog="sustain", description="Sequential self-teaching on weakly labelled bags.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1, help="worker cap for parallel steps")
        if out:
            p.add_argument("--out", default=None, help="output directory (overrides config.output)")
        return p

    p = common(sub.add_parser("generate", help="write a synthetic dataset"))
    p.add_argument("--preset", choices=["standard", "audioset-like", "noisy-probe", "clean"])
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("train", help="run a cascade"))
    p.add_argument("--data", help="dataset directory (otherwise generated from the config)")
    p.add_argument("--preset", choices=["standard", "audioset-like", "noisy-probe", "clean"])
    p.add_argument("--stop-rule", choices=["on", "off"], default=None)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("verify", help="noise-model theory vs Monte Carlo"))
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--teacher", choices=["composed", "direct"], default="composed")
    p.set_defaults(func=cmd_verify)

    p = common(sub.add_parser("alpha-sweep", help="stage-1 mAP over an alpha0 grid"))
    p.add_argument("--data")
    p.add_argument("--preset", choices=["standard", "audioset-like", "noisy-probe", "clean"])
    p.set_defaults(func=cmd_alpha_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--out", default=None)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", default=None, help="perturb one case's gradient (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("transfer", help="linear probe on stage embeddings"))
    p.add_argument("--cascade", required=True, help="directory written by 'train'")
    p.add_argument("--probe-data", help="dataset directory for the probe")
    p.add_argument("--stages", help="comma separated stage indices (default: first and last)")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("dump-attention", help="segment scores and attention weights for one bag")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=list(SPLITS))
    p.add_argument("--bag", default="0", help="bag id or index")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("config-schema", help="print the config JSON schema with defaults")
    p.set_defaults(func=cmd_config_schema)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StatisticalFailure as err:
        print(f"FAILED: {err}", file=sys.stderr)
        return EXIT_STAT
    except (SustainError, ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
