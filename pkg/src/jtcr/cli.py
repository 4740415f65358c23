"""Batch command-line front end: analyze | train | evaluate | recommend.

Flags override config-file values, which override defaults; the effective
configuration of every run is echoed into an append-only manifest together
with input digests and artifact paths.  All artifacts are written atomically
and are byte-reproducible for a fixed seed (plots and the manifest excepted:
figures are regenerable from the CSVs, the manifest carries wall-clock
timestamps).  Exit codes: 0 success, 1 usage, 2 data error, 3 divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from jtcr import __version__, evaluation, plots
from jtcr.data import build_interactions, chronological_split, filter_min_activity, parse_checkins
from jtcr.ioutil import atomic_output, sha256_file, write_csv, write_text
from jtcr.model import load_checkpoint, save_checkpoint
from jtcr.temporal import analysis_report, regularizer_vectors
from jtcr.train import (
    DivergenceError,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    derived_seeds,
    train,
    with_seed,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

MODE_NAMES = {"joint": "joint", "phase1": "phase1_only", "novar": "no_var", "nogeo": "no_geo"}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _worker_count() -> int:
    raw = os.environ.get("JTCR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _append_manifest(out_dir, entry) -> None:
    path = Path(out_dir) / "manifest.jsonl"
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _load_filtered(args):
    ds = parse_checkins(args.input, fmt=args.format)
    ds = filter_min_activity(ds, min_count=args.min_count)
    if not ds.checkins:
        raise ValueError(f"dataset is empty after min-count filtering (min_count={args.min_count})")
    return ds


def _pipeline(args):
    """parse -> filter -> split -> training interactions, shared by train,
    evaluate, and recommend so candidate sets line up across commands."""
    ds = _load_filtered(args)
    split = chronological_split(ds)
    radius = getattr(args, "radius_km", None)
    store = build_interactions(split.train, universe=args.universe, radius_km=radius)
    return ds, split, store


def _add_common(sub, out_dir=True):
    sub.add_argument("--input", required=True, help="check-in file")
    sub.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    sub.add_argument("--min-count", type=int, default=5, help="activity filter threshold")
    sub.add_argument("--seed", type=int, default=None)  # None: config file, then 0
    if out_dir:
        sub.add_argument("--out-dir", required=True)
    sub.add_argument("--universe", choices=("all", "neighborhood"), default="all")
    sub.add_argument("--radius-km", type=float, default=None)
    sub.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jtcr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"jtcr {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("analyze", help="dataset statistics and activity tables")
    _add_common(p)
    p.add_argument("--variance-threshold", type=int, default=50,
                   help="min check-ins for the most-variant-users table")
    p.add_argument("--top-categories", type=int, default=8)

    p = subs.add_parser("train", help="fit latent factors")
    _add_common(p)
    p.add_argument("--config", help="JSON file with training settings (flags win)")
    p.add_argument("--d", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--mode", choices=tuple(MODE_NAMES))
    p.add_argument("--normalizer", choices=("pair_count", "positives", "negatives", "one"))
    p.add_argument("--neg-samples", type=int)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seeds", help="comma-separated per-run seeds (default: seed+run index)")
    p.add_argument("--timing", action="store_true",
                   help="record wall time in the trace CSV (breaks byte-reproducibility)")

    p = subs.add_parser("evaluate", help="score checkpoints on the test split")
    _add_common(p)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--k", default="5,10,20", help="comma-separated cutoffs")
    p.add_argument("--include-train-pois", action="store_true")
    p.add_argument("--per-user", action="store_true")

    p = subs.add_parser("recommend", help="top-k POIs for given users")
    _add_common(p, out_dir=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--users", required=True, help="comma-separated user ids")
    p.add_argument("--k", type=int, default=10)
    return parser


def cmd_analyze(args) -> int:
    started = time.time()
    ds = _load_filtered(args)
    report = analysis_report(
        ds, variance_threshold=args.variance_threshold, top_categories=args.top_categories
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    write_csv(out / "monthly_checkins.csv", ("month", "count"), report.monthly_totals)
    write_csv(out / "category_popularity.csv", ("month", "category", "share"),
              [(m, c, repr(s)) for m, c, s in report.category_popularity])
    write_csv(out / "variance_extremes.csv",
              ("kind", "which", "owner", "variance", "total_checkins", "month", "share"),
              [(k, w, o, repr(v), t, m, repr(s)) for k, w, o, v, t, m, s in report.variance_extremes])
    write_csv(out / "user_checkin_split.csv",
              ("user_id", "single_checkins", "multiple_checkins"), report.user_checkin_split)
    write_text(out / "correlations.json", json.dumps(report.correlations, sort_keys=True, indent=2) + "\n")
    write_text(out / "summary.json", json.dumps(report.summary, sort_keys=True, indent=2) + "\n")

    s = report.summary
    print(f"users                {s['users']}")
    print(f"pois                 {s['pois']}")
    print(f"check-ins            {s['checkins']}")
    print(f"avg POIs per user    {s['avg_pois_per_user']:.3f}")
    print(f"avg users per POI    {s['avg_users_per_poi']:.3f}")
    print(f"multiple check-ins   {s['multiple_checkin_pct']:.2f}%")
    print(f"density              {s['density']:.4f}")
    for name, rho in report.correlations.items():
        print(f"spearman {name:<36} " + (f"{rho:+.4f}" if rho is not None else "n/a"))

    artifacts = ["monthly_checkins.csv", "category_popularity.csv", "variance_extremes.csv",
                 "user_checkin_split.csv", "correlations.json", "summary.json"]
    if not args.no_plots:
        with atomic_output(out / "monthly_checkins.png") as tmp:
            plots.plot_monthly_totals(report.monthly_totals, tmp)
        with atomic_output(out / "category_popularity.png") as tmp:
            plots.plot_category_popularity(report.category_popularity, tmp)
        with atomic_output(out / "variance_extremes.png") as tmp:
            plots.plot_variance_extremes(report.variance_extremes, tmp)
        with atomic_output(out / "user_checkin_split.png") as tmp:
            plots.plot_user_checkin_split(report.user_checkin_split, tmp)
        artifacts += ["monthly_checkins.png", "category_popularity.png",
                      "variance_extremes.png", "user_checkin_split.png"]

    _append_manifest(out, {
        "command": "analyze",
        "version": __version__,
        "input": str(args.input),
        "input_sha256": sha256_file(args.input),
        "artifacts": artifacts,
        "started": started,
        "finished": time.time(),
    })
    return EXIT_OK


def _effective_config(args) -> TrainConfig:
    payload = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            payload.update(json.load(fh))
    for key in ("d", "gamma", "lam", "alpha", "epsilon"):
        value = getattr(args, key)
        if value is not None:
            payload[key] = value
    if args.max_iter is not None:
        payload["max_iter"] = args.max_iter
    if args.mode is not None:
        payload["mode"] = MODE_NAMES[args.mode]
    elif "mode" in payload:
        payload["mode"] = MODE_NAMES.get(payload["mode"], payload["mode"])
    if args.normalizer is not None:
        payload["normalizer"] = args.normalizer
    if args.neg_samples is not None:
        payload["neg_samples"] = args.neg_samples
    if args.seed is not None:
        payload["seed"] = args.seed
    payload.setdefault("seed", 0)
    return config_from_dict(payload)


def cmd_train(args) -> int:
    started = time.time()
    cfg = _effective_config(args)
    if args.runs < 1:
        raise ValueError("--runs must be >= 1")
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
        if len(seeds) != args.runs:
            raise ValueError(f"--seeds lists {len(seeds)} values for --runs {args.runs}")
    else:
        seeds = derived_seeds(cfg.seed, args.runs)

    ds, split, store = _pipeline(args)
    geo = split.train.geo_index()
    reg = regularizer_vectors(split.train, cfg.lam)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def run_one(seed):
        return train(with_seed(cfg, seed), store, geo, reg)

    workers = min(_worker_count(), len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, seeds))
    else:
        results = [run_one(seed) for seed in seeds]

    artifacts = []
    for r, (seed, (model, trace)) in enumerate(zip(seeds, results)):
        prefix = "" if len(seeds) == 1 else f"run-{r:03d}."
        ckpt_path = out / f"{prefix}checkpoint.bin"
        trace_path = out / f"{prefix}trace.csv"
        with atomic_output(ckpt_path) as tmp:
            save_checkpoint(tmp, model, ds.user_ids, ds.poi_ids, cfg.lam, seed)
        with atomic_output(trace_path) as tmp:
            trace.write_csv(tmp, include_timing=args.timing)
        artifacts += [ckpt_path.name, trace_path.name]
        if not args.no_plots and trace.rows:
            plot_path = out / f"{prefix}trace.png"
            with atomic_output(plot_path) as tmp:
                plots.plot_trace(trace, tmp)
            artifacts.append(plot_path.name)
        status = "converged" if trace.converged else "max-iter"
        theta = repr(trace.rows[-1][1]) if trace.rows else "n/a"
        print(f"seed {seed}: {trace.iterations} iterations ({status}), theta {theta}")

    _append_manifest(out, {
        "command": "train",
        "version": __version__,
        "input": str(args.input),
        "input_sha256": sha256_file(args.input),
        "config": config_to_dict(cfg),
        "seeds": seeds,
        "universe": args.universe,
        "radius_km": args.radius_km,
        "min_count": args.min_count,
        "artifacts": artifacts,
        "checkpoint_sha256": {
            name: sha256_file(out / name) for name in artifacts if name.endswith("checkpoint.bin")
        },
        "started": started,
        "finished": time.time(),
    })
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.time()
    ks = sorted({int(k) for k in str(args.k).split(",")})
    if not ks or any(k < 1 for k in ks):
        raise ValueError(f"bad cutoff list {args.k!r}")
    ds, split, store = _pipeline(args)
    checkpoints = [load_checkpoint(p) for p in args.checkpoints]
    report = evaluation.evaluate(
        checkpoints, split, store, ks=ks,
        include_train_pois=args.include_train_pois,
        checkpoint_paths=args.checkpoints,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "eval-report.json", report.to_json())
    print(report.to_table(), end="")
    artifacts = ["eval-report.json"]

    if args.per_user:
        header = ["run", "user_id"]
        for k in ks:
            header += [f"prec@{k}", f"ndcg@{k}"]
        rows = []
        user_ids = ds.user_ids
        for r, ckpt in enumerate(checkpoints):
            for row in evaluation.per_user_rows(
                ckpt.model, store, split.test, ks=ks, include_train_pois=args.include_train_pois
            ):
                out_row = [r, user_ids[row["user"]]]
                for k in ks:
                    out_row += [repr(row[f"prec@{k}"]), repr(row[f"ndcg@{k}"])]
                rows.append(out_row)
        write_csv(out / "eval-per-user.csv", header, rows)
        artifacts.append("eval-per-user.csv")

    if not args.no_plots:
        with atomic_output(out / "eval-metrics.png") as tmp:
            plots.plot_metrics(report, tmp)
        artifacts.append("eval-metrics.png")

    _append_manifest(out, {
        "command": "evaluate",
        "version": __version__,
        "input": str(args.input),
        "input_sha256": sha256_file(args.input),
        "checkpoints": [str(p) for p in args.checkpoints],
        "ks": ks,
        "include_train_pois": args.include_train_pois,
        "artifacts": artifacts,
        "started": started,
        "finished": time.time(),
    })
    return EXIT_OK


def cmd_recommend(args) -> int:
    ds, split, store = _pipeline(args)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.user_ids != ds.user_ids or ckpt.poi_ids != ds.poi_ids:
        raise ValueError(f"checkpoint {args.checkpoint}: id maps do not match the dataset")
    poi_ids = ds.poi_ids
    served = 0
    for user_id in args.users.split(","):
        user_id = user_id.strip()
        i = ds.user_index.get(user_id)
        if i is None:
            print(f"warning: unknown user {user_id!r}, skipped", file=sys.stderr)
            continue
        served += 1
        recs = evaluation.recommend(ckpt.model, i, store, args.k)
        scores = ckpt.model.u[:, i] @ ckpt.model.v
        for rank, j in enumerate(recs, start=1):
            print(f"{user_id}\t{rank}\t{poi_ids[j]}\t{float(scores[j])!r}")
    if served == 0:
        print("error: no requested user is present in the dataset", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "analyze": cmd_analyze,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "recommend": cmd_recommend,
    }
    try:
        return handlers[args.command](args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
