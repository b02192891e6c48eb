"""Pipeline driver: generate -> mask -> train -> eval -> report.

Every subcommand is deterministic from its seeds; re-running a command with
the same configuration reproduces its outputs byte for byte. Failures exit
nonzero with a single-line `error: <category>: <message>`.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import run_baseline
from .channel import MOBILITY_LEVELS, SimConfig, simulate_route, route_seed
from .dataset import Dataset, build_manifest, load_dataset, write_dataset, write_route_csv
from .estimator import RatePredictor
from .metrics import error_cdf, pool_mse, reduction_vs_baseline, squared_errors_mbps2, timeseries_rows, UNITS
from .ratemap import run_bandit_masking

_MASK_STREAM = 0xB17


class PipelineError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise PipelineError("config-invalid", f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise PipelineError("config-invalid", f"config file is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise PipelineError("config-invalid", "config file must hold a JSON object")
    return cfg


def _resolve(args: argparse.Namespace, cfg: dict, key: str, default):
    cli_val = getattr(args, key)
    if cli_val is not None:
        return cli_val
    return cfg.get(key, default)


def _require_dataset(path: str) -> Dataset:
    try:
        return load_dataset(Path(path))
    except FileNotFoundError as e:
        raise PipelineError("dataset-missing", str(e))
    except ValueError as e:
        raise PipelineError("dataset-invalid", str(e))


def cmd_generate(args: argparse.Namespace) -> None:
    cfg = _load_config_file(args.config)
    seed = int(_resolve(args, cfg, "seed", 0))
    mobility = _resolve(args, cfg, "mobility", "medium")
    n_routes = int(_resolve(args, cfg, "routes", 20))
    steps = int(_resolve(args, cfg, "steps", 1200))
    if mobility not in MOBILITY_LEVELS:
        raise PipelineError("config-invalid", f"unknown mobility level {mobility!r}")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise PipelineError("output-exists",
                            f"{out} is not empty; pass --force to overwrite")

    sim = SimConfig(steps_per_route=steps)
    level = MOBILITY_LEVELS[mobility]
    routes = [simulate_route(sim, level, route_seed(seed, i), route_index=i)
              for i in range(n_routes)]
    manifest = build_manifest(seed, mobility, routes, sim.links, steps)
    write_dataset(out, manifest, routes)
    print(f"wrote {n_routes} routes x {steps} steps to {out}")


def cmd_mask(args: argparse.Namespace) -> None:
    cfg = _load_config_file(args.config)
    epsilon = float(_resolve(args, cfg, "epsilon", 0.2))
    eta = float(_resolve(args, cfg, "eta", 0.1))
    k = int(_resolve(args, cfg, "subset_size", 1))
    noise = float(_resolve(args, cfg, "noise_std", 0.0))
    seed = int(_resolve(args, cfg, "seed", 0))

    ds = _require_dataset(args.dataset)
    for trace in ds.routes:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([seed, _MASK_STREAM, trace.route_index])))
        trace.mask, trace.obs_snr_db = run_bandit_masking(
            trace.snr_db, ds.links, epsilon=epsilon, eta=eta, k=k,
            noise_std_db=noise, rng=rng)
        write_route_csv(ds.path / f"route_{trace.route_index:04d}.csv", trace)
    ds.manifest["bandit"] = {"epsilon": epsilon, "eta": eta, "k": k,
                             "noise_std_db": noise, "seed": seed}
    with (ds.path / "manifest.json").open("w") as f:
        json.dump(ds.manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"masked {len(ds.routes)} routes (epsilon={epsilon}, eta={eta}, k={k})")


def cmd_train(args: argparse.Namespace) -> None:
    cfg = _load_config_file(args.config)
    ds = _require_dataset(args.dataset)
    if not ds.masked:
        raise PipelineError("dataset-unmasked",
                            f"{ds.path} has no masks; run `ratetrack mask` first")
    predictor = RatePredictor(
        window=int(_resolve(args, cfg, "window", 20)),
        embed_dim=int(_resolve(args, cfg, "embed_dim", 64)),
        n_heads=int(_resolve(args, cfg, "heads", 4)),
        ffn_dim=int(_resolve(args, cfg, "ffn_dim", 128)),
        head_hidden=int(_resolve(args, cfg, "head_hidden", 64)),
        dropout=float(_resolve(args, cfg, "dropout", 0.2)),
        learning_rate=float(_resolve(args, cfg, "learning_rate", 1e-3)),
        batch_size=int(_resolve(args, cfg, "batch_size", 128)),
        epochs=int(_resolve(args, cfg, "epochs", 200)),
        stride=int(_resolve(args, cfg, "stride", 1)),
        seed=int(_resolve(args, cfg, "seed", 0)),
    )
    train_routes = ds.routes_for("train")
    val_routes = ds.routes_for("val")
    if not train_routes:
        raise PipelineError("config-invalid", "train split is empty")
    predictor.fit(train_routes, links=ds.links, val_routes=val_routes)

    model_path = Path(args.model_out)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    predictor.save(model_path)
    log_path = Path(args.log_out) if args.log_out else model_path.with_name("training_log.csv")
    with log_path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for row in predictor.history_:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_loss"])])
    print(f"trained {predictor.epochs} epochs; model -> {model_path}, log -> {log_path}")


def cmd_eval(args: argparse.Namespace) -> None:
    ds = _require_dataset(args.dataset)
    if not ds.masked:
        raise PipelineError("dataset-unmasked", f"{ds.path} has no masks")
    model_path = Path(args.model)
    if not model_path.exists():
        raise PipelineError("model-missing", f"model file not found: {model_path}")
    predictor = RatePredictor()
    try:
        predictor.load(model_path, ds.links)
    except ValueError as e:
        raise PipelineError("model-mismatch", str(e))
    test_routes = ds.routes_for("test")
    if not test_routes:
        raise PipelineError("config-invalid", "test split is empty")
    window = predictor.window
    methods = ["model"] + list(args.baselines)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sq_pool: dict[str, list[np.ndarray]] = {m: [] for m in methods}
    for trace in test_routes:
        preds = {"model": predictor.predict(trace)}
        for b in args.baselines:
            preds[b] = run_baseline(trace, b, window)
        truths = trace.rate_bps[window:]
        for m in methods:
            sq_pool[m].append(squared_errors_mbps2(preds[m], truths))
        header, rows = timeseries_rows(trace, preds, window)
        with (out / f"timeseries_route_{trace.route_index:04d}.csv").open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for row in rows:
                w.writerow([row[0]] + [repr(float(v)) if isinstance(v, float) else v
                                       for v in row[1:]])

    reports = {}
    for m in methods:
        per_link, overall = pool_mse(sq_pool[m])
        reports[m] = {"per_link_mse": [float(v) for v in per_link],
                      "overall_mse": overall}
    reductions = {}
    for b in args.baselines:
        reductions[b] = {
            "per_link_percent": reduction_vs_baseline(
                reports["model"]["per_link_mse"], reports[b]["per_link_mse"]),
            "overall_percent": reduction_vs_baseline(
                reports["model"]["overall_mse"], reports[b]["overall_mse"]),
        }
    doc = {
        "units": UNITS,
        "window": window,
        "methods": reports,
        "reductions_vs_baseline": reductions,
        "metadata": {
            "model_id": _file_digest(model_path),
            "dataset_id": _file_digest(ds.path / "manifest.json"),
            "mobility": ds.manifest["mobility"],
            "test_routes": [t.route_index for t in test_routes],
        },
    }
    with (out / "metrics.json").open("w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"evaluated {len(test_routes)} test routes -> {out}")


def _read_eval_series(eval_dir: Path) -> tuple[dict, dict[str, list[np.ndarray]]]:
    metrics_path = eval_dir / "metrics.json"
    if not metrics_path.exists():
        raise PipelineError("eval-missing", f"no metrics.json under {eval_dir}")
    metrics = json.loads(metrics_path.read_text())
    methods = sorted(metrics["methods"])
    sq: dict[str, list[np.ndarray]] = {m: [] for m in methods}
    csvs = sorted(eval_dir.glob("timeseries_route_*.csv"))
    if not csvs:
        raise PipelineError("eval-missing", f"no time-series CSVs under {eval_dir}")
    for path in csvs:
        with path.open(newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            cols = {m: [i for i, h in enumerate(header) if h.startswith(f"sqerr_{m}_")]
                    for m in methods}
            rows = list(reader)
        for m in methods:
            sq[m].append(np.array([[float(r[i]) for i in cols[m]] for r in rows]))
    return metrics, sq


def cmd_report(args: argparse.Namespace) -> None:
    eval_dir = Path(args.eval_dir)
    metrics, sq = _read_eval_series(eval_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with (out / "cdf.csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "sqerr_mbps2", "cum_prob"])
        for m in sorted(sq):
            values, probs = error_cdf(np.concatenate(sq[m], axis=0))
            for v, p in zip(values, probs):
                w.writerow([m, repr(float(v)), repr(float(p))])

    first_ts = sorted(eval_dir.glob("timeseries_route_*.csv"))[0]
    (out / "timeseries.csv").write_bytes(first_ts.read_bytes())

    methods = {}
    for m in sorted(sq):
        per_link, overall = pool_mse(sq[m])
        methods[m] = {"per_link_mse": [float(v) for v in per_link], "overall_mse": overall}
    reductions = {}
    for b, entry in metrics.get("reductions_vs_baseline", {}).items():
        reductions[b] = {
            "per_link_percent": reduction_vs_baseline(
                methods["model"]["per_link_mse"], methods[b]["per_link_mse"]),
            "overall_percent": reduction_vs_baseline(
                methods["model"]["overall_mse"], methods[b]["overall_mse"]),
        }
    summary = {"units": metrics["units"], "methods": methods,
               "reductions_vs_baseline": reductions,
               "metadata": metrics["metadata"]}
    with (out / "summary.json").open("w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"report -> {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratetrack",
        description="Multi-band rate tracking: simulate, mask, train, evaluate, report.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate ground-truth routes")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--mobility", choices=sorted(MOBILITY_LEVELS), default=None)
    g.add_argument("--routes", type=int, default=None)
    g.add_argument("--steps", type=int, default=None)
    g.add_argument("--force", action="store_true")
    g.add_argument("--config", default=None)
    g.set_defaults(func=cmd_generate)

    mk = sub.add_parser("mask", help="run the measurement bandit over a dataset")
    mk.add_argument("--dataset", required=True)
    mk.add_argument("--epsilon", type=float, default=None)
    mk.add_argument("--eta", type=float, default=None)
    mk.add_argument("--subset-size", dest="subset_size", type=int, default=None)
    mk.add_argument("--noise-std", dest="noise_std", type=float, default=None)
    mk.add_argument("--seed", type=int, default=None)
    mk.add_argument("--config", default=None)
    mk.set_defaults(func=cmd_mask)

    tr = sub.add_parser("train", help="train the rate predictor")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--model-out", dest="model_out", required=True)
    tr.add_argument("--log-out", dest="log_out", default=None)
    tr.add_argument("--window", type=int, default=None)
    tr.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    tr.add_argument("--heads", type=int, default=None)
    tr.add_argument("--ffn-dim", dest="ffn_dim", type=int, default=None)
    tr.add_argument("--head-hidden", dest="head_hidden", type=int, default=None)
    tr.add_argument("--dropout", type=float, default=None)
    tr.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    tr.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    tr.add_argument("--epochs", type=int, default=None)
    tr.add_argument("--stride", type=int, default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--config", default=None)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate model and baselines on the test split")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--model", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--baselines", nargs="*", default=["b1", "b2"],
                    choices=["b1", "b2"])
    ev.set_defaults(func=cmd_eval)

    rp = sub.add_parser("report", help="emit plot-ready CDF/time-series/summary files")
    rp.add_argument("--eval", dest="eval_dir", required=True)
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except PipelineError as e:
        print(f"error: {e.category}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
