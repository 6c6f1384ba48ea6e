"""Command-line benchmark harness.

Subcommands: ``simulate`` (write benchmark CSVs), ``bench`` (run every
(method, seed) job and write a result table), ``weights`` (dump a trained
model's worst-case weighting per sample), ``sensitivity`` (weight
sensitivity study over a TV-strength grid), ``validate-config``.

Exit codes: 0 success, 2 config error, 3 runtime or numerical failure,
4 partial suite failure (some jobs failed, results written for the rest).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .analysis import group_mass, param_error, regression_metrics, sensitivity_study
from .config import ExperimentConfig, load_config, parse_config
from .datagen import (
    PRNG_ALGORITHM,
    Dataset,
    SimConfig,
    export_benchmark,
    load_csv,
    make_benchmark,
    with_seed,
)
from .dro import ERMSpec, train
from .errors import ConfigError, GcdroError
from .graph import build_knn
from .models import init_linear, init_mlp, per_sample_loss

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_PARTIAL = 4


def _resolve_out_dir(args_out, cfg: ExperimentConfig) -> Path:
    out = args_out or cfg.output_dir or os.environ.get("GCDRO_OUT_DIR")
    if out is None:
        raise ConfigError(
            "no output directory: pass --out, set output_dir in the config, "
            "or set GCDRO_OUT_DIR"
        )
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _prepare_data(cfg: ExperimentConfig, seed: int):
    """(train Dataset, tests dict, theta_star or None) for one run seed."""
    if cfg.is_simulation:
        bench = make_benchmark(with_seed(cfg.benchmark, seed))
        theta_star = np.asarray(bench.meta["theta_star"])
        return bench.train, bench.tests, theta_star
    full = load_csv(cfg.benchmark)
    train_groups = cfg.benchmark.train_groups or (0,)
    mask = np.isin(full.group_id, train_groups)
    if not mask.any() or mask.all():
        raise ConfigError("csv benchmark: train groups must be a proper subset")
    train_ds = Dataset(X=full.X[mask], y=full.y[mask],
                       group_id=full.group_id[mask], noise_flag=full.noise_flag[mask])
    tests = {}
    for gid in np.unique(full.group_id[~mask]):
        sel = full.group_id == gid
        tests[int(gid)] = Dataset(X=full.X[sel], y=full.y[sel],
                                  group_id=full.group_id[sel], noise_flag=full.noise_flag[sel])
    return train_ds, tests, None


def _init_model(cfg: ExperimentConfig, dim: int, seed: int):
    if cfg.model.kind == "linear":
        return init_linear(dim)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6C70]))
    return init_mlp(dim, hidden=cfg.model.hidden, activation=cfg.model.activation, rng=rng)


def run_single(raw_config: dict, method_index: int, seed: int, prepared=None) -> dict:
    """Run one (method, seed) job; returns the result row plus diagnostics."""
    cfg = parse_config(raw_config)
    method = cfg.methods[method_index]
    if prepared is None:
        prepared = _prepare_data(cfg, seed)
    train_ds, tests, theta_star = prepared

    t0 = time.perf_counter()
    g = (
        build_knn(train_ds.X, k=cfg.graph.k, scheme=cfg.graph.scheme)
        if method.label in ("GDRO", "GCDRO")
        else None
    )
    model0 = _init_model(cfg, train_ds.dim, seed)
    tc = dataclasses.replace(cfg.train, seed=seed)
    trained = train(method, model0, train_ds, g=g, tc=tc)
    wall = time.perf_counter() - t0

    metrics = regression_metrics(trained.params, tests)
    if theta_star is not None and hasattr(trained.params, "theta"):
        perr = param_error(trained.params.theta, theta_star)
    else:
        perr = float("nan")
    ell = per_sample_loss(trained.params, train_ds)
    summary = group_mass(trained.final_q, train_ds)
    return {
        "method": method.label,
        "seed": seed,
        "rmse": {str(k): v for k, v in metrics.rmse.items()},
        "test_mean": metrics.mean,
        "test_std": metrics.std,
        "param_error": perr,
        "wall_time_s": wall,
        "group_mass": summary.to_dict(),
        "final_train_loss_mean": float(ell.mean()),
        "diagnostics": trained.diagnostics,
        "final_q": trained.final_q.tolist(),
        "per_sample_loss": ell.tolist(),
    }


def _job(payload):
    raw_config, method_index, seed = payload
    label = parse_config(raw_config).methods[method_index].label
    try:
        return ("ok", run_single(raw_config, method_index, seed))
    except GcdroError as exc:
        return ("err", {"method": label, "seed": seed, "error": str(exc)})


def _result_digest(rows: list) -> str:
    """Digest over result numbers, excluding wall time (which never reproduces)."""
    payload = [
        {k: v for k, v in row.items() if k not in ("wall_time_s", "diagnostics")}
        for row in rows
    ]
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


_ROW_HEAVY_KEYS = ("diagnostics", "final_q", "per_sample_loss")


def _write_manifest(out: Path, cfg: ExperimentConfig, seeds, rows) -> None:
    manifest = {
        "config_sha256": cfg.sha256,
        "seeds": list(seeds),
        "build": f"gcdro {__version__} ({_kernels.BACKEND} kernel)",
        "prng": PRNG_ALGORITHM,
        "results_digest": _result_digest(rows),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _write_results(out: Path, cfg: ExperimentConfig, rows: list, errors: list) -> None:
    rmse_keys = sorted({k for row in rows for k in row["rmse"]})
    header = (
        ["method", "seed"]
        + [f"rmse_r{k}" for k in rmse_keys]
        + ["test_mean", "test_std", "param_error", "wall_time_s"]
    )
    with (out / "results.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [row["method"], row["seed"]]
                + [repr(row["rmse"].get(k, float("nan"))) for k in rmse_keys]
                + [
                    repr(row["test_mean"]),
                    repr(row["test_std"]),
                    repr(row["param_error"]),
                    f"{row['wall_time_s']:.3f}",
                ]
            )

    # aggregate means over seeds, one row per method
    agg = {}
    for row in rows:
        agg.setdefault(row["method"], []).append(row)
    with (out / "aggregate.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "n_seeds", "test_mean", "test_std", "param_error"])
        for label, group in agg.items():
            writer.writerow(
                [
                    label,
                    len(group),
                    repr(float(np.mean([r["test_mean"] for r in group]))),
                    repr(float(np.mean([r["test_std"] for r in group]))),
                    repr(float(np.mean([r["param_error"] for r in group]))),
                ]
            )

    slim = [{k: v for k, v in row.items() if k not in _ROW_HEAVY_KEYS} for row in rows]
    payload = {"results": slim, "errors": errors}
    (out / "results.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for row in rows:
        name = f"{row['method'].replace(' ', '_')}_{row['seed']}.jsonl"
        with (traces / name).open("w", encoding="utf-8") as fh:
            for rec in row["diagnostics"]:
                fh.write(json.dumps(rec) + "\n")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if not cfg.is_simulation:
        raise ConfigError("simulate requires a simulation benchmark")
    out = _resolve_out_dir(args.out, cfg)
    sim: SimConfig = cfg.benchmark
    bench = make_benchmark(sim)
    written = export_benchmark(bench, out)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out_dir(args.out, cfg)
    seeds = (
        tuple(int(s) for s in args.seeds.split(",")) if args.seeds else cfg.seeds
    )
    jobs = [(cfg.raw, mi, seed) for seed in seeds for mi in range(len(cfg.methods))]

    rows, errors = [], []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for status, payload in pool.map(_job, jobs, chunksize=1):
                (rows if status == "ok" else errors).append(payload)
    else:
        cache = {}
        for raw, mi, seed in jobs:
            if seed not in cache:
                cache[seed] = _prepare_data(cfg, seed)
            try:
                rows.append(run_single(raw, mi, seed, prepared=cache[seed]))
            except GcdroError as exc:
                errors.append(
                    {"method": cfg.methods[mi].label, "seed": seed, "error": str(exc)}
                )

    rows.sort(key=lambda r: (r["method"], r["seed"]))
    _write_results(out, cfg, rows, errors)
    _write_manifest(out, cfg, seeds, rows)
    print(out / "results.csv")
    if errors and rows:
        return EXIT_PARTIAL
    if errors:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_weights(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out_dir(args.out, cfg)
    labels = [m.label for m in cfg.methods]
    if args.method not in labels:
        raise ConfigError(f"--method must be one of {labels}, got {args.method!r}")
    mi = labels.index(args.method)
    seed = int(args.seeds.split(",")[0]) if args.seeds else cfg.seeds[0]

    prepared = _prepare_data(cfg, seed)
    train_ds = prepared[0]
    row = run_single(cfg.raw, mi, seed, prepared=prepared)

    q = np.asarray(row["final_q"])
    losses = row["per_sample_loss"]
    ell_path = out / f"weights_{args.method.replace(' ', '_')}_{seed}.csv"
    with ell_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "q", "group_id", "noise_flag", "loss"])
        for i in range(train_ds.n):
            writer.writerow(
                [
                    i,
                    repr(float(q[i])),
                    int(train_ds.group_id[i]),
                    int(train_ds.noise_flag[i]),
                    repr(float(losses[i])),
                ]
            )
    summary_path = out / f"group_mass_{args.method.replace(' ', '_')}_{seed}.json"
    summary_path.write_text(json.dumps(row["group_mass"], indent=2) + "\n", encoding="utf-8")
    print(ell_path)
    print(summary_path)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    cfg = load_config(args.config)
    out = _resolve_out_dir(args.out, cfg)
    seed = int(args.seeds.split(",")[0]) if args.seeds else cfg.seeds[0]
    train_ds, _, _ = _prepare_data(cfg, seed)
    g = build_knn(train_ds.X, k=cfg.graph.k, scheme=cfg.graph.scheme)

    # study the weighting reaction at fixed parameters of a plain fit
    model0 = _init_model(cfg, train_ds.dim, seed)
    tc = dataclasses.replace(cfg.train, seed=seed)
    trained = train(ERMSpec(), model0, train_ds, g=None, tc=tc)
    ell = per_sample_loss(trained.params, train_ds)

    sc = cfg.sensitivity
    reports = sensitivity_study(ell, g, sc.i, sc.delta, sc.alphas, sc.beta, sc.j)
    payload = {
        "seed": seed,
        "i": sc.i,
        "delta": sc.delta,
        "beta": sc.beta,
        "alphas": list(sc.alphas),
        "reports": [r.to_dict() for r in reports],
    }
    path = out / "sensitivity.json"
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"ok: {len(cfg.methods)} methods, {len(cfg.seeds)} seeds, sha256={cfg.sha256[:12]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcdro", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [
        ("simulate", cmd_simulate),
        ("bench", cmd_bench),
        ("weights", cmd_weights),
        ("sensitivity", cmd_sensitivity),
        ("validate-config", cmd_validate),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seeds", default=None, help="comma-separated seed override")
        p.add_argument("--jobs", type=int, default=1, help="parallel (method, seed) jobs")
        if name == "weights":
            p.add_argument("--method", required=True, help="method label to dump")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GcdroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
