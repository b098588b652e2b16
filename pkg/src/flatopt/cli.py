"""Experiment runner CLI.

Subcommands::

    flatopt run <config.json>      full run; writes metrics.csv,
                                   accuracy_matrix.csv, summary.json and,
                                   with diagnostics enabled, the trace CSVs
    flatopt compare <config.json> --modes sgd sam turbo ...
    flatopt sweep <config.json> --param beta --values 0.0 0.4 0.8
    flatopt validate <config.json>

Exit codes: 0 success, 2 configuration error, 1 runtime error.  All
outputs land under ``--out`` (default ``./out``) and are written
atomically.  ``FLATOPT_THREADS`` caps sweep parallelism.

Wall-clock speed is printed to stdout but deliberately kept out of
summary.json: repeated runs with the same config and seed must produce
byte-identical output files.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from .clbench import run_experiment
from .config import (
    ConfigError,
    ExperimentConfig,
    build_objective,
    build_optimizer,
    build_stream,
    load_config,
)
from .csvio import write_csv, write_json
from .diagnostics import qq_export, ratio_histogram

SWEEP_PARAMS = {
    "beta": "surrogate_scale",
    "k0": "k0",
    "m": "trigger_mult",
    "rho": "rho",
    "lambda": "flat_weight",
}


def _execute(cfg: ExperimentConfig, **opt_overrides):
    stream = build_stream(cfg)
    obj = build_objective(cfg, stream)
    opt_cfg = build_optimizer(cfg, len(stream.tasks), **opt_overrides)
    started = time.perf_counter()
    metrics = run_experiment(
        obj,
        stream,
        opt_cfg,
        cfg.protocol.epochs,
        cfg.protocol.batch_size,
        cfg.protocol.seed,
        replay_per_class=cfg.protocol.replay_per_class,
        diagnostics=cfg.diagnostics.enabled,
        trace_window=cfg.diagnostics.window,
    )
    elapsed = time.perf_counter() - started
    return metrics, stream, elapsed


def _stage_rows(metrics, stream):
    rows = []
    evals_by_task = {}
    steps_by_task = {}
    sharp_by_task = {}
    flat_by_task = {}
    cache_by_task = {}
    for ev in metrics.events:
        evals_by_task[ev.task] = evals_by_task.get(ev.task, 0) + ev.evals
        steps_by_task[ev.task] = steps_by_task.get(ev.task, 0) + 1
        sharp_by_task[ev.task] = sharp_by_task.get(ev.task, 0) + int(ev.sharp_triggered)
        flat_by_task[ev.task] = flat_by_task.get(ev.task, 0) + int(ev.flat_triggered)
        cache_by_task[ev.task] = cache_by_task.get(ev.task, 0) + int(
            ev.sharp_cached or ev.flat_cached
        )
    evals_cum = steps_cum = sharp_cum = flat_cum = cache_cum = 0
    seen = 0
    for t in range(len(stream.tasks)):
        evals_cum += evals_by_task.get(t, 0)
        steps_cum += steps_by_task.get(t, 0)
        sharp_cum += sharp_by_task.get(t, 0)
        flat_cum += flat_by_task.get(t, 0)
        cache_cum += cache_by_task.get(t, 0)
        seen += len(stream.tasks[t].class_ids)
        stage_acc = metrics.stage_accs[t] if metrics.stage_accs else None
        avg_so_far = (
            sum(metrics.stage_accs[: t + 1]) / (t + 1) if metrics.stage_accs else None
        )
        rows.append(
            (t, seen, stage_acc, avg_so_far, evals_cum, steps_cum,
             sharp_cum, flat_cum, cache_cum)
        )
    return rows


def _write_run_outputs(out_dir, cfg: ExperimentConfig, metrics, stream) -> None:
    os.makedirs(out_dir, exist_ok=True)
    n_tasks = len(stream.tasks)
    write_csv(
        os.path.join(out_dir, "metrics.csv"),
        ("stage", "classes_seen", "stage_accuracy", "avg_accuracy_so_far",
         "evals_cumulative", "steps_cumulative", "sharp_triggers",
         "flat_triggers", "cache_steps"),
        _stage_rows(metrics, stream),
    )
    write_csv(
        os.path.join(out_dir, "accuracy_matrix.csv"),
        ("stage", *[f"task_{i}" for i in range(n_tasks)]),
        [(t, *row) for t, row in enumerate(metrics.acc_matrix)],
    )
    write_json(
        os.path.join(out_dir, "summary.json"),
        {
            "avg_acc": metrics.avg_acc,
            "last_acc": metrics.last_acc,
            "eval_count": metrics.eval_count,
            "total_steps": metrics.total_steps,
            "steps_per_second": None,  # wall clock stays out of output files
            "batch_digest": metrics.batch_digest,
            "config": cfg.raw,
        },
    )
    if metrics.trace is not None:
        _write_trace_outputs(out_dir, metrics.trace)


def _write_trace_outputs(out_dir, trace) -> None:
    write_csv(
        os.path.join(out_dir, "trace_scalars.csv"),
        ("step", "grad_sq", "proxy_grad_sq", "sharp_increment_norm",
         "flat_grad_norm", "triggered_s", "triggered_f", "cached"),
        trace.scalar_rows,
    )
    write_csv(
        os.path.join(out_dir, "trace_distances.csv"),
        ("step", "series", "distance"),
        trace.distances,
    )
    qq_rows = []
    for name, series in (
        ("grad_sq", trace.grad_sq_series()),
        ("proxy_grad_sq", trace.proxy_grad_sq_series()),
    ):
        values = [v for v in series if v is not None]
        if len(values) >= 10 and max(values) > min(values):
            sample_q, normal_q = qq_export(values)
            qq_rows.extend(
                (name, float(s), float(n)) for s, n in zip(sample_q, normal_q)
            )
    write_csv(
        os.path.join(out_dir, "qq.csv"), ("series", "sample_q", "normal_q"), qq_rows
    )
    hist_rows = []
    for pair, pool in trace.ratio_pools.items():
        for lo, hi, count in ratio_histogram(pool):
            hist_rows.append((pair, lo, hi, count))
    write_csv(
        os.path.join(out_dir, "ratio_hist.csv"),
        ("pair", "bin_lo", "bin_hi", "count"),
        hist_rows,
    )


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    metrics, stream, elapsed = _execute(cfg)
    out_dir = args.out or cfg.output_dir or "./out"
    _write_run_outputs(out_dir, cfg, metrics, stream)
    sps = metrics.total_steps / elapsed if elapsed > 0 else float("inf")
    avg = "n/a" if metrics.avg_acc is None else f"{metrics.avg_acc:.4f}"
    last = "n/a" if metrics.last_acc is None else f"{metrics.last_acc:.4f}"
    print(
        f"run complete: avg={avg} last={last} evals={metrics.eval_count} "
        f"steps={metrics.total_steps} ({sps:.1f} steps/s) -> {out_dir}"
    )
    return 0


def _cmd_compare(args) -> int:
    cfg = load_config(args.config)
    for mode in args.modes:
        if mode not in SWEEP_MODES:
            raise ConfigError("modes", f"unknown mode {mode!r}")
    out_dir = args.out or cfg.output_dir or "./out"
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    digests = set()
    for mode in args.modes:
        metrics, _, elapsed = _execute(cfg, mode=mode)
        digests.add(metrics.batch_digest)
        sps = metrics.total_steps / elapsed if elapsed > 0 else float("inf")
        # SGD spends exactly one evaluation per step, so the ratio against
        # it needs no extra run
        rows.append(
            (mode, metrics.avg_acc, metrics.last_acc, metrics.eval_count,
             metrics.eval_count / metrics.total_steps, sps)
        )
        print(f"compare[{mode}]: avg={rows[-1][1]} evals={metrics.eval_count}")
    if len(digests) > 1:
        raise RuntimeError("modes consumed different batch orders")
    write_csv(
        os.path.join(out_dir, "compare.csv"),
        ("mode", "avg", "last", "evals", "evals_vs_sgd", "steps_per_s"),
        rows,
    )
    print(f"compare table -> {os.path.join(out_dir, 'compare.csv')}")
    return 0


SWEEP_MODES = ("sgd", "sam", "looksam", "cflat", "turbo")


def _sweep_one(payload):
    raw, param, value = payload
    from .config import parse_config  # re-parse inside the worker process

    cfg = parse_config(raw)
    field = SWEEP_PARAMS[param]
    typed = int(value) if field == "k0" else float(value)
    metrics, _, _ = _execute(cfg, **{field: typed})
    return (param, typed, metrics.avg_acc, metrics.last_acc, metrics.eval_count)


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.param not in SWEEP_PARAMS:
        raise ConfigError(
            "param", f"must be one of {tuple(sorted(SWEEP_PARAMS))}"
        )
    if not args.values:
        raise ConfigError("values", "need at least one value")
    out_dir = args.out or cfg.output_dir or "./out"
    os.makedirs(out_dir, exist_ok=True)
    payloads = [(cfg.raw, args.param, v) for v in args.values]
    threads = int(os.environ.get("FLATOPT_THREADS", "1"))
    if threads > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_one, payloads))
    else:
        rows = [_sweep_one(p) for p in payloads]
    write_csv(
        os.path.join(out_dir, "sweep.csv"),
        ("param", "value", "avg", "last", "evals"),
        rows,
    )
    print(f"sweep table -> {os.path.join(out_dir, 'sweep.csv')}")
    return 0


def _cmd_validate(args) -> int:
    load_config(args.config)
    print("config ok")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flatopt",
        description="Flatness-seeking optimizer benchmark runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (default ./out)")
    p_run.set_defaults(fn=_cmd_run)

    p_cmp = sub.add_parser("compare", help="run several modes on one stream")
    p_cmp.add_argument("config")
    p_cmp.add_argument("--modes", nargs="+", required=True, choices=SWEEP_MODES)
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(fn=_cmd_compare)

    p_swp = sub.add_parser("sweep", help="sweep one hyperparameter")
    p_swp.add_argument("config")
    p_swp.add_argument("--param", required=True)
    p_swp.add_argument("--values", nargs="+", type=float, required=True)
    p_swp.add_argument("--out", default=None)
    p_swp.set_defaults(fn=_cmd_sweep)

    p_val = sub.add_parser("validate", help="parse and range-check a config")
    p_val.add_argument("config")
    p_val.set_defaults(fn=_cmd_validate)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
