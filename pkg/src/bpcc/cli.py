"""Command-line surface: allocation, bounds, simulation, estimation, and
the master/worker process entry points.

Scenario files are JSON:

    {
      "r": 10000, "m": 1000, "scheme": "bpcc", "epsilon": 0.13,
      "workers": [{"mu": 10.0, "alpha": 0.1, "p": 4}, ...],
      "straggler": {"fraction": 0.2, "delay_factor": 3},
      "trials": 100, "seed": 0
    }

Unknown keys are rejected. epsilon defaults to 0.13, trials to 100,
seed to 0, straggler to none; a worker without "p" gets the largest
usable batch count floor(l_hat). "delay_factor" accepts the string
"inf" for silent stragglers.

Exit codes: 0 success, 1 run failure, 2 schema violation,
3 infeasible task / estimation failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import net
from .allocation import (
    InfeasibleTaskError,
    default_batch_counts,
    l_hat,
    tau_bounds,
)
from .model import EstimationError, TimingSample, WorkerProfile, fit_residuals, fit_shift_and_rate
from .numerics import NumericFailure
from .sim import (
    Scenario,
    StragglerPolicy,
    allocation_for,
    compare_schemes,
    monte_carlo,
    sensitivity,
    sweep_p,
)

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_SCHEMA = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4


class SchemaError(ValueError):
    """Scenario file violates the documented schema."""


_SCENARIO_KEYS = {"r", "m", "scheme", "epsilon", "workers", "straggler", "trials", "seed"}
_WORKER_KEYS = {"mu", "alpha", "p"}
_STRAGGLER_KEYS = {"fraction", "delay_factor"}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SchemaError(msg)


def parse_scenario(doc: dict) -> tuple[Scenario, int, float]:
    """Validate a scenario document; returns (scenario, m, epsilon)."""
    _require(isinstance(doc, dict), "scenario must be a JSON object")
    unknown = set(doc) - _SCENARIO_KEYS
    _require(not unknown, f"unknown scenario keys: {sorted(unknown)}")
    for key in ("r", "scheme", "workers"):
        _require(key in doc, f"missing required key {key!r}")

    r = doc["r"]
    _require(isinstance(r, int) and r >= 1, "r must be a positive integer")
    scheme = doc["scheme"]
    _require(
        scheme in ("uniform", "load_balanced", "hcmm", "bpcc"),
        f"unknown scheme {scheme!r}",
    )
    m = doc.get("m", 1000)
    _require(isinstance(m, int) and m >= 1, "m must be a positive integer")
    epsilon = doc.get("epsilon", 0.13)
    _require(
        isinstance(epsilon, (int, float)) and epsilon >= 0, "epsilon must be >= 0"
    )
    trials = doc.get("trials", 100)
    _require(isinstance(trials, int) and trials >= 1, "trials must be >= 1")
    seed = doc.get("seed", 0)
    if "BPCC_SEED" in os.environ:
        seed = int(os.environ["BPCC_SEED"])
    _require(isinstance(seed, int) and seed >= 0, "seed must be a nonnegative integer")

    workers_doc = doc["workers"]
    _require(
        isinstance(workers_doc, list) and len(workers_doc) >= 1,
        "workers must be a non-empty list",
    )
    raw_profiles = []
    need_default_p = []
    for i, w in enumerate(workers_doc):
        _require(isinstance(w, dict), f"worker {i} must be an object")
        unknown = set(w) - _WORKER_KEYS
        _require(not unknown, f"worker {i} has unknown keys: {sorted(unknown)}")
        _require("mu" in w and "alpha" in w, f"worker {i} needs mu and alpha")
        mu, alpha = w["mu"], w["alpha"]
        _require(
            isinstance(mu, (int, float)) and mu > 0, f"worker {i}: mu must be > 0"
        )
        _require(
            isinstance(alpha, (int, float)) and alpha > 0,
            f"worker {i}: alpha must be > 0",
        )
        p = w.get("p")
        if p is None:
            need_default_p.append(i)
            p = 1
        else:
            _require(isinstance(p, int) and p >= 1, f"worker {i}: p must be >= 1")
        raw_profiles.append(WorkerProfile(float(mu), float(alpha), int(p)))

    if need_default_p:
        try:
            defaults = default_batch_counts(r, raw_profiles)
        except InfeasibleTaskError as exc:
            raise SchemaError(str(exc)) from exc
        raw_profiles = [
            w.with_p(defaults[i]) if i in need_default_p else w
            for i, w in enumerate(raw_profiles)
        ]

    straggler = None
    if "straggler" in doc and doc["straggler"] is not None:
        s = doc["straggler"]
        _require(isinstance(s, dict), "straggler must be an object")
        unknown = set(s) - _STRAGGLER_KEYS
        _require(not unknown, f"straggler has unknown keys: {sorted(unknown)}")
        _require("fraction" in s, "straggler needs fraction")
        frac = s["fraction"]
        _require(
            isinstance(frac, (int, float)) and 0 <= frac <= 1,
            "straggler fraction must be in [0, 1]",
        )
        d = s.get("delay_factor", "inf")
        if d == "inf":
            d = math.inf
        _require(
            isinstance(d, (int, float)) and d >= 1,
            "delay_factor must be >= 1 or 'inf'",
        )
        straggler = StragglerPolicy(float(frac), float(d))

    scenario = Scenario(
        r=r,
        profiles=tuple(raw_profiles),
        scheme=scheme,
        straggler=straggler,
        trials=trials,
        seed=seed,
    )
    return scenario, m, float(epsilon)


def load_scenario(path: str) -> tuple[Scenario, int, float]:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    return parse_scenario(doc)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_allocate(args: argparse.Namespace) -> int:
    scenario, _m, _eps = load_scenario(args.scenario)
    alloc = allocation_for(scenario)
    print(f"scheme: {alloc.scheme}   r={scenario.r}   N={len(scenario.profiles)}")
    print(f"{'worker':>6} {'mu':>10} {'alpha':>10} {'p':>6} {'load':>8} {'batch':>6}")
    for i, (w, load, p, b) in enumerate(
        zip(scenario.profiles, alloc.loads, alloc.batch_counts, alloc.batch_sizes)
    ):
        print(f"{i:>6} {w.mu:>10.4g} {w.alpha:>10.4g} {p:>6} {load:>8} {b:>6}")
    if alloc.tau_star is not None:
        print(f"total load q={alloc.total_load}   tau*={alloc.tau_star:.6g}")
    print(json.dumps(alloc.to_dict()))
    return EXIT_OK


def cmd_bounds(args: argparse.Namespace) -> int:
    scenario, _m, _eps = load_scenario(args.scenario)
    profiles = list(scenario.profiles)
    inf_tau, sup_tau = tau_bounds(scenario.r, profiles)
    out = {"inf_tau": inf_tau, "sup_tau": sup_tau, "l_hat": l_hat(scenario.r, profiles)}
    print(json.dumps(out))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario, _m, _eps = load_scenario(args.scenario)
    alloc = allocation_for(scenario)
    summary = monte_carlo(scenario, alloc, trace_grid=args.grid)
    rows = [
        [f"{t:.9g}", f"{v:.9g}", scenario.scheme]
        for t, v in zip(summary.grid_times, summary.mean_rows)
    ]
    _write_csv(args.out, ["time", "mean_rows", "scheme"], rows)
    print(
        json.dumps(
            {
                "scheme": scenario.scheme,
                "trials": summary.trials,
                "mean_time": summary.mean_time,
                "success_rate": summary.success_rate,
                "tau_star": alloc.tau_star,
                "trace_csv": args.out,
            }
        )
    )
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    scenario, _m, _eps = load_scenario(args.scenario)
    want_traces = args.trace_out is not None
    results = compare_schemes(scenario, trace_grid=args.grid if want_traces else None)
    rows = [
        [scheme, f"{s.mean_time:.9g}", f"{s.success_rate:.9g}"]
        for scheme, s in results.items()
    ]
    _write_csv(args.out, ["scheme", "mean_time", "success_rate"], rows)
    if want_traces:
        trace_rows = []
        for scheme, s in results.items():
            trace_rows.extend(
                [f"{t:.9g}", f"{v:.9g}", scheme]
                for t, v in zip(s.grid_times, s.mean_rows)
            )
        _write_csv(args.trace_out, ["time", "mean_rows", "scheme"], trace_rows)
    print(json.dumps({s: {"mean_time": r.mean_time, "success_rate": r.success_rate} for s, r in results.items()}))
    return EXIT_OK


def cmd_sweep_p(args: argparse.Namespace) -> int:
    scenario, _m, _eps = load_scenario(args.scenario)
    p_values = [int(v) for v in args.p.split(",")]
    points = sweep_p(scenario, p_values)
    rows = [
        [pt.p, f"{pt.tau_star:.9g}", f"{pt.mean_time:.9g}", pt.total_load]
        for pt in points
    ]
    _write_csv(args.out, ["p", "tau_star", "mean_time", "total_load"], rows)
    print(json.dumps([pt.__dict__ for pt in points]))
    return EXIT_OK


def cmd_sensitivity(args: argparse.Namespace) -> int:
    scenario, _m, _eps = load_scenario(args.scenario)
    deltas = [float(v) for v in args.deltas.split(",")]
    rows = []
    for which in ("mu", "alpha"):
        for d in deltas:
            rel = sensitivity(scenario, d, which)
            rows.append([f"{d:.9g}", which, f"{rel:.9g}"])
    _write_csv(args.out, ["delta", "which", "relative_change"], rows)
    print(json.dumps({"csv": args.out, "rows": len(rows)}))
    return EXIT_OK


def read_timing_samples(path: str) -> list[TimingSample]:
    """CSV (task_size, duration_seconds) or a JSON array of samples."""
    p = Path(path)
    if p.suffix == ".json":
        doc = json.loads(p.read_text())
        return [
            TimingSample(int(d["task_size"]), tuple(float(v) for v in d["durations"]))
            for d in doc
        ]
    by_size: dict[int, list[float]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if [h.strip() for h in header[:2]] != ["task_size", "duration_seconds"]:
            raise SchemaError(
                f"{path}: expected header task_size,duration_seconds, got {header}"
            )
        for row in reader:
            if not row:
                continue
            by_size.setdefault(int(row[0]), []).append(float(row[1]))
    return [TimingSample(r, tuple(ds)) for r, ds in sorted(by_size.items())]


def cmd_estimate(args: argparse.Namespace) -> int:
    samples = read_timing_samples(args.samples)
    mu_hat, alpha_hat = fit_shift_and_rate(samples)
    out = {
        "mu_hat": mu_hat,
        "alpha_hat": alpha_hat,
        "fit_residuals": fit_residuals(samples),
    }
    print(json.dumps(out))
    return EXIT_OK


def _load_or_make_matrix(args: argparse.Namespace, r: int, m: int) -> np.ndarray:
    if args.matrix is not None:
        from .coding import read_matrix

        A = read_matrix(args.matrix)
        if A.shape[0] != r:
            raise SchemaError(f"matrix has {A.shape[0]} rows, scenario r={r}")
        return A
    rng = np.random.default_rng(args.matrix_seed)
    return rng.standard_normal((r, m))


def cmd_provision(args: argparse.Namespace) -> int:
    scenario, m, epsilon = load_scenario(args.scenario)
    A = _load_or_make_matrix(args, scenario.r, m)
    rng = np.random.default_rng(scenario.seed)
    task, alloc = net.provision(
        args.data_dir,
        A,
        scenario.scheme,
        scenario.r,
        list(scenario.profiles),
        rng,
        codec=args.codec,
        epsilon=epsilon,
    )
    print(
        json.dumps(
            {
                "data_dir": args.data_dir,
                "scheme": alloc.scheme,
                "codec": task.codec,
                "q": task.q,
                "threshold": net.recovery_threshold(task),
                "loads": list(alloc.loads),
                "m": m,
            }
        )
    )
    return EXIT_OK


def cmd_worker(args: argparse.Namespace) -> int:
    import threading
    from queue import Queue

    host, port = args.listen.rsplit(":", 1)
    delay = float(os.environ.get("BPCC_DELAY_FACTOR", args.delay_factor))
    drop = args.drop or os.environ.get("BPCC_DROP", "") == "1"
    ready: Queue = Queue()
    box: dict = {}

    def run() -> None:
        try:
            box["stats"] = net.serve_worker(
                (host, int(port)), args.data_dir, delay_factor=delay, drop=drop, ready=ready
            )
        except BaseException as exc:  # surfaced on the main thread below
            box["error"] = exc
        finally:
            ready.put("exit")

    t = threading.Thread(target=run)
    t.start()
    # Events arrive in order: bound address, "connected", "exit".
    while True:
        event = ready.get()
        if event == "exit":
            break
        if event == "connected":
            print("CONNECTED", flush=True)
        else:
            print(f"READY {event[0]}:{event[1]}", flush=True)
    t.join()
    if "error" in box:
        raise box["error"]
    stats = box["stats"]
    print(
        json.dumps(
            {
                "worker_id": stats.worker_id,
                "batches_computed": stats.batches_computed,
                "rows_computed": stats.rows_computed,
                "stopped_early": stats.stopped_early,
            }
        )
    )
    return EXIT_OK


def cmd_master(args: argparse.Namespace) -> int:
    task, alloc = net.load_provisioned(args.data_dir)
    run_meta = json.loads((Path(args.data_dir) / "master" / "run.json").read_text())
    m = run_meta["m"]
    if args.x is not None:
        from .coding import read_matrix

        x = read_matrix(args.x).reshape(-1)
    else:
        x = np.random.default_rng(args.x_seed).standard_normal(m)
    addresses = []
    for addr_str in args.connect.split(","):
        host, port = addr_str.rsplit(":", 1)
        addresses.append((host, int(port)))
    threshold = task.q if alloc.scheme in ("uniform", "load_balanced") else None
    y, metrics = net.run_master(addresses, task, x, threshold=threshold)
    if args.y_out:
        from .coding import write_matrix

        write_matrix(args.y_out, y.reshape(-1, 1))
    print(json.dumps(metrics.to_dict()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bpcc",
        description="Batch-processing coded computing: allocation, simulation, execution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("allocate", help="compute a load allocation")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("bounds", help="completion-time bounds and limiting loads")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("simulate", help="Monte-Carlo one scheme, write trace CSV")
    p.add_argument("scenario")
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--grid", type=int, default=1000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="paired comparison of all four schemes")
    p.add_argument("scenario")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.add_argument("--trace-out", default=None, help="optional per-scheme trace CSV")
    p.add_argument("--grid", type=int, default=1000)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep-p", help="metrics across batch counts")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--p", default="1,2,4,8,16,32,64", help="comma-separated batch counts")
    p.set_defaults(func=cmd_sweep_p)

    p = sub.add_parser("sensitivity", help="mis-estimated parameter impact")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--deltas", default="0.05,0.1,0.25,0.5,1.0")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("estimate", help="fit (mu, alpha) from timing samples")
    p.add_argument("samples", help="CSV (task_size,duration_seconds) or JSON array")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("provision", help="encode and write worker data directories")
    p.add_argument("scenario")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--codec", choices=("dense", "lt"), default="dense")
    p.add_argument("--matrix", default=None, help="matrix file (.bin) to encode")
    p.add_argument("--matrix-seed", type=int, default=0, help="seed for a random matrix")
    p.set_defaults(func=cmd_provision)

    p = sub.add_parser("worker", help="serve one worker's slice")
    p.add_argument("--listen", required=True, help="host:port (port 0 for ephemeral)")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--delay-factor", type=float, default=1.0)
    p.add_argument("--drop", action="store_true", help="compute but never send results")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("master", help="run a distributed multiply")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--connect", required=True, help="comma-separated host:port list")
    p.add_argument("--x", default=None, help="input vector file (.bin)")
    p.add_argument("--x-seed", type=int, default=0)
    p.add_argument("--y-out", default=None)
    p.set_defaults(func=cmd_master)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (InfeasibleTaskError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except net.RunFailure as exc:
        print(f"run failed: {exc.args[0]}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    except (ConnectionError, net.ProtocolError) as exc:
        print(f"connection error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
