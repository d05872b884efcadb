"""Acceptance suite: one test per criterion, each printing a PASS/FAIL
line (visible with `pytest tests/test_acceptance.py -s`).

Statistical criteria run on seed-fixed rosters drawn the way the
simulation studies draw them (mu uniform in [1, 50], alpha = 1/mu), so
every run is reproducible bit for bit.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from bpcc.allocation import (
    bpcc_allocate,
    default_batch_counts,
    hcmm_allocate,
    l_hat,
    tau_bounds,
)
from bpcc.coding import (
    CodedTask,
    PartialResult,
    decode,
    encode_dense,
    lt_neighbor_sets,
    read_matrix,
)
from bpcc.model import TimingSample, WorkerProfile, fit_shift_and_rate, sample_task_times
from bpcc.numerics import exp_integral_01, lambda_equation, solve_lambda, sup_lambda
from bpcc.sim import Scenario, StragglerPolicy, compare_schemes, monte_carlo, sensitivity


def report(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {num:02d} ({name}): {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def fixed_roster(seed, n=10, r=10_000, default_p=True):
    rng = np.random.default_rng(seed)
    mus = rng.uniform(1.0, 50.0, n)
    base = [WorkerProfile(float(mu), float(1.0 / mu), 1) for mu in mus]
    if not default_p:
        return tuple(base)
    pd = default_batch_counts(r, base)
    return tuple(w.with_p(p) for w, p in zip(base, pd))


def test_criterion_01_lambda_solver():
    rng = np.random.default_rng(42)
    t0 = time.perf_counter()
    worst_resid = 0.0
    ok = True
    for _ in range(1000):
        mu = float(rng.uniform(1e-6, 50.0))
        alpha = float(rng.uniform(1e-6, 2.0))
        p = int(rng.integers(1, 1025))
        lam = solve_lambda(mu, alpha, p)
        worst_resid = max(worst_resid, abs(lambda_equation(lam, mu, alpha, p) - 1.0))
        ok &= alpha < lam <= sup_lambda(mu, alpha) * (1 + 1e-12)
    elapsed = time.perf_counter() - t0
    ok &= worst_resid <= 1e-10 and elapsed < 5.0
    report(1, "lambda solver", ok, f"worst residual {worst_resid:.2e}, {elapsed:.2f}s")


def test_criterion_02_lambert_cross_check():
    rng = np.random.default_rng(43)
    worst = 0.0
    for _ in range(1000):
        mu = float(rng.uniform(1e-3, 50.0))
        alpha = float(rng.uniform(1e-3, 2.0))
        worst = max(
            worst,
            abs(solve_lambda(mu, alpha, 1) - sup_lambda(mu, alpha)) / sup_lambda(mu, alpha),
        )
    report(2, "closed-form cross-check", worst <= 1e-9, f"worst rel diff {worst:.2e}")


def test_criterion_03_monotonicity_in_p():
    ok = True
    worst = ""
    for k in range(100):
        base = fixed_roster(5000 + k, default_p=False)
        prev_tau, prev_q = math.inf, 0
        for p in (1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024):
            alloc = bpcc_allocate(10_000, [w.with_p(p) for w in base])
            if alloc.tau_star > prev_tau + 1e-12 or alloc.total_load < prev_q:
                ok = False
                worst = f"roster {k}, p={p}"
            prev_tau, prev_q = alloc.tau_star, alloc.total_load
    report(3, "tau* down / q up in p", ok, worst or "100 rosters, p in 1..1024")


def test_criterion_04_convergence_at_p100():
    t0 = time.perf_counter()
    ok = True
    worst_tau = worst_load = 0.0
    for k in range(20):
        base = fixed_roster(6000 + k, default_p=False)
        alloc = bpcc_allocate(10_000, [w.with_p(100) for w in base])
        inf_tau, _ = tau_bounds(10_000, list(base))
        hats = l_hat(10_000, list(base))
        gap_tau = (alloc.tau_star - inf_tau) / inf_tau
        gap_load = abs(alloc.loads[0] - hats[0]) / hats[0]
        worst_tau = max(worst_tau, gap_tau)
        worst_load = max(worst_load, gap_load)
        ok &= 0 <= gap_tau < 0.01 and gap_load < 0.01
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10.0
    report(
        4,
        "p=100 near limits",
        ok,
        f"max tau gap {worst_tau:.4f}, max load gap {worst_load:.4f}, {elapsed:.2f}s",
    )


def test_criterion_05_hcmm_equivalence():
    ok = True
    for k in range(100):
        base = fixed_roster(7000 + k, default_p=False)
        a = bpcc_allocate(10_000, list(base))
        b = hcmm_allocate(10_000, list(base))
        ok &= a.loads == b.loads
    report(5, "p=1 equals single-batch baseline", ok, "100 rosters, loads identical")


def test_criterion_06_asymptotic_optimality():
    t0 = time.perf_counter()
    errs = {}
    for n in (10, 30, 100, 300):
        r = 100 * n + 10_000
        base = [WorkerProfile(10.0, 0.1, 1) for _ in range(n)]
        pd = default_batch_counts(r, base)
        profiles = tuple(w.with_p(p) for w, p in zip(base, pd))
        alloc = bpcc_allocate(r, list(profiles))
        sc = Scenario(r=r, profiles=profiles, scheme="bpcc", trials=10_000, seed=606)
        s = monte_carlo(sc, alloc, trace_grid=None)
        errs[n] = abs(s.mean_time - alloc.tau_star) / alloc.tau_star
    elapsed = time.perf_counter() - t0
    seq = [errs[n] for n in (10, 30, 100, 300)]
    ok = errs[100] <= 0.05
    ok &= all(b <= a + 0.002 for a, b in zip(seq, seq[1:]))
    ok &= elapsed < 120.0
    report(
        6,
        "mean time converges to tau*",
        ok,
        "errors " + ", ".join(f"N={n}:{errs[n]:.4f}" for n in (10, 30, 100, 300)) + f", {elapsed:.0f}s",
    )


def test_criterion_07_scheme_ordering():
    b_le_h = h_le_u = 0
    n_rosters = 20
    for k in range(n_rosters):
        profiles = fixed_roster(1000 + k)
        sc = Scenario(
            r=10_000, profiles=profiles, scheme="bpcc", trials=10_000, seed=70_000 + k
        )
        res = compare_schemes(sc, trace_grid=None)
        b_le_h += res["bpcc"].mean_time <= res["hcmm"].mean_time
        h_le_u += res["hcmm"].mean_time <= res["uniform"].mean_time

    def sign_test_p(k_successes, n):
        return sum(math.comb(n, j) for j in range(k_successes, n + 1)) / 2.0 ** n

    p1 = sign_test_p(b_le_h, n_rosters)
    p2 = sign_test_p(h_le_u, n_rosters)
    ok = p1 < 0.01 and p2 < 0.01
    report(
        7,
        "paired ordering bpcc<=hcmm<=uniform",
        ok,
        f"bpcc<=hcmm {b_le_h}/20 (p={p1:.2e}), hcmm<=uniform {h_le_u}/20 (p={p2:.2e})",
    )


def test_criterion_08_straggler_robustness():
    uncoded_zero = True
    per_roster = 0
    for k in range(10):
        profiles = fixed_roster(2000 + k)
        sc = Scenario(
            r=10_000,
            profiles=profiles,
            scheme="bpcc",
            straggler=StragglerPolicy(0.2, math.inf),
            trials=1000,
            seed=80_000 + k,
        )
        res = compare_schemes(sc, trace_grid=None)
        uncoded_zero &= (
            res["uniform"].success_rate == 0.0
            and res["load_balanced"].success_rate == 0.0
        )
        per_roster += res["bpcc"].success_rate >= res["hcmm"].success_rate
    ok = uncoded_zero and per_roster == 10
    report(
        8,
        "silent-straggler success rates",
        ok,
        f"uncoded all exactly 0: {uncoded_zero}, bpcc>=hcmm on {per_roster}/10 rosters",
    )


def test_criterion_09_sensitivity():
    alpha_wins = 0
    max_small = 0.0
    for k in range(20):
        profiles = fixed_roster(3000 + k, r=2000)
        sc = Scenario(
            r=2000, profiles=profiles, scheme="bpcc", trials=2000, seed=90_000 + k
        )
        rel_mu = abs(sensitivity(sc, 0.5, "mu"))
        rel_alpha = abs(sensitivity(sc, 0.5, "alpha"))
        alpha_wins += rel_alpha > rel_mu
        max_small = max(
            max_small,
            abs(sensitivity(sc, 0.05, "mu")),
            abs(sensitivity(sc, 0.05, "alpha")),
        )
    ok = alpha_wins >= 16 and max_small < 0.05
    report(
        9,
        "shift errors hurt more than rate errors",
        ok,
        f"alpha>mu on {alpha_wins}/20 rosters, max |rel change| at delta=0.05: {max_small:.4f}",
    )


def test_criterion_10_coding_round_trip():
    rng = np.random.default_rng(4242)
    r, m, q = 200, 50, 300
    A = rng.standard_normal((r, m))
    x = rng.standard_normal(m)
    task, A_hat = encode_dense(A, q, rng)
    y_hat = A_hat @ x
    y_true = A @ x
    scale = np.max(np.abs(y_true))
    dense_ok = True
    for _ in range(100):
        rows = rng.choice(q, size=r, replace=False)
        parts = [PartialResult(0, 0, int(i), y_hat[int(i) : int(i) + 1]) for i in rows]
        y = decode(task, parts)
        dense_ok &= np.max(np.abs(y - y_true)) / scale < 1e-8

    r_lt = 5000
    thr = math.ceil(r_lt * 1.13)
    successes = 0
    trials = 1000
    for _ in range(trials):
        sets = lt_neighbor_sets(r_lt, thr, rng)
        lt_task = CodedTask(codec="lt", r=r_lt, q=thr, epsilon=0.13, neighbor_sets=sets)
        y = decode(lt_task, [PartialResult(0, 0, 0, np.zeros(thr))])
        successes += y is not None
    lt_ok = successes / trials >= 0.99
    ok = dense_ok and lt_ok
    report(
        10,
        "codec round trips",
        ok,
        f"dense 100/100 under 1e-8: {dense_ok}; peel success {successes}/1000",
    )


def test_criterion_11_quadrature_identity():
    from scipy.integrate import quad

    worst = 0.0
    for c in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0):
        second, _ = quad(lambda x: (c / x) * math.exp(-c / x), 0.0, 1.0, limit=200)
        full = exp_integral_01(c) + second
        worst = max(worst, abs(full - math.exp(-c)))
    report(11, "integral identity", worst <= 1e-8, f"worst abs error {worst:.2e}")


@pytest.mark.slow
def test_criterion_12_end_to_end_cluster(tmp_path):
    r, m, n = 2000, 100_000, 5
    scenario = {
        "r": r,
        "m": m,
        "scheme": "bpcc",
        "workers": [{"mu": 20.0, "alpha": 0.05, "p": 16} for _ in range(n)],
        "seed": 3,
    }
    scen_path = tmp_path / "scen.json"
    scen_path.write_text(json.dumps(scenario))
    data = tmp_path / "data"

    # Provisioning is the offline phase; the 1-minute budget covers the runs.
    out = subprocess.run(
        [sys.executable, "-m", "bpcc", "provision", str(scen_path),
         "--data-dir", str(data), "--matrix-seed", "7"],
        capture_output=True, text=True, timeout=300,
    )
    assert out.returncode == 0, out.stderr
    info = json.loads(out.stdout.strip().splitlines()[-1])
    loads = info["loads"]
    assert info["q"] - max(loads) >= r, "provisioned redundancy must survive one loss"

    t_runs = time.perf_counter()

    def spawn_workers(delay):
        procs, addrs = [], []
        for i in range(n):
            p = subprocess.Popen(
                [sys.executable, "-m", "bpcc", "worker", "--listen", "127.0.0.1:0",
                 "--data-dir", str(data / f"worker_{i}"), "--delay-factor", str(delay)],
                stdout=subprocess.PIPE, text=True,
            )
            line = p.stdout.readline().strip()
            assert line.startswith("READY ")
            procs.append(p)
            addrs.append(line.split()[1])
        return procs, addrs

    # Coded run, one worker killed mid-run: wait for the master to dial
    # into worker 0 (it prints CONNECTED), give it a few batches, kill.
    procs, addrs = spawn_workers(delay=60)
    master = subprocess.Popen(
        [sys.executable, "-m", "bpcc", "master", "--data-dir", str(data),
         "--connect", ",".join(addrs), "--x-seed", "12",
         "--y-out", str(tmp_path / "y.bin")],
        stdout=subprocess.PIPE, text=True,
    )
    assert procs[0].stdout.readline().strip() == "CONNECTED"
    time.sleep(0.6)
    procs[0].kill()
    stdout, _ = master.communicate(timeout=120)
    coded_ok = master.returncode == 0
    metrics = json.loads(stdout.strip().splitlines()[-1]) if coded_ok else {}
    for p in procs:
        p.kill()

    residual = math.inf
    decode_reported = False
    if coded_ok:
        y = read_matrix(tmp_path / "y.bin").reshape(-1)
        A = np.random.default_rng(7).standard_normal((r, m))
        x = np.random.default_rng(12).standard_normal(m)
        y_true = A @ x
        del A
        residual = float(np.max(np.abs(y - y_true)) / np.max(np.abs(y_true)))
        decode_reported = 0.0 < metrics["decode_time"] < metrics["wall_time"]

    # Same cluster uncoded: losing one worker is unrecoverable.
    scenario["scheme"] = "uniform"
    scen_path.write_text(json.dumps(scenario))
    data2 = tmp_path / "data_uncoded"
    out = subprocess.run(
        [sys.executable, "-m", "bpcc", "provision", str(scen_path),
         "--data-dir", str(data2), "--matrix-seed", "7"],
        capture_output=True, text=True, timeout=300,
    )
    assert out.returncode == 0, out.stderr

    def spawn_uncoded():
        procs, addrs = [], []
        for i in range(n):
            p = subprocess.Popen(
                [sys.executable, "-m", "bpcc", "worker", "--listen", "127.0.0.1:0",
                 "--data-dir", str(data2 / f"worker_{i}"), "--delay-factor", "50"],
                stdout=subprocess.PIPE, text=True,
            )
            line = p.stdout.readline().strip()
            procs.append(p)
            addrs.append(line.split()[1])
        return procs, addrs

    procs2, addrs2 = spawn_uncoded()
    master2 = subprocess.Popen(
        [sys.executable, "-m", "bpcc", "master", "--data-dir", str(data2),
         "--connect", ",".join(addrs2), "--x-seed", "12"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    assert procs2[0].stdout.readline().strip() == "CONNECTED"
    time.sleep(0.3)
    procs2[0].kill()
    master2.communicate(timeout=120)
    uncoded_failed = master2.returncode == 1
    for p in procs2:
        p.kill()

    run_elapsed = time.perf_counter() - t_runs
    ok = coded_ok and residual < 1e-8 and decode_reported and uncoded_failed and run_elapsed < 60.0
    report(
        12,
        "cluster run with mid-run kill",
        ok,
        f"residual {residual:.2e}, decode_time reported: {decode_reported}, "
        f"uncoded failure exit: {uncoded_failed}, runs took {run_elapsed:.1f}s",
    )


def test_criterion_13_estimator_recovery():
    mu, alpha = 100.0, 0.01
    w = WorkerProfile(mu, alpha)
    rng = np.random.default_rng(1313)
    samples = [
        TimingSample(r, tuple(sample_task_times(w, r, 1000, rng)))
        for r in (500, 1000, 2000)
    ]
    mu_hat, alpha_hat = fit_shift_and_rate(samples)
    err_mu = abs(mu_hat - mu) / mu
    err_alpha = abs(alpha_hat - alpha) / alpha
    ok = err_mu < 0.05 and err_alpha < 0.05
    report(
        13,
        "parameter estimation recovery",
        ok,
        f"mu error {err_mu:.3%}, alpha error {err_alpha:.3%}",
    )
