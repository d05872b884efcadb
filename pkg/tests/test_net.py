import json
import socket
import threading
import time
from queue import Queue

import numpy as np
import pytest

from bpcc import net
from bpcc.coding import PartialResult, read_matrix
from bpcc.model import WorkerProfile


def start_worker(data_dir, **kwargs):
    ready = Queue()
    result = {}

    def run():
        result["stats"] = net.serve_worker(("127.0.0.1", 0), data_dir, ready=ready, **kwargs)

    t = threading.Thread(target=run, daemon=True)
    t.start()
    addr = ready.get(timeout=5)
    return addr, t, result


def start_cluster(root, n, **kwargs):
    addrs, threads = [], []
    for i in range(n):
        per = {k: (v[i] if isinstance(v, (list, tuple)) else v) for k, v in kwargs.items()}
        addr, t, _ = start_worker(root / f"worker_{i}", **per)
        addrs.append(addr)
        threads.append(t)
    return addrs, threads


class TestFrames:
    def test_batch_result_round_trip(self, rng):
        for _ in range(50):
            part = PartialResult(
                worker_id=int(rng.integers(0, 100)),
                batch_index=int(rng.integers(0, 50)),
                row_start=int(rng.integers(0, 10_000)),
                values=rng.standard_normal(int(rng.integers(1, 64))),
            )
            again = net.unpack_batch_result(net.pack_batch_result(part))
            assert again.worker_id == part.worker_id
            assert again.batch_index == part.batch_index
            assert again.row_start == part.row_start
            assert np.array_equal(again.values, part.values)

    def test_socket_round_trip(self, rng):
        a, b = socket.socketpair()
        with a, b:
            payload = rng.bytes(1000)
            net.send_frame(a, net.KIND_STATS, payload)
            kind, got = net.recv_frame(b)
            assert kind == net.KIND_STATS
            assert got == payload

    def test_wire_layout(self):
        a, b = socket.socketpair()
        with a, b:
            net.send_frame(a, net.KIND_STOP, b"xy")
            raw = b.recv(64)
        assert raw[:4] == (3).to_bytes(4, "little")
        assert raw[4] == net.KIND_STOP
        assert raw[5:] == b"xy"

    def test_oversized_frame_rejected(self):
        a, b = socket.socketpair()
        with a, b:
            a.sendall((100).to_bytes(4, "little"))
            a.sendall(bytes(100))
            with pytest.raises(net.ProtocolError):
                net.recv_frame(b, max_bytes=50)

    def test_truncated_frame_rejected(self):
        a, b = socket.socketpair()
        with b:
            a.sendall((10).to_bytes(4, "little") + b"\x03ab")
            a.close()
            with pytest.raises(net.ProtocolError):
                net.recv_frame(b)

    def test_eof_returns_none(self):
        a, b = socket.socketpair()
        a.close()
        with b:
            assert net.recv_frame(b) is None

    def test_short_batch_payload_rejected(self):
        with pytest.raises(net.ProtocolError):
            net.unpack_batch_result(b"\x00\x00")


@pytest.fixture
def provisioned(rng, tmp_path):
    r, m, n = 200, 30, 4
    A = rng.standard_normal((r, m))
    x = rng.standard_normal(m)
    profiles = [WorkerProfile(20.0, 0.005, 5) for _ in range(n)]
    task, alloc = net.provision(tmp_path, A, "bpcc", r, profiles, rng)
    return tmp_path, A, x, task, alloc


class TestProvision:
    def test_uniform_slices(self, rng, tmp_path):
        A = rng.standard_normal((100, 10))
        profiles = [WorkerProfile(1.0, 1.0, 1) for _ in range(4)]
        task, alloc = net.provision(tmp_path, A, "uniform", 100, profiles, rng)
        assert alloc.loads == (25, 25, 25, 25)
        for i in range(4):
            s = read_matrix(tmp_path / f"worker_{i}" / "slice.bin")
            assert s.shape == (25, 10)
            assert np.array_equal(s, A[25 * i : 25 * (i + 1)])

    def test_bpcc_slice_sizes_match_allocator(self, provisioned):
        root, A, x, task, alloc = provisioned
        for i, load in enumerate(alloc.loads):
            s = read_matrix(root / f"worker_{i}" / "slice.bin")
            assert s.shape[0] == load

    def test_slices_concatenate_to_encoded_matrix(self, provisioned):
        root, A, x, task, alloc = provisioned
        parts = [read_matrix(root / f"worker_{i}" / "slice.bin") for i in range(4)]
        stacked = np.vstack(parts)
        expected = task.coefficients @ A
        assert np.array_equal(stacked, expected)

    def test_reload(self, provisioned):
        root, A, x, task, alloc = provisioned
        task2, alloc2 = net.load_provisioned(root)
        assert alloc2 == alloc
        assert np.array_equal(task2.coefficients, task.coefficients)

    def test_shape_mismatch_rejected(self, rng, tmp_path):
        with pytest.raises(ValueError):
            net.provision(tmp_path, rng.standard_normal((5, 2)), "bpcc", 9,
                          [WorkerProfile(1, 1)], rng)


class TestWorkerProtocol:
    def test_single_batch_then_stats(self, rng, tmp_path):
        A = rng.standard_normal((40, 8))
        profiles = [WorkerProfile(1.0, 0.01, 1)]
        task, alloc = net.provision(tmp_path, A, "uniform", 40, profiles, rng)
        addr, t, box = start_worker(tmp_path / "worker_0")
        with socket.create_connection(addr) as s:
            x = rng.standard_normal(8)
            net.send_frame(s, net.KIND_INPUT_VECTOR, x.astype("<f8").tobytes())
            kind, payload = net.recv_frame(s)
            assert kind == net.KIND_BATCH_RESULT
            part = net.unpack_batch_result(payload)
            np.testing.assert_allclose(part.values, A @ x, rtol=1e-12)
            kind, payload = net.recv_frame(s)
            assert kind == net.KIND_STATS
            assert json.loads(payload)["rows_computed"] == 40
            net.send_frame(s, net.KIND_STOP)
        t.join(timeout=5)
        assert not t.is_alive()

    def test_stop_before_first_batch(self, rng, tmp_path):
        A = rng.standard_normal((50, 4))
        profiles = [WorkerProfile(1.0, 0.01, 5)]
        task, alloc = net.provision(tmp_path, A, "uniform", 50, profiles, rng)
        addr, t, box = start_worker(tmp_path / "worker_0")
        with socket.create_connection(addr) as s:
            x = rng.standard_normal(4)
            # Queue the STOP together with the input: the pre-batch poll
            # must see it before any compute happens.
            net.send_frame(s, net.KIND_INPUT_VECTOR, x.astype("<f8").tobytes())
            net.send_frame(s, net.KIND_STOP)
            time.sleep(0.05)
            kinds = []
            while True:
                frame = net.recv_frame(s)
                if frame is None:
                    break
                kinds.append(frame[0])
        t.join(timeout=5)
        assert net.KIND_BATCH_RESULT not in kinds
        assert box["stats"].batches_computed == 0

    def test_stop_mid_run_bounds_batches(self, rng, tmp_path):
        # Slow batches; STOP lands while batch 3 is computing, so exactly
        # two results come back. Uncoded schemes are single-batch, so a
        # coded allocation provides the batched slice.
        A = rng.standard_normal((50, 400))
        profiles = [WorkerProfile(1.0, 0.01, 5)]
        task, alloc = net.provision(tmp_path, A, "bpcc", 50, profiles, rng)
        assert alloc.batch_counts[0] == 5
        addr, t, box = start_worker(tmp_path / "worker_0", delay_factor=400.0)
        with socket.create_connection(addr) as s:
            x = rng.standard_normal(400)
            net.send_frame(s, net.KIND_INPUT_VECTOR, x.astype("<f8").tobytes())
            results = 0
            frame = net.recv_frame(s)
            while frame is not None and frame[0] == net.KIND_BATCH_RESULT:
                results += 1
                if results == 2:
                    net.send_frame(s, net.KIND_STOP)
                frame = net.recv_frame(s)
        t.join(timeout=10)
        assert box["stats"].batches_computed in (2, 3)
        assert box["stats"].stopped_early

    def test_delay_factor_scales_spacing(self, rng, tmp_path):
        A = rng.standard_normal((60, 600))
        profiles = [WorkerProfile(1.0, 0.01, 6)]
        net.provision(tmp_path, A, "bpcc", 60, profiles, rng)

        def arrival_gaps(delay):
            addr, t, _ = start_worker(tmp_path / "worker_0", delay_factor=delay)
            gaps = []
            with socket.create_connection(addr) as s:
                x = rng.standard_normal(600)
                net.send_frame(s, net.KIND_INPUT_VECTOR, x.astype("<f8").tobytes())
                prev = time.perf_counter()
                for _ in range(6):
                    kind, _p = net.recv_frame(s)
                    assert kind == net.KIND_BATCH_RESULT
                    now = time.perf_counter()
                    gaps.append(now - prev)
                    prev = now
                net.send_frame(s, net.KIND_STOP)
            t.join(timeout=10)
            return float(np.median(gaps))

        base = arrival_gaps(200.0)
        slowed = arrival_gaps(600.0)
        assert slowed > 1.5 * base


class TestRunMaster:
    def test_end_to_end_coded(self, provisioned):
        root, A, x, task, alloc = provisioned
        addrs, threads = start_cluster(root, 4)
        y, metrics = net.run_master(addrs, task, x)
        for t in threads:
            t.join(timeout=5)
        y_true = A @ x
        assert np.max(np.abs(y - y_true)) / np.max(np.abs(y_true)) < 1e-8
        assert metrics.success
        assert 0 <= metrics.decode_time <= metrics.wall_time

    def test_identity_single_worker(self, rng, tmp_path):
        A = rng.standard_normal((30, 5))
        x = rng.standard_normal(5)
        task, alloc = net.provision(tmp_path, A, "uniform", 30, [WorkerProfile(1, 0.01, 3)], rng)
        addrs, threads = start_cluster(tmp_path, 1)
        y, metrics = net.run_master(addrs, task, x)
        for t in threads:
            t.join(timeout=5)
        np.testing.assert_allclose(y, A @ x, rtol=1e-10)

    def test_survives_silent_worker_with_redundancy(self, provisioned):
        root, A, x, task, alloc = provisioned
        addrs, threads = start_cluster(root, 4, drop=[True, False, False, False])
        y, metrics = net.run_master(addrs, task, x)
        for t in threads:
            t.join(timeout=5)
        y_true = A @ x
        assert np.max(np.abs(y - y_true)) / np.max(np.abs(y_true)) < 1e-8
        assert metrics.batches_delivered[0] == 0

    def test_uncoded_fails_on_silent_worker(self, rng, tmp_path):
        A = rng.standard_normal((100, 10))
        x = rng.standard_normal(10)
        profiles = [WorkerProfile(1.0, 0.01, 1) for _ in range(4)]
        task, alloc = net.provision(tmp_path, A, "uniform", 100, profiles, rng)
        addrs, threads = start_cluster(tmp_path, 4, drop=[False, False, True, False])
        with pytest.raises(net.RunFailure):
            net.run_master(addrs, task, x, threshold=task.q)
        for t in threads:
            t.join(timeout=5)

    def test_stop_limits_total_compute(self, rng, tmp_path):
        # Slowed workers: STOP lands mid-run, so the cluster computes
        # fewer rows than the provisioned total.
        r, m, n = 200, 400, 4
        A = rng.standard_normal((r, m))
        x = rng.standard_normal(m)
        profiles = [WorkerProfile(20.0, 0.005, 10) for _ in range(n)]
        task, alloc = net.provision(tmp_path, A, "bpcc", r, profiles, rng)
        addrs, threads = start_cluster(tmp_path, n, delay_factor=50.0)
        y, metrics = net.run_master(addrs, task, x)
        for t in threads:
            t.join(timeout=10)
        assert metrics.success
        assert sum(metrics.rows_computed.values()) < task.q
