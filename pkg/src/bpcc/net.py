"""Master/worker execution of a coded matrix-vector product over TCP.

A worker process owns a pre-provisioned slice of the encoded matrix. The
master connects, broadcasts the input vector, and workers stream one
result frame per batch as it finishes; the master feeds an incremental
decoder and broadcasts STOP the moment enough rows have arrived, so
workers abandon whatever batches remain.

Frames are length-prefixed: a little-endian u32 byte count covering one
kind byte plus the payload. BATCH_RESULT payloads are fixed-layout
binary; HELLO and STATS carry small JSON bodies.
"""

from __future__ import annotations

import json
import select
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from queue import Empty, Queue

import numpy as np

from .allocation import Allocation, allocate
from .coding import (
    CodedTask,
    IncrementalDecoder,
    PartialResult,
    encode_dense,
    encode_identity,
    encode_lt,
    partition,
    read_matrix,
    recovery_threshold,
    save_task,
    load_task,
    write_matrix,
)
from .model import WorkerProfile

KIND_HELLO = 0x01
KIND_INPUT_VECTOR = 0x02
KIND_BATCH_RESULT = 0x03
KIND_STOP = 0x04
KIND_STATS = 0x05

_LEN = struct.Struct("<I")
_BATCH_HEADER = struct.Struct("<IIII")

MAX_FRAME_BYTES = 256 * 1024 * 1024


class ProtocolError(RuntimeError):
    """Malformed or oversized frame on the wire."""


class RunFailure(RuntimeError):
    """Live workers cannot supply enough rows to reach the threshold."""


def send_frame(sock: socket.socket, kind: int, payload: bytes = b"") -> None:
    sock.sendall(_LEN.pack(len(payload) + 1) + bytes([kind]) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(
    sock: socket.socket, max_bytes: int = MAX_FRAME_BYTES
) -> tuple[int, bytes] | None:
    """One frame, or None on orderly EOF."""
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (length,) = _LEN.unpack(head)
    if length < 1:
        raise ProtocolError("frame length must cover the kind byte")
    if length > max_bytes:
        raise ProtocolError(f"frame of {length} bytes exceeds cap {max_bytes}")
    body = _recv_exact(sock, length)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    return body[0], body[1:]


def pack_batch_result(part: PartialResult) -> bytes:
    values = np.ascontiguousarray(part.values, dtype="<f8")
    return (
        _BATCH_HEADER.pack(
            part.worker_id, part.batch_index, part.row_start, len(values)
        )
        + values.tobytes()
    )


def unpack_batch_result(payload: bytes) -> PartialResult:
    if len(payload) < _BATCH_HEADER.size:
        raise ProtocolError("short BATCH_RESULT payload")
    worker_id, batch_index, row_start, row_count = _BATCH_HEADER.unpack_from(payload)
    values = np.frombuffer(payload, dtype="<f8", offset=_BATCH_HEADER.size)
    if len(values) != row_count:
        raise ProtocolError(
            f"BATCH_RESULT declares {row_count} rows, carries {len(values)}"
        )
    return PartialResult(
        worker_id=worker_id,
        batch_index=batch_index,
        row_start=row_start,
        values=values,
    )


@dataclass
class RunMetrics:
    """Timing and delivery accounting for one master run."""

    wall_time: float
    decode_time: float
    batches_delivered: dict[int, int]
    rows_computed: dict[int, int] = field(default_factory=dict)
    success: bool = True

    def to_dict(self) -> dict:
        return {
            "wall_time": self.wall_time,
            "decode_time": self.decode_time,
            "batches_delivered": {str(k): v for k, v in self.batches_delivered.items()},
            "rows_computed": {str(k): v for k, v in self.rows_computed.items()},
            "success": self.success,
        }


# ---------------------------------------------------------------------------
# Worker side
# ---------------------------------------------------------------------------


@dataclass
class WorkerStats:
    worker_id: int
    batches_computed: int
    rows_computed: int
    stopped_early: bool


def _stop_requested(sock: socket.socket) -> bool:
    """Non-blocking poll for a STOP frame between batches."""
    readable, _, _ = select.select([sock], [], [], 0.0)
    if not readable:
        return False
    frame = recv_frame(sock)
    return frame is None or frame[0] == KIND_STOP


def serve_worker(
    bind_address: tuple[str, int],
    data_dir: str | Path,
    delay_factor: float = 1.0,
    drop: bool = False,
    ready: "Queue | None" = None,
) -> WorkerStats:
    """Serve one master session from a provisioned data directory.

    Computes batches strictly in order, emitting one BATCH_RESULT as each
    finishes, and polls for STOP between batches. delay_factor > 1
    stretches the observed per-batch time by sleeping after computing;
    drop computes but never sends results (a silent straggler). Returns
    after STOP or disconnect.

    When a ready queue is given, the bound address is put on it at
    listen time and the string "connected" once the master dials in.
    """
    data_dir = Path(data_dir)
    meta = json.loads((data_dir / "meta.json").read_text())
    worker_id = int(meta["worker_id"])
    row_start = int(meta["row_start"])
    bounds = [int(b) for b in meta["batch_bounds"]]
    rows = read_matrix(data_dir / "slice.bin", mmap=True)

    lsock = socket.create_server(bind_address)
    if ready is not None:
        ready.put(lsock.getsockname())
    try:
        conn, _addr = lsock.accept()
    finally:
        lsock.close()
    if ready is not None:
        ready.put("connected")
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    batches_done = 0
    rows_done = 0
    stopped = False
    try:
        with conn:
            x = None
            while x is None:
                frame = recv_frame(conn)
                if frame is None:
                    return WorkerStats(worker_id, 0, 0, True)
                kind, payload = frame
                if kind == KIND_HELLO:
                    send_frame(
                        conn,
                        KIND_HELLO,
                        json.dumps(
                            {"worker_id": worker_id, "rows": rows.shape[0]}
                        ).encode(),
                    )
                elif kind == KIND_INPUT_VECTOR:
                    x = np.frombuffer(payload, dtype="<f8")
                elif kind == KIND_STOP:
                    return WorkerStats(worker_id, 0, 0, True)
                else:
                    raise ProtocolError(f"unexpected frame kind {kind:#x}")

            for b in range(len(bounds) - 1):
                if _stop_requested(conn):
                    stopped = True
                    break
                t0 = time.perf_counter()
                block = np.asarray(rows[bounds[b] : bounds[b + 1]])
                values = block @ x
                elapsed = time.perf_counter() - t0
                if delay_factor > 1.0:
                    time.sleep((delay_factor - 1.0) * elapsed)
                batches_done += 1
                rows_done += len(values)
                if not drop:
                    send_frame(
                        conn,
                        KIND_BATCH_RESULT,
                        pack_batch_result(
                            PartialResult(worker_id, b, row_start + bounds[b], values)
                        ),
                    )
            if drop:
                # A silent straggler: nothing was sent and nothing will be.
                # Closing the connection lets the master write this worker off.
                return WorkerStats(worker_id, batches_done, rows_done, stopped)
            send_frame(
                conn,
                KIND_STATS,
                json.dumps(
                    {
                        "worker_id": worker_id,
                        "batches_computed": batches_done,
                        "rows_computed": rows_done,
                    }
                ).encode(),
            )
            if not stopped:
                # Hold the socket open until the master stops or hangs up, so
                # late STOPs don't hit a closed connection.
                while True:
                    frame = recv_frame(conn)
                    if frame is None or frame[0] == KIND_STOP:
                        break
    except (ConnectionError, BrokenPipeError, OSError):
        pass
    return WorkerStats(worker_id, batches_done, rows_done, stopped)


# ---------------------------------------------------------------------------
# Master side
# ---------------------------------------------------------------------------


def _reader(sock: socket.socket, worker_id: int, out: Queue) -> None:
    try:
        while True:
            frame = recv_frame(sock)
            if frame is None:
                break
            out.put((worker_id, *frame))
    except (ConnectionError, ProtocolError, OSError):
        pass
    out.put((worker_id, None, b""))


def run_master(
    worker_addresses: list[tuple[str, int]],
    task: CodedTask,
    x: np.ndarray,
    threshold: int | None = None,
    connect_timeout: float = 10.0,
) -> tuple[np.ndarray, RunMetrics]:
    """Distribute x, stream results, decode, stop workers, report metrics.

    A worker that disconnects is carried as a silent straggler: the run
    continues on the others and fails (RunFailure) only if the remaining
    live rows cannot reach the threshold.
    """
    if threshold is None:
        threshold = recovery_threshold(task)
    socks: dict[int, socket.socket] = {}
    try:
        for wid, addr in enumerate(worker_addresses):
            s = socket.create_connection(addr, timeout=connect_timeout)
            s.settimeout(None)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            socks[wid] = s
            send_frame(s, KIND_HELLO, json.dumps({"worker_id": wid}).encode())

        frames: Queue = Queue()
        threads = [
            threading.Thread(target=_reader, args=(s, wid, frames), daemon=True)
            for wid, s in socks.items()
        ]
        for t in threads:
            t.start()

        payload = np.ascontiguousarray(x, dtype="<f8").tobytes()
        t_start = time.perf_counter()
        for s in socks.values():
            send_frame(s, KIND_INPUT_VECTOR, payload)

        decoder = IncrementalDecoder(task)
        decode_time = 0.0
        batches: dict[int, int] = {wid: 0 for wid in socks}
        stats: dict[int, int] = {}
        live = set(socks)
        stop_sent = False
        undeliverable = {
            wr.worker_id: wr.load for wr in task.worker_ranges
        }

        def send_stop() -> None:
            for s in socks.values():
                try:
                    send_frame(s, KIND_STOP)
                except OSError:
                    pass

        y: np.ndarray | None = None
        while live:
            wid, kind, payload = frames.get()
            if kind is None:
                live.discard(wid)
            elif kind == KIND_BATCH_RESULT:
                part = unpack_batch_result(payload)
                undeliverable[part.worker_id] = max(
                    0, undeliverable[part.worker_id] - len(part.values)
                )
                t0 = time.perf_counter()
                decoder.feed(part)
                decode_time += time.perf_counter() - t0
                batches[part.worker_id] += 1
                if not stop_sent and decoder.rows_received >= threshold:
                    stop_sent = True
                    send_stop()
                if decoder.rows_received >= threshold and decoder.complete:
                    t0 = time.perf_counter()
                    y = decoder.try_decode()
                    decode_time += time.perf_counter() - t0
                    if y is not None:
                        break
            elif kind == KIND_STATS:
                # The worker is done producing; whatever it never sent is gone.
                info = json.loads(payload.decode())
                stats[int(info["worker_id"])] = int(info["rows_computed"])
                undeliverable[wid] = 0
            elif kind == KIND_HELLO:
                pass
            # Nothing more can arrive once every live worker has either
            # delivered its full slice or declared itself finished.
            pending = sum(undeliverable.get(w, 0) for w in live)
            if decoder.rows_received + pending < threshold:
                break
            if pending == 0:
                if decoder.rows_received >= threshold:
                    t0 = time.perf_counter()
                    y = decoder.try_decode()
                    decode_time += time.perf_counter() - t0
                break

        wall = time.perf_counter() - t_start
        if not stop_sent:
            send_stop()
        if y is not None:
            # Brief drain for STATS so per-worker compute accounting is
            # complete; workers acknowledge STOP promptly or hang up.
            deadline = time.monotonic() + 2.0
            waiting = {w for w in live if w not in stats}
            while waiting:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                try:
                    wid, kind, payload = frames.get(timeout=remaining)
                except Empty:
                    break
                if kind is None:
                    waiting.discard(wid)
                elif kind == KIND_STATS:
                    info = json.loads(payload.decode())
                    stats[int(info["worker_id"])] = int(info["rows_computed"])
                    waiting.discard(wid)
        if y is None:
            metrics = RunMetrics(
                wall_time=wall,
                decode_time=decode_time,
                batches_delivered=batches,
                rows_computed=stats,
                success=False,
            )
            raise RunFailure(
                f"received {decoder.rows_received} rows; threshold {threshold} "
                f"unreachable with live workers {sorted(live)}",
                metrics,
            )
        metrics = RunMetrics(
            wall_time=wall,
            decode_time=decode_time,
            batches_delivered=batches,
            rows_computed=stats,
            success=True,
        )
        return y, metrics
    finally:
        for s in socks.values():
            try:
                s.close()
            except OSError:
                pass


# ---------------------------------------------------------------------------
# Provisioning
# ---------------------------------------------------------------------------


def provision(
    root: str | Path,
    A: np.ndarray,
    scheme: str,
    r: int,
    profiles: list[WorkerProfile],
    rng: np.random.Generator,
    codec: str = "dense",
    epsilon: float = 0.13,
) -> tuple[CodedTask, Allocation]:
    """Allocate, encode, and write every worker's slice to disk.

    Layout: <root>/master holds the decode metadata, <root>/worker_<i>
    holds slice.bin plus meta.json. Uncoded schemes store plain rows of A
    (identity coefficients), so their threshold equals the full row count.
    """
    if A.shape[0] != r:
        raise ValueError(f"A has {A.shape[0]} rows, expected r={r}")
    root = Path(root)
    alloc = allocate(scheme, r, profiles)
    q = alloc.total_load
    if scheme in ("uniform", "load_balanced"):
        task, A_hat = encode_identity(A)
    elif codec == "dense":
        task, A_hat = encode_dense(A, q, rng)
    elif codec == "lt":
        task, A_hat = encode_lt(A, q, epsilon, rng)
    else:
        raise ValueError(f"unknown codec {codec!r}")
    task = partition(task, list(alloc.loads), list(alloc.batch_counts))
    save_task(task, root / "master")
    (root / "master" / "allocation.json").write_text(json.dumps(alloc.to_dict()))
    (root / "master" / "run.json").write_text(
        json.dumps(
            {
                "m": int(A.shape[1]),
                "scheme": alloc.scheme,
                "threshold": recovery_threshold(task),
            }
        )
    )
    for wr in task.worker_ranges:
        wdir = root / f"worker_{wr.worker_id}"
        wdir.mkdir(parents=True, exist_ok=True)
        write_matrix(wdir / "slice.bin", A_hat[wr.start : wr.stop])
        (wdir / "meta.json").write_text(
            json.dumps(
                {
                    "worker_id": wr.worker_id,
                    "row_start": wr.start,
                    "row_stop": wr.stop,
                    "batch_bounds": list(wr.batch_bounds),
                    "m": int(A.shape[1]),
                    "codec": task.codec,
                }
            )
        )
    return task, alloc


def load_provisioned(root: str | Path) -> tuple[CodedTask, Allocation]:
    root = Path(root)
    task = load_task(root / "master")
    alloc = Allocation.from_dict(
        json.loads((root / "master" / "allocation.json").read_text())
    )
    return task, alloc
