"""Time-parallel execution of the MGRIT cycles.

Each worker owns a contiguous block of every level's time points (the
coarse blocks are the C-point images of the fine blocks) and runs the same
cycle code as the serial driver on its local arrays.  Workers interact
only through

* nearest-neighbor boundary-state messages (one State per relaxation or
  residual sweep, counted per link),
* one ordered norm reduction per cycle (per-point values concatenated in
  rank order, so the accept/reject decision is bitwise identical for every
  worker count), and
* a gather/broadcast pair around the redundant coarsest-level solve.

The worker model is in-process threads; the exchange contract (payload =
one State per sweep boundary, nearest-neighbor only) is what a distributed
backend would have to implement.  ``pack_state``/``unpack_state`` define
the wire layout for such a backend.
"""

from __future__ import annotations

import queue
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .mgrit import Hierarchy, LevelView, MgritResult, SpaceTimeFunction, _iterate

__all__ = [
    "Partition",
    "partition",
    "build_partition",
    "run_parallel",
    "WorkerFailure",
    "pack_state",
    "unpack_state",
    "MessageStats",
]


class WorkerFailure(RuntimeError):
    def __init__(self, worker: int, cause: Exception):
        super().__init__(f"worker {worker} failed: {cause}")
        self.worker = worker
        self.cause = cause


def partition(points: int, workers: int) -> list:
    """Balanced contiguous index ranges [(lo, hi), ...]; sizes differ by <= 1."""
    if not 1 <= workers <= points:
        raise ValueError(f"need 1 <= workers <= points, got {workers} for {points} points")
    base, extra = divmod(points, workers)
    ranges = []
    lo = 0
    for w in range(workers):
        hi = lo + base + (1 if w < extra else 0)
        ranges.append((lo, hi))
        lo = hi
    return ranges


@dataclass(frozen=True)
class Partition:
    """Per-level contiguous ownership ranges for every worker.

    A worker owns a coarse point exactly when it owns the corresponding
    fine C-point, so level ranges stay aligned across the hierarchy.
    """

    workers: int
    level_ranges: list

    def ranges_for(self, worker: int) -> list:
        return [lr[worker] for lr in self.level_ranges]


def build_partition(hier: Hierarchy, workers: int) -> Partition:
    finest = partition(hier.finest.n_points, workers)
    level_ranges = [finest]
    for l in range(1, hier.n_levels):
        m = hier.levels[l - 1].m
        prev = level_ranges[-1]
        cur = []
        for lo, hi in prev:
            clo = -(-lo // m)
            chi = -(-hi // m)
            if chi <= clo:
                raise ValueError(
                    f"worker block [{lo},{hi}) owns no point of level {l}; "
                    f"use fewer workers")
            cur.append((clo, chi))
        level_ranges.append(cur)
    return Partition(workers, level_ranges)


# --------------------------------------------------------------------------
# message layout of one State (wire format for a distributed backend)
# --------------------------------------------------------------------------

def pack_state(level: int, time_index: int, a: np.ndarray, current: float) -> bytes:
    """Little-endian payload: int32 level, int32 time index, then [a..., i]."""
    payload = np.empty(a.size + 1)
    payload[:-1] = a
    payload[-1] = current
    return struct.pack("<ii", level, time_index) + payload.astype("<f8").tobytes()


def unpack_state(blob: bytes):
    level, time_index = struct.unpack_from("<ii", blob)
    payload = np.frombuffer(blob, dtype="<f8", offset=8)
    return level, time_index, payload[:-1].copy(), float(payload[-1])


# --------------------------------------------------------------------------
# thread runtime
# --------------------------------------------------------------------------

@dataclass
class MessageStats:
    sent: int = 0
    received: int = 0
    sent_payload_indices: list = field(default_factory=list)


class _ThreadLink:
    """Directed neighbor channel of one level for one worker pair."""

    def __init__(self, to_right: queue.SimpleQueue | None,
                 from_left: queue.SimpleQueue | None,
                 stats: MessageStats, boundary_index: int, trace: bool):
        self._to_right = to_right
        self._from_left = from_left
        self.stats = stats
        self._boundary_index = boundary_index
        self._trace = trace

    def send_right(self, vec: np.ndarray) -> None:
        assert self._to_right is not None, "no successor to send to"
        self.stats.sent += 1
        if self._trace:
            self.stats.sent_payload_indices.append(self._boundary_index)
        self._to_right.put(vec)

    def recv_left(self) -> np.ndarray:
        assert self._from_left is not None, "no predecessor to receive from"
        self.stats.received += 1
        return self._from_left.get()


class _ThreadRuntime:
    """Rank-ordered allgather over a shared slot table (two-phase barrier)."""

    def __init__(self, rank: int, size: int, slots: list, barrier: threading.Barrier):
        self.rank = rank
        self.size = size
        self._slots = slots
        self._barrier = barrier

    def allgather(self, obj):
        self._slots[self.rank] = obj
        self._barrier.wait()
        out = list(self._slots)
        self._barrier.wait()
        return out


def run_parallel(hier: Hierarchy, g: SpaceTimeFunction, cycle: str = "V",
                 tol: float = 1.0e-6, max_iter: int = 100, workers: int = 1,
                 trace_messages: bool = False):
    """Solve like ``mgrit.solve`` with ``workers`` time-parallel workers.

    Returns (MgritResult, per-worker MessageStats).  The residual history
    and the final iterate are bitwise identical to the single-worker solve.
    Worker failures surface as WorkerFailure with the worker id.
    """
    if not tol > 0.0:
        raise ValueError("tolerance must be positive")
    part = build_partition(hier, workers)
    n_rows = hier.problem.n_rows

    # per-level neighbor queues: edge w -> w+1
    level_queues = [[queue.SimpleQueue() for _ in range(workers - 1)]
                    for _ in hier.levels]
    slots = [None] * workers
    barrier = threading.Barrier(workers)
    stats = [MessageStats() for _ in range(workers)]

    # worker-local level arrays; level 0 is seeded from g
    local = []
    for w in range(workers):
        views = []
        for l, lev in enumerate(hier.levels):
            lo, hi = part.level_ranges[l][w]
            if l == 0:
                u_arr = g.U[lo:hi].copy()
                g_arr = g.G[lo:hi].copy()
            else:
                u_arr = np.zeros((hi - lo, n_rows))
                g_arr = np.zeros((hi - lo, n_rows))
            link = _ThreadLink(
                level_queues[l][w] if w < workers - 1 else None,
                level_queues[l][w - 1] if w > 0 else None,
                stats[w], hi - 1, trace_messages)
            views.append(LevelView(hier.level_ops[l], lev.m, lev.n_points,
                                   lo, hi, u_arr, g_arr, link))
        local.append(views)

    results = [None] * workers
    errors = [None] * workers

    def body(w: int) -> None:
        try:
            rt = _ThreadRuntime(w, workers, slots, barrier)
            results[w] = _iterate(local[w], rt, cycle, tol, max_iter)
        except Exception as exc:  # noqa: BLE001 - surfaced as WorkerFailure
            errors[w] = exc
            barrier.abort()

    threads = [threading.Thread(target=body, args=(w,), name=f"mgrit-worker-{w}")
               for w in range(workers)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    total = time.perf_counter() - t0
    for w, exc in enumerate(errors):
        if exc is not None and not isinstance(exc, threading.BrokenBarrierError):
            raise WorkerFailure(w, exc) from exc

    converged, initial, history, seconds = results[0]
    U = np.concatenate([local[w][0].U for w in range(workers)], axis=0)
    G = np.concatenate([local[w][0].G for w in range(workers)], axis=0)
    stf = SpaceTimeFunction(0, U, G)
    monotone = all(b < a for a, b in zip([initial] + history[:-1], history))
    result = MgritResult(converged, len(history), history, initial, stf,
                         seconds, monotone)
    result.total_seconds = total
    return result, stats
