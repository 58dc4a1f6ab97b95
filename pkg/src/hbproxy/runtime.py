"""In-process message-passing substrate.

Ranks are concurrent threads inside one interpreter.  Point-to-point
transfers match exactly on (src, dst, tag); at most one message per triple
may be in flight, which is what lets several threads of one rank drive the
layer concurrently.  Sends are buffered (they complete immediately), so the
usual post-all-sends-then-receive pattern cannot deadlock.

The only collective is an element-wise global sum whose accumulation order
is fixed: rank 0's buffer plus rank 1's plus ... regardless of arrival
order.  That costs parallelism at scale but buys bitwise reproducibility,
which the byte-identity checks elsewhere in the package require.

An optional scheduling-jitter hook injects short random sleeps into
post_send/post_recv so tests can shake out ordering assumptions.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import CollectiveError, ProtocolError, RankFailure, RunAborted

_WAIT_TIMEOUT = 120.0  # seconds before a stuck wait aborts the whole run


@dataclass(frozen=True)
class Envelope:
    src: int
    dst: int
    tag: int
    payload: np.ndarray


@dataclass(frozen=True)
class CounterSnapshot:
    msgs_sent: int
    bytes_sent: int
    msgs_received: int
    collective_calls: int
    write_ops: int
    team_activations: int


class Counters:
    """Per-rank monotonic counters; updates are lock-protected."""

    def __init__(self):
        self._lock = threading.Lock()
        self.msgs_sent = 0
        self.bytes_sent = 0
        self.msgs_received = 0
        self.collective_calls = 0
        self.write_ops = 0
        self.team_activations = 0

    def add_send(self, nbytes):
        with self._lock:
            self.msgs_sent += 1
            self.bytes_sent += nbytes

    def add_recv(self):
        with self._lock:
            self.msgs_received += 1

    def add_collective(self):
        with self._lock:
            self.collective_calls += 1

    def add_write_ops(self, n):
        with self._lock:
            self.write_ops += n

    def add_activation(self):
        with self._lock:
            self.team_activations += 1

    def snapshot(self):
        with self._lock:
            return CounterSnapshot(self.msgs_sent, self.bytes_sent,
                                   self.msgs_received, self.collective_calls,
                                   self.write_ops, self.team_activations)


class _PendingRecv:
    __slots__ = ("event", "payload", "error")

    def __init__(self):
        self.event = threading.Event()
        self.payload = None
        self.error = None


class _CollectiveRound:
    __slots__ = ("buffers", "arrived", "event", "result", "error", "length", "taken")

    def __init__(self, nranks):
        self.buffers = [None] * nranks
        self.arrived = 0
        self.taken = 0
        self.event = threading.Event()
        self.result = None
        self.error = None
        self.length = None


class Fabric:
    """Shared matching tables for one run: in-flight messages plus collectives."""

    def __init__(self, nranks, jitter_seed=None):
        self.nranks = nranks
        self.lock = threading.Lock()
        self.inflight = {}  # (src, dst, tag) -> Envelope | _PendingRecv
        self.sent = 0
        self.received = 0
        self.rounds = {}  # sequence -> _CollectiveRound
        self.aborted = None
        self._jitter = random.Random(jitter_seed) if jitter_seed is not None else None
        self._jitter_lock = threading.Lock()

    def maybe_jitter(self):
        if self._jitter is None:
            return
        with self._jitter_lock:
            delay = self._jitter.random() * 50e-6
        time.sleep(delay)

    def abort(self, exc):
        with self.lock:
            if self.aborted is None:
                self.aborted = exc
            for entry in self.inflight.values():
                if isinstance(entry, _PendingRecv):
                    entry.error = self.aborted
                    entry.event.set()
            for rnd in self.rounds.values():
                if rnd.error is None:
                    rnd.error = self.aborted
                rnd.event.set()

    def check_drained(self):
        with self.lock:
            if self.inflight:
                keys = sorted(self.inflight)[:5]
                raise ProtocolError(
                    f"{len(self.inflight)} message(s) never matched, e.g. {keys}")
            if self.sent != self.received:
                raise ProtocolError(
                    f"sent {self.sent} envelopes but delivered {self.received}")


class SendHandle:
    """Buffered sends complete at post time; wait() is a no-op for symmetry."""

    __slots__ = ()

    def wait(self):
        return None


class RecvHandle:
    __slots__ = ("_fabric", "_pending", "_counters", "_counted", "key")

    def __init__(self, fabric, pending, key, counters):
        self._fabric = fabric
        self._pending = pending
        self._counters = counters
        self._counted = False
        self.key = key

    def wait(self):
        pend = self._pending
        if not pend.event.wait(_WAIT_TIMEOUT):
            exc = ProtocolError(f"recv {self.key} timed out")
            self._fabric.abort(exc)
            raise exc
        if pend.error is not None:
            raise RunAborted(f"recv {self.key} aborted") from pend.error
        if not self._counted:
            self._counted = True
            self._counters.add_recv()
        return pend.payload


def wait_all(handles):
    """Wait for every handle; returns the received payloads (None for sends)."""
    return [h.wait() for h in handles]


class RankContext:
    """Handle a rank program uses to talk to its peers (and count what it did)."""

    def __init__(self, fabric, rank):
        self.fabric = fabric
        self.rank = rank
        self.nranks = fabric.nranks
        self.counters = Counters()
        self._coll_seq = 0
        self._coll_lock = threading.Lock()

    # -- point to point ----------------------------------------------------

    def post_send(self, dst, tag, payload):
        fabric = self.fabric
        payload = np.ascontiguousarray(payload, dtype=np.float64).ravel()
        if not 0 <= dst < self.nranks:
            raise ProtocolError(f"destination rank {dst} out of range")
        if dst == self.rank:
            raise ProtocolError("self-sends are not allowed (src == dst)")
        if payload.size < 1:
            raise ProtocolError("empty payload")
        if tag < 0:
            raise ProtocolError(f"negative tag {tag}")
        fabric.maybe_jitter()
        key = (self.rank, dst, tag)
        env = Envelope(self.rank, dst, tag, payload.copy())
        with fabric.lock:
            if fabric.aborted is not None:
                raise RunAborted("send on aborted run") from fabric.aborted
            entry = fabric.inflight.get(key)
            if isinstance(entry, Envelope):
                raise ProtocolError(f"duplicate in-flight tag: send {key}")
            fabric.sent += 1
            if isinstance(entry, _PendingRecv):
                del fabric.inflight[key]
                fabric.received += 1
                entry.payload = env.payload
                entry.event.set()
            else:
                fabric.inflight[key] = env
        self.counters.add_send(payload.size * 8)
        return SendHandle()

    def post_recv(self, src, tag):
        fabric = self.fabric
        if not 0 <= src < self.nranks:
            raise ProtocolError(f"source rank {src} out of range")
        if src == self.rank:
            raise ProtocolError("self-receives are not allowed (src == dst)")
        if tag < 0:
            raise ProtocolError(f"negative tag {tag}")
        fabric.maybe_jitter()
        key = (src, self.rank, tag)
        pend = _PendingRecv()
        with fabric.lock:
            if fabric.aborted is not None:
                raise RunAborted("recv on aborted run") from fabric.aborted
            entry = fabric.inflight.get(key)
            if isinstance(entry, _PendingRecv):
                raise ProtocolError(f"duplicate in-flight tag: recv {key}")
            if isinstance(entry, Envelope):
                del fabric.inflight[key]
                fabric.received += 1
                pend.payload = entry.payload
                pend.event.set()
            else:
                fabric.inflight[key] = pend
        return RecvHandle(fabric, pend, key, self.counters)

    # -- collectives --------------------------------------------------------

    def allreduce_sum(self, buffer):
        """Element-wise global sum, accumulated in ascending rank order."""
        fabric = self.fabric
        buf = np.ascontiguousarray(buffer, dtype=np.float64).ravel()
        self.counters.add_collective()
        with self._coll_lock:
            seq = self._coll_seq
            self._coll_seq += 1
        with fabric.lock:
            if fabric.aborted is not None:
                raise RunAborted("collective on aborted run") from fabric.aborted
            rnd = fabric.rounds.get(seq)
            if rnd is None:
                rnd = _CollectiveRound(self.nranks)
                rnd.length = buf.size
                fabric.rounds[seq] = rnd
            if rnd.error is None and buf.size != rnd.length:
                rnd.error = CollectiveError(
                    f"collective #{seq}: rank {self.rank} brought length "
                    f"{buf.size}, expected {rnd.length}")
            rnd.buffers[self.rank] = buf
            rnd.arrived += 1
            if rnd.arrived == self.nranks:
                if rnd.error is None:
                    acc = rnd.buffers[0].copy()
                    for r in range(1, self.nranks):
                        acc += rnd.buffers[r]
                    rnd.result = acc
                rnd.event.set()
        if not rnd.event.wait(_WAIT_TIMEOUT):
            exc = CollectiveError(f"collective #{seq} timed out on rank {self.rank}")
            fabric.abort(exc)
            raise exc
        if rnd.error is not None:
            if isinstance(rnd.error, CollectiveError):
                raise rnd.error
            raise RunAborted("collective aborted") from rnd.error
        result = rnd.result.copy()
        with fabric.lock:
            rnd.taken += 1
            if rnd.taken == self.nranks:
                del fabric.rounds[seq]
        return result


@dataclass
class RunResult:
    values: list
    counters: list  # CounterSnapshot per rank

    @property
    def total_msgs(self):
        return sum(c.msgs_sent for c in self.counters)

    @property
    def total_bytes(self):
        return sum(c.bytes_sent for c in self.counters)

    @property
    def total_write_ops(self):
        return sum(c.write_ops for c in self.counters)


def spawn_ranks(nranks, program, jitter_seed=None):
    """Run `program(ctx)` once per rank on concurrent threads.

    Returns per-rank results and counter snapshots.  If any rank raises, the
    fabric is aborted (waking blocked peers) and a RankFailure naming the
    first failing rank is raised.  A clean run additionally asserts that no
    message was lost or duplicated.
    """
    if nranks < 1:
        raise ProtocolError(f"nranks must be >= 1, got {nranks}")
    fabric = Fabric(nranks, jitter_seed=jitter_seed)
    contexts = [RankContext(fabric, r) for r in range(nranks)]
    results = [None] * nranks
    errors = [None] * nranks

    def run_rank(rank):
        try:
            results[rank] = program(contexts[rank])
        except BaseException as exc:  # noqa: BLE001 - repropagated below
            errors[rank] = exc
            fabric.abort(exc)

    threads = [threading.Thread(target=run_rank, args=(r,), name=f"rank-{r}")
               for r in range(nranks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    failed = [(r, e) for r, e in enumerate(errors) if e is not None]
    if failed:
        # prefer the original fault over secondary RunAborted wakeups
        primary = [(r, e) for r, e in failed if not isinstance(e, RunAborted)]
        rank, exc = (primary or failed)[0]
        raise RankFailure(rank, exc) from exc
    fabric.check_drained()
    return RunResult(values=results,
                     counters=[c.counters.snapshot() for c in contexts])
