"""Thread tier inside each rank: work partitioning, persistent teams, first touch.

A Team is a persistent group of T threads per rank (the calling thread acts
as member 0).  Work is handed over as *activations*: each activation is a
list of phase callables executed by every member with a barrier after each
phase.  The team-activation counter counts activations, so batching many
phases into one activation is exactly the region-hoisting trade the solver
driver makes:

* per-loop mode dispatches one activation per parallel loop nest -- the
  solver has three nests per Runge-Kutta stage (residual, update, halo
  pack/unpack), i.e. 12 activations per iteration;
* hoisted mode dispatches one activation per iteration covering all twelve
  nests (barriers between phases are kept, so the numbers are bitwise
  identical).

Initialization runs as each member's preamble before the first activation,
using the same (block, sub-range) -> thread map as the compute phases; the
InitPlan records both maps and refuses to run when they differ.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum

from .errors import PlanError
from . import hbcore


class Axis(Enum):
    HARMONICS = "harmonics"
    GRID_POINTS = "gridpoints"
    BLOCKS = "blocks"


class ActivationMode(Enum):
    PER_LOOP = "per-loop"
    HOISTED = "hoisted"


@dataclass(frozen=True)
class TeamConfig:
    threads: int
    axis: Axis = Axis.HARMONICS
    activation: ActivationMode = ActivationMode.HOISTED

    def __post_init__(self):
        if self.threads < 1:
            raise PlanError(f"team size must be >= 1, got {self.threads}")


def partition_work(extent, nthreads):
    """Split range(extent) into nthreads contiguous (lo, hi) pieces.

    Sizes differ by at most one and the larger pieces go to the lower thread
    ids; trailing pieces may be empty.
    """
    if extent < 0:
        raise PlanError(f"extent must be >= 0, got {extent}")
    base, rem = divmod(extent, nthreads)
    ranges = []
    lo = 0
    for t in range(nthreads):
        size = base + (1 if t < rem else 0)
        ranges.append((lo, lo + size))
        lo += size
    return ranges


# ---------------------------------------------------------------------------
# Work maps over (block, plane-range, row-range)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSlice:
    """Sub-range of one block in array coordinates: planes [n_lo, n_hi),
    interior rows [j_lo, j_hi) with the full interior being (1, nj + 1)."""

    block: int
    n_lo: int
    n_hi: int
    j_lo: int
    j_hi: int


def build_thread_slices(specs, planes, config):
    """Per-thread compute map for the configured axis.

    Harmonics splits the plane range (same split on every block), grid points
    split each block's interior rows, and the blocks axis splits the owned
    block list itself.
    """
    per_tid = [[] for _ in range(config.threads)]
    specs = sorted(specs, key=lambda s: s.id)
    if config.axis is Axis.HARMONICS:
        ranges = partition_work(planes, config.threads)
        for spec in specs:
            for tid, (lo, hi) in enumerate(ranges):
                if hi > lo:
                    per_tid[tid].append(BlockSlice(spec.id, lo, hi, 1, spec.nj + 1))
    elif config.axis is Axis.GRID_POINTS:
        for spec in specs:
            for tid, (lo, hi) in enumerate(partition_work(spec.nj, config.threads)):
                if hi > lo:
                    per_tid[tid].append(BlockSlice(spec.id, 0, planes, lo + 1, hi + 1))
    elif config.axis is Axis.BLOCKS:
        for tid, (lo, hi) in enumerate(partition_work(len(specs), config.threads)):
            for spec in specs[lo:hi]:
                per_tid[tid].append(BlockSlice(spec.id, 0, planes, 1, spec.nj + 1))
    else:
        raise PlanError(f"unknown axis {config.axis}")
    return per_tid


@dataclass(frozen=True)
class InitPlan:
    """Thread maps for initialization and compute; they must be identical."""

    init_map: tuple    # tuple per tid of BlockSlice tuples
    compute_map: tuple

    def validate(self):
        if self.init_map != self.compute_map:
            raise PlanError("first-touch init map differs from compute map")


def build_init_plan(specs, planes, config):
    slices = build_thread_slices(specs, planes, config)
    frozen = tuple(tuple(s) for s in slices)
    return InitPlan(init_map=frozen, compute_map=frozen)


def init_thread_slices(field, plan, tid):
    """Apply the initial condition for one thread's sub-ranges."""
    for sl in plan.init_map[tid]:
        block = field.blocks[sl.block]
        block.q[sl.n_lo:sl.n_hi, :, sl.j_lo:sl.j_hi, 1:block.spec.ni + 1] = \
            hbcore.initial_values(block.spec, field.planes, field.npde,
                                  sl.n_lo, sl.n_hi, sl.j_lo, sl.j_hi)


def first_touch_init(field, plan):
    """Validate the plan and apply every thread's initialization sub-range.

    Inside a running team each member calls init_thread_slices for its own id
    instead (same values, touched by the thread that will compute them).
    """
    plan.validate()
    for tid in range(len(plan.init_map)):
        init_thread_slices(field, plan, tid)
    return field


# ---------------------------------------------------------------------------
# Persistent thread team
# ---------------------------------------------------------------------------

class Team:
    """T persistent workers per rank; the constructor's caller is member 0.

    Every dispatched activation increments the rank's team-activation
    counter exactly once, regardless of how many phases it carries.
    """

    def __init__(self, ctx, nthreads, preamble=None):
        self.ctx = ctx
        self.nthreads = nthreads
        self._errors = {}
        self._dead = False
        if nthreads == 1:
            if preamble is not None:
                preamble(0)
            return
        self._barrier = threading.Barrier(nthreads)
        self._cond = threading.Condition()
        self._seq = 0
        self._phases = None
        self._stop = False
        self._workers = [
            threading.Thread(target=self._worker, args=(tid, preamble),
                             name=f"team-{ctx.rank}-{tid}", daemon=True)
            for tid in range(1, nthreads)
        ]
        for w in self._workers:
            w.start()
        if preamble is not None:
            preamble(0)
        self._barrier.wait()

    def _record_error(self, tid, exc):
        self._errors[tid] = exc
        self._dead = True
        self._barrier.abort()

    def _run_phases(self, tid, phases):
        for phase in phases:
            try:
                phase(tid)
            except BaseException as exc:  # noqa: BLE001 - reraised by member 0
                self._record_error(tid, exc)
                return
            try:
                self._barrier.wait()
            except threading.BrokenBarrierError:
                return

    def _worker(self, tid, preamble):
        if preamble is not None:
            try:
                preamble(tid)
            except BaseException as exc:  # noqa: BLE001
                self._record_error(tid, exc)
                return
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError:
            return
        last_seq = 0
        while True:
            with self._cond:
                while self._seq == last_seq and not self._stop:
                    self._cond.wait()
                if self._stop:
                    return
                last_seq = self._seq
                phases = self._phases
            self._run_phases(tid, phases)
            if self._dead:
                return

    def run(self, phases):
        """Execute one activation: every member runs each phase, barrier between."""
        if self._dead:
            raise PlanError("team is defunct after an earlier phase failure")
        self.ctx.counters.add_activation()
        if self.nthreads == 1:
            for phase in phases:
                phase(0)
            return
        with self._cond:
            self._seq += 1
            self._phases = phases
            self._cond.notify_all()
        self._run_phases(0, phases)
        if self._errors:
            tid = min(self._errors)
            raise self._errors[tid]

    def close(self):
        if self.nthreads == 1:
            return
        with self._cond:
            self._stop = True
            self._cond.notify_all()
        self._barrier.abort()
        for w in self._workers:
            w.join(timeout=30)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def run_stage(team, nests, activation_mode):
    """Dispatch the loop nests of one hoisting scope.

    Per-loop mode turns every nest into its own activation; hoisted mode runs
    them all inside a single activation, keeping the phase barriers.
    """
    if activation_mode is ActivationMode.PER_LOOP:
        for nest in nests:
            team.run(nest)
    else:
        team.run([phase for nest in nests for phase in nest])
