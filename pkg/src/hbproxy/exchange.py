"""Halo (cut) data movement in two strategies: per-element vs. one aggregated
message per cut direction, with single-threaded and tag-concurrent drivers.

Every cut carries L paired boundary elements.  Each element's payload is
datasize = npde * (2*nharms + 1) values ordered plane-outer/variable-inner;
element e sits at offset e * datasize in the aggregated buffer.  Per-element
mode sends each element as two half-payload messages (the two halves of the
per-element block), so a remote cut costs 2*L messages per direction; the
aggregated mode packs the whole direction into one buffer and sends exactly
one message carrying the same bytes.

Message tags are predictable so concurrent threads can never collide:

    tag = ((cut*2 + direction) * max_slots + slot) * PHASE_STRIDE + phase

where slot is 2*element (+1 for the second half) in per-element mode and 0
for an aggregated message, max_slots is twice the longest cut, and phase is
the per-rank exchange sequence number (every rank performs exchanges in the
same order, so phases agree globally without coordination).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ProtocolError
from .hbcore import face_halo_view, face_interior_view
from .hybrid import partition_work
from .runtime import wait_all

PHASE_STRIDE = 1 << 20


class ExchangeMode(Enum):
    PER_ELEMENT = "per-element"
    AGGREGATED_CUT = "aggregated"


class ThreadMode(Enum):
    SERIAL = "serial"
    TAGGED_THREADS = "tagged"


@dataclass(frozen=True)
class ExchangeStrategy:
    mode: ExchangeMode = ExchangeMode.AGGREGATED_CUT
    thread_mode: ThreadMode = ThreadMode.SERIAL


@dataclass(frozen=True)
class DirectionPlan:
    """One direction of one cut: where the data comes from and where it lands.

    Element order is side_a's ascending range; a reversed flag on either end
    applies the cut orientation.  direction 0 fills side_a's halo from side_b
    interiors, direction 1 the opposite way.
    """

    cut_index: int
    direction: int
    sender_rank: int
    recv_rank: int
    src_block: int
    src_face: str
    src_lo: int
    src_hi: int
    src_reversed: bool
    dst_block: int
    dst_face: str
    dst_lo: int
    dst_hi: int
    dst_reversed: bool
    length: int
    local: bool


@dataclass(frozen=True)
class PlannedCut:
    index: int
    length: int
    datasize: int
    rank_a: int
    rank_b: int
    local: bool
    directions: tuple  # (into_a, into_b)

    def displacement(self, element):
        return element * self.datasize

    @property
    def displacement_table(self):
        return tuple(e * self.datasize for e in range(self.length))

    @property
    def buffer_length(self):
        return self.length * self.datasize


@dataclass(frozen=True)
class CutPlan:
    nharms: int
    npde: int
    datasize: int
    cuts: tuple
    max_slots: int

    @property
    def planes(self):
        return 2 * self.nharms + 1

    def tag(self, cut_index, direction, slot, phase):
        if phase >= PHASE_STRIDE:
            raise ProtocolError(f"exchange phase {phase} exceeds the tag space")
        base = (cut_index * 2 + direction) * self.max_slots + slot
        return base * PHASE_STRIDE + phase


def build_cut_plan(topology, partition, nharms, npde):
    """Precompute element pairings, buffer offsets and roles for every cut."""
    datasize = npde * (2 * nharms + 1)
    planned = []
    max_len = 1
    for ci, cut in enumerate(topology.cuts):
        a, b = cut.side_a, cut.side_b
        rank_a = partition.rank_of(a.block)
        rank_b = partition.rank_of(b.block)
        local = rank_a == rank_b
        length = cut.length
        max_len = max(max_len, length)
        into_a = DirectionPlan(
            cut_index=ci, direction=0, sender_rank=rank_b, recv_rank=rank_a,
            src_block=b.block, src_face=b.face, src_lo=b.lo, src_hi=b.hi,
            src_reversed=cut.reversed,
            dst_block=a.block, dst_face=a.face, dst_lo=a.lo, dst_hi=a.hi,
            dst_reversed=False, length=length, local=local)
        into_b = DirectionPlan(
            cut_index=ci, direction=1, sender_rank=rank_a, recv_rank=rank_b,
            src_block=a.block, src_face=a.face, src_lo=a.lo, src_hi=a.hi,
            src_reversed=False,
            dst_block=b.block, dst_face=b.face, dst_lo=b.lo, dst_hi=b.hi,
            dst_reversed=cut.reversed, length=length, local=local)
        planned.append(PlannedCut(
            index=ci, length=length, datasize=datasize, rank_a=rank_a,
            rank_b=rank_b, local=local, directions=(into_a, into_b)))
    return CutPlan(nharms=nharms, npde=npde, datasize=datasize,
                   cuts=tuple(planned), max_slots=2 * max_len)


@dataclass(frozen=True)
class ExchangeForecast:
    """Per-direction message/byte totals for one exchange (sum over remote cuts).

    Both directions of a cut move the same element count, so a full exchange
    costs twice these numbers.
    """

    messages: int
    nbytes: int

    @property
    def total_messages(self):
        return 2 * self.messages

    @property
    def total_bytes(self):
        return 2 * self.nbytes


def predicted_message_count(plan, strategy):
    """Closed-form (messages, bytes) per direction per exchange.

    Measured runtime counters must match these numbers exactly; byte volume
    is strategy-independent.
    """
    msgs = 0
    nbytes = 0
    for cut in plan.cuts:
        if cut.local:
            continue
        if strategy.mode is ExchangeMode.PER_ELEMENT:
            msgs += 2 * cut.length
        else:
            msgs += 1
        nbytes += cut.length * cut.datasize * 8
    return ExchangeForecast(messages=msgs, nbytes=nbytes)


# ---------------------------------------------------------------------------
# Rank-local exchange state and drivers
# ---------------------------------------------------------------------------

def _src_view(field, d):
    view = face_interior_view(field.blocks[d.src_block].q, d.src_face, d.src_lo, d.src_hi)
    return view[:, :, ::-1] if d.src_reversed else view


def _dst_view(field, d):
    view = face_halo_view(field.blocks[d.dst_block].q, d.dst_face, d.dst_lo, d.dst_hi)
    return view[:, :, ::-1] if d.dst_reversed else view


class RankExchange:
    """Per-rank exchange driver: owns buffers, phase numbering and work splits.

    One instance must serve all exchanges of a rank's run so that the phase
    counter keeps message tags of consecutive exchanges distinct while they
    may still be in flight.
    """

    def __init__(self, plan, field, ctx, nthreads=1):
        self.plan = plan
        self.field = field
        self.ctx = ctx
        self.nthreads = nthreads
        self.phase = 0
        rank = ctx.rank
        self.local_dirs = []
        self.send_dirs = []
        self.recv_dirs = []
        for cut in plan.cuts:
            for d in cut.directions:
                if d.local:
                    if d.recv_rank == rank:
                        self.local_dirs.append(d)
                elif d.sender_rank == rank:
                    self.send_dirs.append(d)
                elif d.recv_rank == rank:
                    self.recv_dirs.append(d)
        self._send_buf = {d: np.empty(d.length * plan.datasize) for d in self.send_dirs}
        self._recv_payload = {}
        # element splits per direction and direction-list splits per thread
        self._elem_split = {}
        for d in self.local_dirs + self.send_dirs + self.recv_dirs:
            self._elem_split[d] = partition_work(d.length, nthreads)
        self._send_split = partition_work(len(self.send_dirs), nthreads)
        self._recv_split = partition_work(len(self.recv_dirs), nthreads)

    def next_phase(self):
        phase = self.phase
        self.phase += 1
        return phase

    # -- packing helpers ----------------------------------------------------

    def _pack(self, d, e_lo, e_hi):
        ds = self.plan.datasize
        view = _src_view(self.field, d)[:, :, e_lo:e_hi]
        flat = np.transpose(view, (2, 0, 1)).reshape((e_hi - e_lo) * ds)
        self._send_buf[d][e_lo * ds:e_hi * ds] = flat

    def _unpack(self, d, payload, e_lo, e_hi):
        ds = self.plan.datasize
        planes, npde = self.plan.planes, self.plan.npde
        part = payload[e_lo * ds:e_hi * ds].reshape(e_hi - e_lo, planes, npde)
        _dst_view(self.field, d)[:, :, e_lo:e_hi] = np.transpose(part, (1, 2, 0))

    def _copy_local(self, d, e_lo, e_hi):
        _dst_view(self.field, d)[:, :, e_lo:e_hi] = _src_view(self.field, d)[:, :, e_lo:e_hi]

    # -- per-element transport ---------------------------------------------

    def _send_elements(self, d, phase, e_lo, e_hi):
        ds = self.plan.datasize
        half = ds // 2
        src = _src_view(self.field, d)
        for e in range(e_lo, e_hi):
            payload = np.ascontiguousarray(src[:, :, e]).reshape(ds)
            t0 = self.plan.tag(d.cut_index, d.direction, 2 * e, phase)
            t1 = self.plan.tag(d.cut_index, d.direction, 2 * e + 1, phase)
            self.ctx.post_send(d.recv_rank, t0, payload[:half])
            self.ctx.post_send(d.recv_rank, t1, payload[half:])

    def _recv_elements(self, d, phase, e_lo, e_hi):
        ds = self.plan.datasize
        half = ds // 2
        planes, npde = self.plan.planes, self.plan.npde
        handles = []
        for e in range(e_lo, e_hi):
            t0 = self.plan.tag(d.cut_index, d.direction, 2 * e, phase)
            t1 = self.plan.tag(d.cut_index, d.direction, 2 * e + 1, phase)
            handles.append(self.ctx.post_recv(d.sender_rank, t0))
            handles.append(self.ctx.post_recv(d.sender_rank, t1))
        dst = _dst_view(self.field, d)
        scratch = np.empty(ds)
        for k, e in enumerate(range(e_lo, e_hi)):
            scratch[:half] = handles[2 * k].wait()
            scratch[half:] = handles[2 * k + 1].wait()
            dst[:, :, e] = scratch.reshape(planes, npde)

    # -- whole-exchange drivers ----------------------------------------------

    def run_serial(self, strategy_mode, phase=None):
        """Single-caller exchange (also the tid-0 body under ThreadMode.SERIAL)."""
        if phase is None:
            phase = self.next_phase()
        for d in self.local_dirs:
            self._copy_local(d, 0, d.length)
        if strategy_mode is ExchangeMode.PER_ELEMENT:
            for d in self.send_dirs:
                self._send_elements(d, phase, 0, d.length)
            for d in self.recv_dirs:
                self._recv_elements(d, phase, 0, d.length)
            return
        for d in self.send_dirs:
            self._pack(d, 0, d.length)
            self.ctx.post_send(d.recv_rank,
                               self.plan.tag(d.cut_index, d.direction, 0, phase),
                               self._send_buf[d])
        handles = [(d, self.ctx.post_recv(d.sender_rank,
                                          self.plan.tag(d.cut_index, d.direction, 0, phase)))
                   for d in self.recv_dirs]
        for d, handle in handles:
            self._unpack(d, handle.wait(), 0, d.length)

    def team_phases(self, strategy, phase):
        """Phase list realizing one exchange on a thread team (one activation).

        Serial thread mode keeps all work on member 0; tagged mode splits
        local copies, pack/unpack ranges and element transfers across members,
        every member issuing its own sends and receives concurrently.
        """
        if strategy.thread_mode is ThreadMode.SERIAL:
            def serial_phase(tid):
                if tid == 0:
                    self.run_serial(strategy.mode, phase)
            return [serial_phase]

        def copy_phase(tid):
            for d in self.local_dirs:
                lo, hi = self._elem_split[d][tid]
                if hi > lo:
                    self._copy_local(d, lo, hi)

        if strategy.mode is ExchangeMode.PER_ELEMENT:
            def element_phase(tid):
                for d in self.send_dirs:
                    lo, hi = self._elem_split[d][tid]
                    if hi > lo:
                        self._send_elements(d, phase, lo, hi)
                for d in self.recv_dirs:
                    lo, hi = self._elem_split[d][tid]
                    if hi > lo:
                        self._recv_elements(d, phase, lo, hi)
            return [copy_phase, element_phase]

        def pack_phase(tid):
            for d in self.local_dirs:
                lo, hi = self._elem_split[d][tid]
                if hi > lo:
                    self._copy_local(d, lo, hi)
            for d in self.send_dirs:
                lo, hi = self._elem_split[d][tid]
                if hi > lo:
                    self._pack(d, lo, hi)

        def transport_phase(tid):
            lo, hi = self._send_split[tid]
            for d in self.send_dirs[lo:hi]:
                self.ctx.post_send(d.recv_rank,
                                   self.plan.tag(d.cut_index, d.direction, 0, phase),
                                   self._send_buf[d])
            lo, hi = self._recv_split[tid]
            mine = self.recv_dirs[lo:hi]
            handles = [self.ctx.post_recv(d.sender_rank,
                                          self.plan.tag(d.cut_index, d.direction, 0, phase))
                       for d in mine]
            for d, payload in zip(mine, wait_all(handles)):
                self._recv_payload[d] = payload

        def unpack_phase(tid):
            for d in self.recv_dirs:
                lo, hi = self._elem_split[d][tid]
                if hi > lo:
                    self._unpack(d, self._recv_payload[d], lo, hi)

        return [pack_phase, transport_phase, unpack_phase]


def exchange_halos(field, plan, strategy, ctx, team=None, state=None):
    """Run one halo exchange; after it every cut halo cell equals its peer
    interior cell bitwise.

    For repeated exchanges pass a persistent RankExchange as `state` (or call
    its methods directly) so phase numbers keep advancing; a fresh state per
    call would reuse tags that may still be in flight on a peer.
    """
    if state is None:
        state = RankExchange(plan, field, ctx,
                             team.nthreads if team is not None else 1)
    phase = state.next_phase()
    if strategy.thread_mode is ThreadMode.TAGGED_THREADS:
        if team is None:
            raise ProtocolError("TaggedThreads exchange requires a thread team")
        team.run(state.team_phases(strategy, phase))
    elif team is not None:
        team.run(state.team_phases(strategy, phase))
    else:
        state.run_serial(strategy.mode, phase)
    return state
