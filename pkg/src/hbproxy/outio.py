"""Restart and flowtec binary writers with per-value and buffered strategies.

File format (fixed little-endian, independent of the host):

* a file is a dense sequence of records, one per (block, plane) in the
  restart file and one per block in each per-plane flowtec file;
* a record is a 4-byte unsigned length prefix (payload bytes), the payload
  of float64 values, and an identical 4-byte length suffix;
* restart payload: all solution values of the block's plane, rows outer,
  columns inner, variable index innermost;
* flowtec payload per cell: (x, y, rho, ux) = cell centre plus the first two
  solution variables, rows outer, columns inner.

Offsets are precomputed per record, so any rank/thread can write its records
through its own handle without coordination; the bytes are a pure function
of (field, layout).  The two write strategies produce identical bytes and
differ only in positioned-write granularity: per-value issues one write per
scalar plus one per marker (2 + nfloats ops per record), buffered issues
exactly 3 per record.  Handles are mmap-backed so a positioned write is an
in-place store into the mapped file.

File names: ``restart.bin`` and ``flowtec_<n>.bin`` for n = 0..2*nharms.
"""

from __future__ import annotations

import mmap
import os
import struct
import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import PlanError, WriteError
from .hybrid import partition_work

DOUBLE_SIZE = 8
MARKER_SIZE = 4


class WriteMode(Enum):
    PER_VALUE = "per-value"
    BUFFERED = "buffered"


@dataclass(frozen=True)
class RecordSpec:
    block: int
    plane: int
    offset: int
    nfloats: int

    @property
    def payload_bytes(self):
        return self.nfloats * DOUBLE_SIZE

    @property
    def total_bytes(self):
        return self.payload_bytes + 2 * MARKER_SIZE


@dataclass(frozen=True)
class FileLayout:
    kind: str  # "restart" | "flowtec"
    plane: int | None
    filename: str
    records: tuple
    total_bytes: int

    def record_for(self, block, plane):
        for rec in self.records:
            if rec.block == block and rec.plane == plane:
                return rec
        raise KeyError((block, plane))


def compute_layout(topology, nharms, npde, kind):
    """Byte layout(s) for an output kind: one FileLayout for the restart file,
    one per harmonic plane for flowtec."""
    planes = 2 * nharms + 1
    if kind == "restart":
        records = []
        offset = 0
        for block in topology.blocks:
            nfloats = block.ni * block.nj * npde
            for n in range(planes):
                rec = RecordSpec(block.id, n, offset, nfloats)
                records.append(rec)
                offset += rec.total_bytes
        return (FileLayout("restart", None, "restart.bin", tuple(records), offset),)
    if kind == "flowtec":
        layouts = []
        for n in range(planes):
            records = []
            offset = 0
            for block in topology.blocks:
                rec = RecordSpec(block.id, n, offset, block.ni * block.nj * 4)
                records.append(rec)
                offset += rec.total_bytes
            layouts.append(FileLayout("flowtec", n, f"flowtec_{n}.bin",
                                      tuple(records), offset))
        return tuple(layouts)
    raise WriteError(f"unknown output kind {kind!r}")


def record_payload(layout, record, block_state):
    """Record payload as a little-endian float64 array (row-outer ordering)."""
    spec = block_state.spec
    nj, ni = spec.nj, spec.ni
    n = record.plane
    if layout.kind == "restart":
        interior = block_state.q[n, :, 1:nj + 1, 1:ni + 1]
        data = np.transpose(interior, (1, 2, 0))  # (j, i, pde)
    else:
        cell = np.empty((nj, ni, 4))
        cell[:, :, 0] = block_state.xc[None, :]
        cell[:, :, 1] = block_state.yc[:, None]
        cell[:, :, 2] = block_state.q[n, 0, 1:nj + 1, 1:ni + 1]
        cell[:, :, 3] = block_state.q[n, 1, 1:nj + 1, 1:ni + 1]
        data = cell
    return np.ascontiguousarray(data, dtype="<f8")


# ---------------------------------------------------------------------------
# Handles and the ordered open protocol
# ---------------------------------------------------------------------------

class Handle:
    """Independently positionable mmap-backed handle on one output file."""

    def __init__(self, path, thread_id):
        self.path = path
        self.thread_id = thread_id
        try:
            self._fd = os.open(path, os.O_RDWR)
            self._mm = mmap.mmap(self._fd, 0)
        except OSError as exc:
            raise WriteError(f"thread {thread_id}: cannot open {path}: {exc}") from exc

    def write_at(self, offset, data):
        try:
            self._mm[offset:offset + len(data)] = data
        except (ValueError, OSError) as exc:
            raise WriteError(
                f"thread {self.thread_id}: write of {len(data)} bytes at "
                f"offset {offset} in {self.path} failed: {exc}") from exc

    def close(self):
        self._mm.flush()
        self._mm.close()
        os.close(self._fd)


class Turnstile:
    """Admits thread ids in ascending order (the ordered-open protocol)."""

    def __init__(self):
        self._cond = threading.Condition()
        self._next = 0

    def step(self, tid, fn):
        with self._cond:
            while self._next != tid:
                self._cond.wait()
        try:
            return fn()
        finally:
            with self._cond:
                self._next += 1
                self._cond.notify_all()


def open_handles(path, team_size):
    """Open one handle per team member, in ascending member order.

    This is the serial form; inside a running team each member instead calls
    ``Handle(path, tid)`` through a shared Turnstile to get the same ordering
    with true per-thread opens.
    """
    handles = []
    for tid in range(team_size):
        handles.append(Handle(path, tid))
    return handles


def create_output_files(out_dir, layouts):
    """Create (truncate) every output file at its final size before ranks write."""
    os.makedirs(out_dir, exist_ok=True)
    for layout in layouts:
        path = os.path.join(out_dir, layout.filename)
        with open(path, "wb") as f:
            f.truncate(layout.total_bytes)


# ---------------------------------------------------------------------------
# Record ownership and writing
# ---------------------------------------------------------------------------

def assign_records(layout, owned_blocks, team_size):
    """Split the rank's records of one file into contiguous per-thread runs."""
    owned = set(owned_blocks)
    records = [r for r in layout.records if r.block in owned]
    return [records[lo:hi] for lo, hi in partition_work(len(records), team_size)]


def validate_record_ownership(assignments):
    """Reject write plans in which a record belongs to more than one thread."""
    seen = {}
    for tid, records in enumerate(assignments):
        for rec in records:
            key = (rec.block, rec.plane, rec.offset)
            if key in seen:
                raise PlanError(
                    f"record (block {rec.block}, plane {rec.plane}) assigned to "
                    f"threads {seen[key]} and {tid}")
            seen[key] = tid


def write_records(handle, layout, records, field, mode, ctx):
    """Write a run of records through one handle; counts positioned writes."""
    for rec in records:
        payload = record_payload(layout, rec, field.blocks[rec.block])
        raw = payload.tobytes()
        marker = struct.pack("<I", rec.payload_bytes)
        base = rec.offset
        if mode is WriteMode.BUFFERED:
            handle.write_at(base, marker)
            handle.write_at(base + MARKER_SIZE, raw)
            handle.write_at(base + MARKER_SIZE + rec.payload_bytes, marker)
            ctx.counters.add_write_ops(3)
        else:
            handle.write_at(base, marker)
            mv = memoryview(raw)
            pos = base + MARKER_SIZE
            for k in range(rec.nfloats):
                o = k * DOUBLE_SIZE
                handle.write_at(pos + o, mv[o:o + DOUBLE_SIZE])
            handle.write_at(pos + rec.payload_bytes, marker)
            ctx.counters.add_write_ops(2 + rec.nfloats)


def write_output(field, layouts, mode, ctx, out_dir, team_size=1):
    """Serial convenience writer: all owned records through one handle per file.

    The solver driver instead fans records out across the thread team inside
    one team activation (open via Turnstile, write, close); byte output is
    identical by construction.
    """
    owned = sorted(field.blocks)
    for layout in layouts:
        path = os.path.join(out_dir, layout.filename)
        assignments = assign_records(layout, owned, team_size)
        validate_record_ownership(assignments)
        handles = open_handles(path, team_size)
        try:
            for tid in range(team_size):
                write_records(handles[tid], layout, assignments[tid], field, mode, ctx)
        finally:
            for h in handles:
                h.close()


# ---------------------------------------------------------------------------
# Reading (round-trip verification)
# ---------------------------------------------------------------------------

def read_record(path, layout, record):
    """Read one record back, verifying both length markers."""
    with open(path, "rb") as f:
        f.seek(record.offset)
        blob = f.read(record.total_bytes)
    if len(blob) != record.total_bytes:
        raise WriteError(f"{path}: short read at offset {record.offset}")
    prefix = struct.unpack("<I", blob[:MARKER_SIZE])[0]
    suffix = struct.unpack("<I", blob[-MARKER_SIZE:])[0]
    if prefix != record.payload_bytes or suffix != record.payload_bytes:
        raise WriteError(
            f"{path}: marker mismatch at offset {record.offset}: "
            f"prefix={prefix} suffix={suffix} expected={record.payload_bytes}")
    values = np.frombuffer(blob[MARKER_SIZE:-MARKER_SIZE], dtype="<f8")
    return values.copy()


def read_block_plane(path, layout, block_spec, plane):
    """Reconstruct one record's payload in its natural (j, i, k) shape."""
    record = layout.record_for(block_spec.id, plane)
    values = read_record(path, layout, record)
    width = record.nfloats // (block_spec.ni * block_spec.nj)
    return values.reshape(block_spec.nj, block_spec.ni, width)
