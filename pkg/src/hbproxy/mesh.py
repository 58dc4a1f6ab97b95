"""Multi-block grid description: blocks, cuts, bodies, and the block->rank partition.

A case file is line-oriented UTF-8 text.  Sections are introduced by
``[case]``, ``[block <id>]`` or ``[cut <id>]``; every other non-blank line is a
``key = value`` pair belonging to the current section.  ``#`` starts a comment.
Unknown sections or keys are rejected.

Keys:

* ``[case]``   -- nharms, npde, iterations, dtau, omega, nbody (all required)
* ``[block n]`` -- ni, nj, x0, y0, h (required); body_faces (optional, e.g.
  ``south:0`` or ``south:0,north:1``)
* ``[cut n]``  -- block_a, face_a, range_a, block_b, face_b, range_b,
  orientation (forward|reversed).  Ranges are inclusive 1-based ``lo:hi``
  intervals of cell indices along the face.

Block ids and cut ids must each form a contiguous range starting at 0 (cut
ids double as indices into the message-tag space, so gaps are rejected).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

from .errors import CapacityError, ConfigError, TopologyError

FACES = ("north", "south", "east", "west")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSpec:
    """One structured sub-grid: ni x nj interior cells plus a one-cell halo ring."""

    id: int
    ni: int
    nj: int
    x0: float
    y0: float
    h: float
    body_faces: tuple = ()  # tuple of (face, body_id)

    def cells(self):
        return self.ni * self.nj

    def face_extent(self, face):
        """Number of boundary cells along a face (north/south run along i)."""
        return self.ni if face in ("north", "south") else self.nj


@dataclass(frozen=True)
class CutSide:
    block: int
    face: str
    lo: int  # 1-based inclusive
    hi: int

    @property
    def length(self):
        return self.hi - self.lo + 1


@dataclass(frozen=True)
class CutSpec:
    """Pairing of two block faces whose halo data is exchanged every stage."""

    side_a: CutSide
    side_b: CutSide
    reversed: bool = False  # reversed orientation maps range [1..L] onto [L..1]

    @property
    def length(self):
        return self.side_a.length


@dataclass(frozen=True)
class Topology:
    blocks: tuple
    cuts: tuple
    nbody: int

    def total_cells(self):
        return sum(b.cells() for b in self.blocks)

    @property
    def nblocks(self):
        return len(self.blocks)


@dataclass(frozen=True)
class Partition:
    rank_of_block: tuple
    nranks: int

    def rank_of(self, block_id):
        return self.rank_of_block[block_id]

    def blocks_of(self, rank):
        return tuple(b for b, r in enumerate(self.rank_of_block) if r == rank)


class CutRole(Enum):
    BOTH_LOCAL = "both_local"
    RECV_SIDE = "recv_side"
    SEND_SIDE = "send_side"
    UNINVOLVED = "uninvolved"


@dataclass
class CaseConfig:
    """Parsed case file: solver parameters plus raw block/cut descriptions."""

    nharms: int
    npde: int
    iterations: int
    dtau: float
    omega: float
    nbody: int
    blocks: list = field(default_factory=list)
    cuts: list = field(default_factory=list)
    name: str = ""

    @property
    def planes(self):
        return 2 * self.nharms + 1


# ---------------------------------------------------------------------------
# Case file parsing
# ---------------------------------------------------------------------------

_CASE_KEYS = {"nharms": int, "npde": int, "iterations": int,
              "dtau": float, "omega": float, "nbody": int}
_BLOCK_KEYS = {"ni": int, "nj": int, "x0": float, "y0": float,
               "h": float, "body_faces": str}
_CUT_KEYS = {"block_a": int, "face_a": str, "range_a": str,
             "block_b": int, "face_b": str, "range_b": str,
             "orientation": str}


def _parse_range(text, lineno, source):
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"range must be 'lo:hi', got {text!r}", lineno, source)
    try:
        lo, hi = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"non-integer range bound in {text!r}", lineno, source)
    if lo < 1 or hi < lo:
        raise ConfigError(f"empty or negative range {text!r}", lineno, source)
    return lo, hi


def _parse_body_faces(text, lineno, source):
    faces = []
    if not text.strip():
        return ()
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 2 or parts[0] not in FACES:
            raise ConfigError(f"body face must be '<face>:<body>', got {item!r}",
                              lineno, source)
        try:
            body = int(parts[1])
        except ValueError:
            raise ConfigError(f"non-integer body id in {item!r}", lineno, source)
        faces.append((parts[0], body))
    return tuple(faces)


def parse_case(text, source="<string>", name=""):
    """Parse case-file text into a CaseConfig.  Errors name the offending line."""
    sections = {}      # ("case",) | ("block", id) | ("cut", id) -> {key: (value, line)}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", lineno, source)
            fields = line[1:-1].split()
            if fields == ["case"]:
                key = ("case",)
            elif len(fields) == 2 and fields[0] in ("block", "cut"):
                try:
                    ident = int(fields[1])
                except ValueError:
                    raise ConfigError(f"non-integer {fields[0]} id {fields[1]!r}",
                                      lineno, source)
                key = (fields[0], ident)
            else:
                raise ConfigError(f"unknown section {line!r}", lineno, source)
            if key in sections:
                raise ConfigError(f"duplicate section {line!r}", lineno, source)
            sections[key] = {}
            current = key
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno, source)
        if current is None:
            raise ConfigError("key outside any section", lineno, source)
        k, _, v = line.partition("=")
        k, v = k.strip(), v.strip()
        allowed = {"case": _CASE_KEYS, "block": _BLOCK_KEYS, "cut": _CUT_KEYS}[current[0]]
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in [{' '.join(map(str, current))}]",
                              lineno, source)
        if k in sections[current]:
            raise ConfigError(f"duplicate key {k!r}", lineno, source)
        sections[current][k] = (v, lineno)

    if ("case",) not in sections:
        raise ConfigError("missing [case] section", None, source)

    def convert(sect, key, conv, lineno_hint=None):
        if key not in sect:
            raise ConfigError(f"missing key {key!r}", lineno_hint, source)
        value, lineno = sect[key]
        try:
            return conv(value)
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {value!r}", lineno, source)

    case_sect = sections[("case",)]
    params = {k: convert(case_sect, k, conv) for k, conv in _CASE_KEYS.items()}
    if params["nharms"] < 0:
        raise ConfigError("nharms must be >= 0", None, source)
    if params["npde"] != 4:
        raise ConfigError("npde is fixed at 4", None, source)
    if params["iterations"] < 0:
        raise ConfigError("iterations must be >= 0", None, source)
    if params["dtau"] < 0:
        raise ConfigError("dtau must be >= 0", None, source)
    if params["omega"] <= 0:
        raise ConfigError("omega must be > 0", None, source)
    if params["nbody"] < 0:
        raise ConfigError("nbody must be >= 0", None, source)

    blocks = []
    for key in sorted(k for k in sections if k[0] == "block"):
        sect = sections[key]
        ni = convert(sect, "ni", int)
        nj = convert(sect, "nj", int)
        spec = BlockSpec(
            id=key[1], ni=ni, nj=nj,
            x0=convert(sect, "x0", float),
            y0=convert(sect, "y0", float),
            h=convert(sect, "h", float),
            body_faces=_parse_body_faces(*sect.get("body_faces", ("", None)), source)
            if "body_faces" in sect else (),
        )
        if spec.ni < 2 or spec.nj < 2:
            raise ConfigError(f"block {spec.id}: ni and nj must be >= 2", None, source)
        if spec.h <= 0:
            raise ConfigError(f"block {spec.id}: h must be > 0", None, source)
        blocks.append(spec)

    cuts = []
    cut_ids = sorted(k[1] for k in sections if k[0] == "cut")
    if cut_ids != list(range(len(cut_ids))):
        raise ConfigError("cut ids must be contiguous starting at 0", None, source)
    for ident in cut_ids:
        sect = sections[("cut", ident)]
        face_a = convert(sect, "face_a", str)
        face_b = convert(sect, "face_b", str)
        for f in (face_a, face_b):
            if f not in FACES:
                raise ConfigError(f"cut {ident}: unknown face {f!r}", None, source)
        lo_a, hi_a = _parse_range(*sect["range_a"], source)
        lo_b, hi_b = _parse_range(*sect["range_b"], source)
        orientation = convert(sect, "orientation", str)
        if orientation not in ("forward", "reversed"):
            raise ConfigError(f"cut {ident}: orientation must be forward|reversed",
                              None, source)
        cuts.append(CutSpec(
            side_a=CutSide(convert(sect, "block_a", int), face_a, lo_a, hi_a),
            side_b=CutSide(convert(sect, "block_b", int), face_b, lo_b, hi_b),
            reversed=(orientation == "reversed"),
        ))

    block_ids = [b.id for b in blocks]
    if block_ids != list(range(len(block_ids))):
        raise ConfigError("block ids must be contiguous starting at 0", None, source)

    return CaseConfig(blocks=blocks, cuts=cuts, name=name, **params)


def load_case(path):
    """Read and parse a case file from disk."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    import os
    stem = os.path.splitext(os.path.basename(path))[0]
    return parse_case(text, source=str(path), name=stem)


# ---------------------------------------------------------------------------
# Topology construction and partitioning
# ---------------------------------------------------------------------------

def build_topology(config):
    """Validate a parsed case and return its Topology.

    Deterministic for identical config content; dangling references and
    overlapping cut ranges raise TopologyError naming the cut.
    """
    blocks = tuple(config.blocks)
    nblocks = len(blocks)
    if nblocks == 0:
        raise TopologyError("case defines no blocks")
    if [b.id for b in blocks] != list(range(nblocks)):
        raise TopologyError("block ids must be contiguous starting at 0")

    for b in blocks:
        for face, body in b.body_faces:
            if not 0 <= body < config.nbody:
                raise TopologyError(
                    f"block {b.id}: body id {body} outside 0..{config.nbody - 1}")

    seen = {}  # (block, face, index) -> cut index
    for ci, cut in enumerate(config.cuts):
        for side_name, side in (("a", cut.side_a), ("b", cut.side_b)):
            if not 0 <= side.block < nblocks:
                raise TopologyError(
                    f"cut {ci}: side_{side_name} references missing block {side.block}")
            extent = blocks[side.block].face_extent(side.face)
            if side.hi > extent:
                raise TopologyError(
                    f"cut {ci}: range {side.lo}:{side.hi} exceeds {side.face} "
                    f"extent {extent} of block {side.block}")
        if cut.side_a.length != cut.side_b.length:
            raise TopologyError(
                f"cut {ci}: side lengths differ "
                f"({cut.side_a.length} vs {cut.side_b.length})")
        for side in (cut.side_a, cut.side_b):
            for idx in range(side.lo, side.hi + 1):
                key = (side.block, side.face, idx)
                if key in seen:
                    raise TopologyError(
                        f"cut {ci}: boundary element {key} already used by cut {seen[key]}")
                seen[key] = ci

    return Topology(blocks=blocks, cuts=tuple(config.cuts), nbody=config.nbody)


def partition_blocks(topology, nranks):
    """Greedy longest-processing-time assignment of blocks to ranks.

    Blocks are taken in descending cell count (ties: ascending block id) and
    each goes to the least-loaded rank (ties: ascending rank id).  The result
    is deterministic and ignores cut declarations entirely.
    """
    nblocks = topology.nblocks
    if nranks < 1:
        raise CapacityError(f"nranks must be >= 1, got {nranks}")
    if nranks > nblocks:
        raise CapacityError(
            f"{nranks} ranks requested but only {nblocks} blocks to distribute")

    order = sorted(topology.blocks, key=lambda b: (-b.cells(), b.id))
    heap = [(0, r) for r in range(nranks)]  # (load, rank); heapq breaks ties on rank
    assignment = [0] * nblocks
    for b in order:
        load, rank = heapq.heappop(heap)
        assignment[b.id] = rank
        heapq.heappush(heap, (load + b.cells(), rank))
    return Partition(rank_of_block=tuple(assignment), nranks=nranks)


def cut_role(partition, cut, rank):
    """Role of `rank` for a cut: owner of both sides, side a, side b, or neither."""
    ra = partition.rank_of(cut.side_a.block)
    rb = partition.rank_of(cut.side_b.block)
    if rank == ra and rank == rb:
        return CutRole.BOTH_LOCAL
    if rank == ra:
        return CutRole.RECV_SIDE
    if rank == rb:
        return CutRole.SEND_SIDE
    return CutRole.UNINVOLVED
