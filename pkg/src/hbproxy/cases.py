"""Benchmark case construction and the bundled case catalog.

Bundled cases (shipped as .cfg files under hbproxy/cases/):

* ``tc-tiny``   -- 2 blocks of 4x4 cells joined east/west; the smallest case
  that exercises a remote cut.
* ``tc1-mini``  -- ring of 32 blocks of 32x32 cells, 7 harmonics (15 planes),
  two bodies; desk-scale stand-in for a 512-block production case.
* ``tc2-mini``  -- 8x8 block lattice of 32x32 cells, 4 harmonics, one body;
  desk-scale stand-in for a 2048-block case.
* ``cut2500``   -- two stacked blocks sharing one 2500-element cut; used by
  the message-counting and cost-model checks.
* ``tc1-full`` / ``tc2-full`` -- full-size geometry references (512 blocks /
  262,144 cells with 31 harmonics; 2048 blocks / 4,194,304 cells with 17
  harmonics).  Shipped for reference, far too heavy for routine testing.

Every body's faces sit on a single block and only on north/south faces.
That confinement is load-bearing: per (plane, body) exactly one rank then
contributes a non-zero force partial, which is what makes the rank-ordered
force reduction bitwise independent of the block partition.
"""

from __future__ import annotations

from importlib import resources

from .mesh import BlockSpec, CaseConfig, CutSide, CutSpec, parse_case


def _blocks_row(nblocks, ni, nj, h, bodies):
    by_block = {}
    for block_id, face, body in bodies:
        by_block.setdefault(block_id, []).append((face, body))
    return [BlockSpec(id=k, ni=ni, nj=nj, x0=k * ni * h, y0=0.0, h=h,
                      body_faces=tuple(by_block.get(k, ())))
            for k in range(nblocks)]


def ring_case(nblocks, ni, nj, nharms, *, h, dtau, omega=1.0, iterations=10,
              nbody=0, bodies=(), name=""):
    """Row of blocks closed into a ring: block k's east face meets
    block (k+1) % nblocks's west face."""
    if nblocks < 2:
        raise ValueError("a ring needs at least 2 blocks")
    blocks = _blocks_row(nblocks, ni, nj, h, bodies)
    cuts = [CutSpec(side_a=CutSide(k, "east", 1, nj),
                    side_b=CutSide((k + 1) % nblocks, "west", 1, nj))
            for k in range(nblocks)]
    return CaseConfig(nharms=nharms, npde=4, iterations=iterations, dtau=dtau,
                      omega=omega, nbody=nbody, blocks=blocks, cuts=cuts, name=name)


def pair_case(ni, nj, nharms, *, h, dtau, omega=1.0, iterations=10,
              nbody=0, bodies=(), reversed_cut=False, name=""):
    """Two blocks side by side with a single east/west cut."""
    blocks = _blocks_row(2, ni, nj, h, bodies)
    cuts = [CutSpec(side_a=CutSide(0, "east", 1, nj),
                    side_b=CutSide(1, "west", 1, nj), reversed=reversed_cut)]
    return CaseConfig(nharms=nharms, npde=4, iterations=iterations, dtau=dtau,
                      omega=omega, nbody=nbody, blocks=blocks, cuts=cuts, name=name)


def stacked_pair_case(ni, nj, nharms, *, h, dtau, omega=1.0, iterations=1,
                      nbody=0, bodies=(), name=""):
    """Two vertically stacked blocks with a single north/south cut of length ni."""
    by_block = {}
    for block_id, face, body in bodies:
        by_block.setdefault(block_id, []).append((face, body))
    blocks = [
        BlockSpec(id=0, ni=ni, nj=nj, x0=0.0, y0=0.0, h=h,
                  body_faces=tuple(by_block.get(0, ()))),
        BlockSpec(id=1, ni=ni, nj=nj, x0=0.0, y0=nj * h, h=h,
                  body_faces=tuple(by_block.get(1, ()))),
    ]
    cuts = [CutSpec(side_a=CutSide(0, "north", 1, ni),
                    side_b=CutSide(1, "south", 1, ni))]
    return CaseConfig(nharms=nharms, npde=4, iterations=iterations, dtau=dtau,
                      omega=omega, nbody=nbody, blocks=blocks, cuts=cuts, name=name)


def lattice_case(nbx, nby, ni, nj, nharms, *, h, dtau, omega=1.0, iterations=10,
                 nbody=0, bodies=(), name=""):
    """nbx-by-nby block lattice with east/west and north/south interior cuts."""
    by_block = {}
    for block_id, face, body in bodies:
        by_block.setdefault(block_id, []).append((face, body))
    blocks = []
    for r in range(nby):
        for c in range(nbx):
            bid = r * nbx + c
            blocks.append(BlockSpec(id=bid, ni=ni, nj=nj, x0=c * ni * h,
                                    y0=r * nj * h, h=h,
                                    body_faces=tuple(by_block.get(bid, ()))))
    cuts = []
    for r in range(nby):
        for c in range(nbx - 1):
            cuts.append(CutSpec(side_a=CutSide(r * nbx + c, "east", 1, nj),
                                side_b=CutSide(r * nbx + c + 1, "west", 1, nj)))
    for r in range(nby - 1):
        for c in range(nbx):
            cuts.append(CutSpec(side_a=CutSide(r * nbx + c, "north", 1, ni),
                                side_b=CutSide((r + 1) * nbx + c, "south", 1, ni)))
    return CaseConfig(nharms=nharms, npde=4, iterations=iterations, dtau=dtau,
                      omega=omega, nbody=nbody, blocks=blocks, cuts=cuts, name=name)


# ---------------------------------------------------------------------------
# The catalog
# ---------------------------------------------------------------------------

def tc_tiny():
    return pair_case(4, 4, nharms=1, h=0.25, dtau=0.05, iterations=10,
                     nbody=1, bodies=((0, "south", 0),), name="tc-tiny")


def tc1_mini():
    return ring_case(32, 32, 32, nharms=7, h=0.03125, dtau=0.004, iterations=20,
                     nbody=2, bodies=((0, "south", 0), (16, "south", 1)),
                     name="tc1-mini")


def tc2_mini():
    return lattice_case(8, 8, 32, 32, nharms=4, h=0.03125, dtau=0.004,
                        iterations=10, nbody=1, bodies=((0, "south", 0),),
                        name="tc2-mini")


def cut2500():
    return stacked_pair_case(2500, 4, nharms=1, h=0.01, dtau=0.0001,
                             iterations=1, nbody=1, bodies=((0, "south", 0),),
                             name="cut2500")


def tc1_full():
    return ring_case(512, 32, 16, nharms=31, h=0.03125, dtau=0.004,
                     iterations=100, nbody=2,
                     bodies=((0, "south", 0), (256, "south", 1)), name="tc1-full")


def tc2_full():
    return lattice_case(64, 32, 64, 32, nharms=17, h=0.015625, dtau=0.002,
                        iterations=100, nbody=1, bodies=((0, "south", 0),),
                        name="tc2-full")


BUILDERS = {
    "tc-tiny": tc_tiny,
    "tc1-mini": tc1_mini,
    "tc2-mini": tc2_mini,
    "cut2500": cut2500,
    "tc1-full": tc1_full,
    "tc2-full": tc2_full,
}


def case_text(config):
    """Render a CaseConfig as case-file text (the bundled files are generated
    this way; parse_case(case_text(c)) reproduces c exactly)."""
    lines = ["[case]"]
    for key in ("nharms", "npde", "iterations", "dtau", "omega", "nbody"):
        lines.append(f"{key} = {getattr(config, key)!r}")
    for block in config.blocks:
        lines.append("")
        lines.append(f"[block {block.id}]")
        lines.append(f"ni = {block.ni}")
        lines.append(f"nj = {block.nj}")
        lines.append(f"x0 = {block.x0!r}")
        lines.append(f"y0 = {block.y0!r}")
        lines.append(f"h = {block.h!r}")
        if block.body_faces:
            faces = ",".join(f"{face}:{body}" for face, body in block.body_faces)
            lines.append(f"body_faces = {faces}")
    for ci, cut in enumerate(config.cuts):
        lines.append("")
        lines.append(f"[cut {ci}]")
        lines.append(f"block_a = {cut.side_a.block}")
        lines.append(f"face_a = {cut.side_a.face}")
        lines.append(f"range_a = {cut.side_a.lo}:{cut.side_a.hi}")
        lines.append(f"block_b = {cut.side_b.block}")
        lines.append(f"face_b = {cut.side_b.face}")
        lines.append(f"range_b = {cut.side_b.lo}:{cut.side_b.hi}")
        lines.append(f"orientation = {'reversed' if cut.reversed else 'forward'}")
    return "\n".join(lines) + "\n"


def builtin_case_names():
    return tuple(BUILDERS)


def load_builtin(name):
    """Parse a bundled case file; round-trips through the text format."""
    ref = resources.files("hbproxy").joinpath("cases", f"{name}.cfg")
    text = ref.read_text(encoding="utf-8")
    return parse_case(text, source=f"<builtin {name}>", name=name)
