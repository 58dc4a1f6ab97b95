"""Global force-coefficient reductions in two packings.

The baseline issues one small global sum per (plane, body) pair -- that is
nbody * (2*nharms + 1) collective calls per reduction, each of length 2 or 3
depending on whether the moment coefficient participates (functag).  The
buffered strategy packs everything into a single buffer (plane-outer,
body-inner, cl/cd/cm per slot, always three slots) and issues exactly one
global sum of length 3 * nbody * (2*nharms + 1).

With functag=2 the buffered packing carries zeros in the cm slots and leaves
the local cm partials untouched on unpack, which keeps the two strategies
bitwise interchangeable for every functag.  Both reduce in ascending rank
order, so results are also bitwise stable across rank counts whenever each
body's contributions originate from a single rank.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import CollectiveError


class ReduceMode(Enum):
    PER_BODY_PER_HARMONIC = "per-item"
    SINGLE_BUFFER = "buffered"


@dataclass(frozen=True)
class ForceReduceStrategy:
    mode: ReduceMode = ReduceMode.SINGLE_BUFFER
    functag: int = 3  # 3 includes cm, 2 omits it

    def __post_init__(self):
        if self.functag not in (2, 3):
            raise CollectiveError(f"functag must be 2 or 3, got {self.functag}")


def expected_collective_calls(planes, nbody, strategy):
    """Collective calls one reduce_forces performs; counters must match exactly."""
    if nbody == 0:
        return 0
    if strategy.mode is ReduceMode.PER_BODY_PER_HARMONIC:
        return planes * nbody
    return 1


def reduce_forces(partial, strategy, ctx):
    """Globally sum force partials; returns a new ForceCoefficients.

    All ranks must call with identical extents and strategy (a length skew
    surfaces as a CollectiveError).  Bodies without any contribution anywhere
    come back as zeros.
    """
    out = partial.copy()
    planes, nbody = partial.planes, partial.nbody
    if nbody == 0:
        return out

    if strategy.mode is ReduceMode.PER_BODY_PER_HARMONIC:
        width = 3 if strategy.functag == 3 else 2
        buf = np.empty(width)
        for n in range(planes):
            for b in range(nbody):
                buf[0] = partial.cl[n, b]
                buf[1] = partial.cd[n, b]
                if width == 3:
                    buf[2] = partial.cm[n, b]
                summed = ctx.allreduce_sum(buf)
                out.cl[n, b] = summed[0]
                out.cd[n, b] = summed[1]
                if width == 3:
                    out.cm[n, b] = summed[2]
        return out

    buf = np.empty(3 * planes * nbody)
    j = 0
    for n in range(planes):
        for b in range(nbody):
            buf[j] = partial.cl[n, b]
            buf[j + 1] = partial.cd[n, b]
            buf[j + 2] = partial.cm[n, b] if strategy.functag == 3 else 0.0
            j += 3
    summed = ctx.allreduce_sum(buf)
    j = 0
    for n in range(planes):
        for b in range(nbody):
            out.cl[n, b] = summed[j]
            out.cd[n, b] = summed[j + 1]
            if strategy.functag == 3:
                out.cm[n, b] = summed[j + 2]
            j += 3
    return out
