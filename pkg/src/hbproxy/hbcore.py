"""Harmonic-balance proxy solver core.

The solved model problem is linear advection-diffusion of npde=4 scalar
fields over every block, with the 2*nharms+1 solution planes coupled by a
time-spectral derivative operator and driven toward a periodic state by a
fixed forcing term.  Per interior cell the residual is, in this exact
evaluation order (the order is load-bearing: every execution configuration
must produce identical rounding):

    R = (NU/h^2) * (4*q - q_west - q_east - q_south - q_north)
      + (ADVECTION/(2*h)) * (q_east - q_west)
      + sum_m D[n][m] * q[m]        (m ascending, one rounded multiply-add each)
      + s(p, n, x, y)

with NU = 0.05 and ADVECTION = 1.0.  The forcing `s` is a product of
sinusoids, nonzero only on planes 1 and 2:

    s(p, n, x, y) = amp(n) * (1 + 0.25*p) * sin(2*pi*x) * sin(2*pi*y)
    amp(1) = 0.8, amp(2) = -0.5, amp(elsewhere) = 0

where (x, y) is the cell centre, p the 0-based variable index and n the
0-based plane index.  The deterministic initial state is

    q(p, n, x, y) = 0.1 * sin(2*pi*x + 0.35*p) * cos(2*pi*y - 0.2*n)

Solution arrays are stored per block as float64 with shape
(planes, npde, nj + 2, ni + 2); index 0 and the last index of the two grid
axes are the halo ring.  Cell (i, j) in 1-based grid coordinates lives at
array position [:, :, j, i]; halo cells on non-cut boundaries stay at zero
for the whole run (Dirichlet-0 ghost ring).

Pseudo-time stepping uses the four-stage scheme q_s = q_0 - alpha_s*dtau*R
with alphas (1/4, 1/3, 1/2, 1), each stage followed by a halo exchange.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DivergenceError, DomainError

NPDE = 4
NU = 0.05
ADVECTION = 1.0
RK_ALPHAS = (0.25, 1.0 / 3.0, 0.5, 1.0)
TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Time-spectral derivative operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralDeriv:
    """Dense (2*nharms+1)^2 derivative matrix acting across solution planes."""

    matrix: np.ndarray
    omega: float
    nharms: int

    @property
    def planes(self):
        return 2 * self.nharms + 1

    @property
    def period(self):
        return TWO_PI / self.omega


def spectral_matrix(nharms, omega):
    """Build the odd-point time-spectral derivative operator.

    Off-diagonal entries are (omega/2) * (-1)^d / sin(pi*d/N) where N is the
    plane count and d the plane offset wrapped into [-(N-1)/2, (N-1)/2].  The
    wrapped form makes antisymmetry exact in floating point: entry (j, k) is
    the exact negation of entry (k, j).
    """
    if nharms < 0:
        raise DomainError(f"nharms must be >= 0, got {nharms}")
    if omega <= 0:
        raise DomainError(f"omega must be > 0, got {omega}")
    n = 2 * nharms + 1
    half = nharms
    mat = np.zeros((n, n), dtype=np.float64)
    for j in range(n):
        for k in range(n):
            if j == k:
                continue
            d = (j - k + half) % n - half
            mat[j, k] = 0.5 * omega * (-1.0) ** d / math.sin(math.pi * d / n)
    mat.setflags(write=False)
    return SpectralDeriv(matrix=mat, omega=omega, nharms=nharms)


@dataclass(frozen=True)
class RKScheme:
    dtau: float
    alphas: tuple = RK_ALPHAS

    def __post_init__(self):
        if self.alphas[-1] != 1.0:
            raise DomainError("last stage coefficient must be 1")
        if self.dtau < 0:
            raise DomainError("dtau must be >= 0")


# ---------------------------------------------------------------------------
# Per-block field storage
# ---------------------------------------------------------------------------

class BlockState:
    """Solution arrays and scratch space for one owned block."""

    def __init__(self, spec, planes, npde=NPDE):
        self.spec = spec
        self.planes = planes
        self.npde = npde
        shape = (planes, npde, spec.nj + 2, spec.ni + 2)
        self.q = np.zeros(shape, dtype=np.float64)
        self.q0 = np.zeros(shape, dtype=np.float64)
        self.resid = np.zeros((planes, npde, spec.nj, spec.ni), dtype=np.float64)
        self.xc = spec.x0 + (np.arange(1, spec.ni + 1) - 0.5) * spec.h
        self.yc = spec.y0 + (np.arange(1, spec.nj + 1) - 0.5) * spec.h
        self.forcing = forcing_values(spec, planes, npde)

    def interior(self):
        return self.q[:, :, 1:self.spec.nj + 1, 1:self.spec.ni + 1]


class HarmonicField:
    """The rank-local solution: one BlockState per owned block."""

    def __init__(self, planes, npde, blocks):
        self.planes = planes
        self.npde = npde
        self.blocks = blocks  # dict block_id -> BlockState

    @classmethod
    def allocate(cls, specs, planes, npde=NPDE):
        blocks = {s.id: BlockState(s, planes, npde) for s in sorted(specs, key=lambda s: s.id)}
        return cls(planes, npde, blocks)


def initial_values(spec, planes, npde, n_lo, n_hi, j_lo, j_hi):
    """Initial state for a plane/row sub-range of a block, in array coordinates.

    j_lo/j_hi address interior rows (1-based, half-open), so the full interior
    is (1, nj + 1).  The values depend only on global cell-centre coordinates,
    which keeps them independent of how the range was sliced.
    """
    xc = spec.x0 + (np.arange(1, spec.ni + 1) - 0.5) * spec.h
    yc = spec.y0 + (np.arange(j_lo, j_hi) - 0.5) * spec.h
    p_idx = np.arange(npde, dtype=np.float64)
    n_idx = np.arange(n_lo, n_hi, dtype=np.float64)
    # factor over (p, i) and factor over (n, j)
    a = np.sin(TWO_PI * xc[None, :] + 0.35 * p_idx[:, None])
    b = np.cos(TWO_PI * yc[None, :] - 0.2 * n_idx[:, None])
    return 0.1 * a[None, :, None, :] * b[:, None, :, None]


def forcing_values(spec, planes, npde):
    """Fixed forcing array of shape (planes, npde, nj, ni); see module docstring."""
    xc = spec.x0 + (np.arange(1, spec.ni + 1) - 0.5) * spec.h
    yc = spec.y0 + (np.arange(1, spec.nj + 1) - 0.5) * spec.h
    sxy = np.sin(TWO_PI * xc)[None, :] * np.sin(TWO_PI * yc)[:, None]
    amp = np.zeros(planes)
    if planes > 1:
        amp[1] = 0.8
    if planes > 2:
        amp[2] = -0.5
    pfac = 1.0 + 0.25 * np.arange(npde, dtype=np.float64)
    out = amp[:, None, None, None] * pfac[None, :, None, None] * sxy[None, None, :, :]
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# Residual and stage update
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _residual_kernel(q, dmat, src, nu_h2, adv_2h, out, n_lo, n_hi, j_lo, j_hi):
    # Three passes with identical per-point rounding to the one-pass form:
    # stencil first, then one multiply-add per coupling plane (m ascending),
    # forcing last.  The pass structure exists purely so the innermost loops
    # vectorize; the accumulation order per point is part of the contract.
    planes = q.shape[0]
    npde = q.shape[1]
    ni_all = q.shape[3]
    for n in range(n_lo, n_hi):
        for p in range(npde):
            for j in range(j_lo, j_hi):
                for i in range(1, ni_all - 1):
                    c = q[n, p, j, i]
                    w = q[n, p, j, i - 1]
                    e = q[n, p, j, i + 1]
                    s = q[n, p, j - 1, i]
                    nn = q[n, p, j + 1, i]
                    t = 4.0 * c
                    t = t - w
                    t = t - e
                    t = t - s
                    t = t - nn
                    t = t * nu_h2
                    u = (e - w) * adv_2h
                    out[n, p, j - 1, i - 1] = t + u
    for m in range(planes):
        for n in range(n_lo, n_hi):
            coupling = dmat[n, m]
            for p in range(npde):
                for j in range(j_lo, j_hi):
                    for i in range(1, ni_all - 1):
                        out[n, p, j - 1, i - 1] += coupling * q[m, p, j, i]
    for n in range(n_lo, n_hi):
        for p in range(npde):
            for j in range(j_lo, j_hi):
                for i in range(1, ni_all - 1):
                    out[n, p, j - 1, i - 1] += src[n, p, j - 1, i - 1]


@njit(cache=True, nogil=True)
def _update_kernel(q, q0, resid, coef, snapshot, n_lo, n_hi, j_lo, j_hi):
    # q <- q0 - coef*R on the interior sub-range; optionally snapshots q into
    # q0 first (stage one).  Returns +0.0 while every written value is finite
    # (v - v is NaN for inf/NaN, which poisons the accumulator).
    npde = q.shape[1]
    ni_all = q.shape[3]
    acc = 0.0
    if snapshot:
        for n in range(n_lo, n_hi):
            for p in range(npde):
                for j in range(j_lo, j_hi):
                    for i in range(ni_all):
                        q0[n, p, j, i] = q[n, p, j, i]
    for n in range(n_lo, n_hi):
        for p in range(npde):
            for j in range(j_lo, j_hi):
                for i in range(1, ni_all - 1):
                    v = q0[n, p, j, i] - coef * resid[n, p, j - 1, i - 1]
                    q[n, p, j, i] = v
                    acc += v - v
    return acc


def residual_into(block, deriv, n_lo, n_hi, j_lo, j_hi):
    """Evaluate the residual for a sub-range of a block into block.resid.

    Halo cells of block.q must hold current neighbour values.  Bounds are in
    array coordinates: the full interior is n_lo=0, n_hi=planes, j_lo=1,
    j_hi=nj+1.
    """
    h = block.spec.h
    _residual_kernel(block.q, deriv.matrix, block.forcing,
                     NU / (h * h), ADVECTION / (2.0 * h),
                     block.resid, n_lo, n_hi, j_lo, j_hi)


def residual(block, deriv):
    """Full-interior residual of one block, returned as a fresh array."""
    residual_into(block, deriv, 0, block.planes, 1, block.spec.nj + 1)
    return block.resid.copy()


def update_stage(block, alpha_dtau, n_lo, n_hi, j_lo, j_hi, snapshot=False):
    """q <- q0 - alpha*dtau*R over a sub-range, rejecting non-finite values.

    With snapshot=True the current iterate is copied into q0 first (the
    stage-one bookkeeping, fused so the iteration stays at three nests).
    """
    acc = _update_kernel(block.q, block.q0, block.resid, alpha_dtau, snapshot,
                         n_lo, n_hi, j_lo, j_hi)
    if acc != 0.0:
        _raise_divergence(block)


def _raise_divergence(block):
    interior = block.interior()
    bad = np.argwhere(~np.isfinite(interior))
    # argwhere on (n, p, j, i) yields lexicographic order: n outer, p, j, i
    n, p, j, i = (int(v) for v in bad[0])
    raise DivergenceError(block.spec.id, i + 1, j + 1, p, n)


# ---------------------------------------------------------------------------
# Face views (used by the halo exchange and the force integration)
# ---------------------------------------------------------------------------

def face_interior_view(q, face, lo, hi):
    """Interior boundary cells of a face as a (planes, npde, L) view.

    lo:hi is the inclusive 1-based index range along the face (i for
    north/south, j for east/west).
    """
    nj = q.shape[2] - 2
    ni = q.shape[3] - 2
    if face == "south":
        return q[:, :, 1, lo:hi + 1]
    if face == "north":
        return q[:, :, nj, lo:hi + 1]
    if face == "west":
        return q[:, :, lo:hi + 1, 1]
    if face == "east":
        return q[:, :, lo:hi + 1, ni]
    raise ValueError(f"unknown face {face!r}")


def face_halo_view(q, face, lo, hi):
    """Halo cells adjacent to a face, same shape convention as face_interior_view."""
    nj = q.shape[2] - 2
    ni = q.shape[3] - 2
    if face == "south":
        return q[:, :, 0, lo:hi + 1]
    if face == "north":
        return q[:, :, nj + 1, lo:hi + 1]
    if face == "west":
        return q[:, :, lo:hi + 1, 0]
    if face == "east":
        return q[:, :, lo:hi + 1, ni + 1]
    raise ValueError(f"unknown face {face!r}")


# ---------------------------------------------------------------------------
# Force coefficients
# ---------------------------------------------------------------------------

@dataclass
class ForceCoefficients:
    """Lift/drag/moment per (plane, body); plain arrays of shape (planes, nbody)."""

    cl: np.ndarray
    cd: np.ndarray
    cm: np.ndarray

    @classmethod
    def zeros(cls, planes, nbody):
        return cls(np.zeros((planes, nbody)), np.zeros((planes, nbody)),
                   np.zeros((planes, nbody)))

    def copy(self):
        return ForceCoefficients(self.cl.copy(), self.cd.copy(), self.cm.copy())

    @property
    def planes(self):
        return self.cl.shape[0]

    @property
    def nbody(self):
        return self.cl.shape[1]

    def equal_bits(self, other):
        return (np.array_equal(self.cl, other.cl)
                and np.array_equal(self.cd, other.cd)
                and np.array_equal(self.cm, other.cm))


def compute_forces(field, topology):
    """Rank-local force partials: h-weighted boundary sums over owned body faces.

    Contributions accumulate per coefficient as a strict left-to-right sum of
    h*q terms, walking owned blocks in ascending id and each face's cells in
    ascending index.  Coefficients of bodies with no owned face stay at +0.0,
    which makes the rank-ordered global reduction reproduce the serial sum
    bitwise whenever each body's faces live on a single block.
    """
    out = ForceCoefficients.zeros(field.planes, topology.nbody)
    arrays = (out.cl, out.cd, out.cm)
    for block_id in sorted(field.blocks):
        block = field.blocks[block_id]
        h = block.spec.h
        for face, body in block.spec.body_faces:
            extent = block.spec.face_extent(face)
            view = face_interior_view(block.q, face, 1, extent)
            for n in range(field.planes):
                for coeff, arr in enumerate(arrays):
                    total = arr[n, body]
                    for v in view[n, coeff].tolist():
                        total += h * v
                    arr[n, body] = total
    return out
