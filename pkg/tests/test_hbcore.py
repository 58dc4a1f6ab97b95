"""Solver-core tests: spectral operator, residual, forces, stage update."""

import math

import numpy as np
import pytest

from hbproxy import hbcore
from hbproxy.cases import pair_case
from hbproxy.driver import RunSpec, run_case
from hbproxy.errors import DivergenceError, DomainError
from hbproxy.hbcore import (ADVECTION, NU, BlockState, ForceCoefficients,
                            HarmonicField, RKScheme, compute_forces,
                            face_halo_view, face_interior_view, forcing_values,
                            initial_values, residual, residual_into,
                            spectral_matrix, update_stage)
from hbproxy.mesh import BlockSpec, Topology


# ---------------------------------------------------------------------------
# Spectral derivative operator
# ---------------------------------------------------------------------------

def _fft_derivative(samples, omega):
    """Independent oracle: differentiate periodic samples via the DFT."""
    n = samples.size
    coeff = np.fft.fft(samples)
    k = np.fft.fftfreq(n, d=1.0 / n)  # integer wavenumbers
    return np.real(np.fft.ifft(coeff * 1j * k * omega))


def test_spectral_nharms0_is_scalar_zero():
    d = spectral_matrix(0, 2.0)
    assert d.matrix.shape == (1, 1)
    assert d.matrix[0, 0] == 0.0


def test_spectral_constant_annihilated():
    for nharms in (1, 3, 6):
        d = spectral_matrix(nharms, 1.7)
        ones = np.ones(d.planes)
        assert np.abs(d.matrix @ ones).max() <= 1e-14


def test_spectral_antisymmetry_is_exact():
    for nharms in range(9):
        d = spectral_matrix(nharms, 1.0).matrix
        assert np.array_equal(d, -d.T)


def test_spectral_cosine_derivative_vs_fft_oracle():
    omega = 1.0
    d = spectral_matrix(1, omega)
    t = np.arange(3) * d.period / 3
    samples = np.cos(omega * t)
    expect = -omega * np.sin(omega * t)
    got = d.matrix @ samples
    assert np.abs(got - expect).max() <= 1e-12
    oracle = _fft_derivative(samples, omega)
    assert np.abs(got - oracle).max() <= 1e-12


@pytest.mark.parametrize("nharms", range(1, 9))
def test_spectral_derivative_all_harmonics(nharms):
    omega = 2.3
    d = spectral_matrix(nharms, omega)
    t = np.arange(d.planes) * d.period / d.planes
    for k in range(1, nharms + 1):
        got_c = d.matrix @ np.cos(k * omega * t)
        got_s = d.matrix @ np.sin(k * omega * t)
        assert np.abs(got_c - (-k * omega * np.sin(k * omega * t))).max() <= 1e-10
        assert np.abs(got_s - (k * omega * np.cos(k * omega * t))).max() <= 1e-10
        oracle = _fft_derivative(np.cos(k * omega * t), omega)
        assert np.abs(got_c - oracle).max() <= 1e-10


def test_spectral_row_sums_tiny():
    for nharms in range(1, 9):
        d = spectral_matrix(nharms, 1.0).matrix
        assert np.abs(d.sum(axis=1)).max() <= 1e-14


def test_spectral_rejects_bad_args():
    with pytest.raises(DomainError):
        spectral_matrix(-1, 1.0)
    with pytest.raises(DomainError):
        spectral_matrix(1, 0.0)


# ---------------------------------------------------------------------------
# Residual
# ---------------------------------------------------------------------------

def _block(ni=5, nj=5, h=0.2, planes=1, x0=10.0, y0=20.0):
    # origin far from 0 so the bundled forcing (sin products) is generic
    spec = BlockSpec(id=0, ni=ni, nj=nj, x0=x0, y0=y0, h=h)
    return BlockState(spec, planes)


def test_residual_uniform_field_no_forcing():
    block = _block(planes=3)
    block.forcing[:] = 0.0
    block.q[:] = 7.25  # includes halos: diffusion/convection difference terms vanish
    deriv = spectral_matrix(1, 1.0)
    r = residual(block, deriv)
    # constant-in-n data: spectral term is D @ (c, c, c) = c * row_sum ~ 0
    assert np.abs(r).max() <= 1e-13


def test_residual_interior_spike_hand_stencil():
    h = 0.2
    block = _block(h=h)
    block.forcing[:] = 0.0
    deriv = spectral_matrix(0, 1.0)
    block.q[0, 0, 3, 3] = 1.0  # spike at cell i=3, j=3
    r = residual(block, deriv)[0, 0]
    nu_h2 = NU / (h * h)
    adv = ADVECTION / (2 * h)
    # hand-evaluated 5-point stencil plus upwind-free centred convection
    assert r[2, 2] == 4.0 * nu_h2          # at the spike (j-1, i-1 indexing)
    assert r[2, 1] == -nu_h2 + adv         # west neighbour: sees spike to its east
    assert r[2, 3] == -nu_h2 - adv         # east neighbour
    assert r[1, 2] == -nu_h2               # south neighbour
    assert r[3, 2] == -nu_h2               # north neighbour
    assert r[0, 0] == 0.0


def test_residual_nharms0_matches_independent_steady_stencil():
    # independent implementation: plain numpy expression in the same order
    block = _block(planes=1)
    rng = np.random.default_rng(3)
    block.q[:] = rng.normal(size=block.q.shape)
    deriv = spectral_matrix(0, 1.0)
    got = residual(block, deriv)[0]

    q = block.q[0]
    h = block.spec.h
    c, w, e = q[:, 1:-1, 1:-1], q[:, 1:-1, :-2], q[:, 1:-1, 2:]
    s, n = q[:, :-2, 1:-1], q[:, 2:, 1:-1]
    acc = 4.0 * c
    acc = acc - w
    acc = acc - e
    acc = acc - s
    acc = acc - n
    acc = acc * (NU / (h * h))
    acc = acc + (e - w) * (ADVECTION / (2 * h))
    acc = acc + 0.0 * c  # the single m-term: D[0,0] = 0
    acc = acc + block.forcing[0]
    assert np.array_equal(got, acc)  # 0 ulp


def test_residual_subrange_matches_full():
    block = _block(ni=6, nj=7, planes=5)
    rng = np.random.default_rng(5)
    block.q[:] = rng.normal(size=block.q.shape)
    deriv = spectral_matrix(2, 1.3)
    full = residual(block, deriv)
    block.resid[:] = np.nan
    # two plane slabs and two row slabs must reproduce the same bits
    residual_into(block, deriv, 0, 2, 1, 8)
    residual_into(block, deriv, 2, 5, 1, 8)
    assert np.array_equal(block.resid, full)
    block.resid[:] = np.nan
    residual_into(block, deriv, 0, 5, 1, 4)
    residual_into(block, deriv, 0, 5, 4, 8)
    assert np.array_equal(block.resid, full)


def test_forcing_only_on_planes_one_and_two():
    block = _block(planes=7)
    assert np.all(block.forcing[0] == 0.0)
    assert np.abs(block.forcing[1]).max() > 0.0
    assert np.abs(block.forcing[2]).max() > 0.0
    assert np.all(block.forcing[3:] == 0.0)
    steady = _block(planes=1)
    assert np.all(steady.forcing == 0.0)


def test_initial_values_slicing_invariant():
    spec = BlockSpec(id=0, ni=6, nj=8, x0=1.5, y0=-0.25, h=0.125)
    full = initial_values(spec, 5, 4, 0, 5, 1, 9)
    part = np.concatenate([initial_values(spec, 5, 4, 0, 2, 1, 9),
                           initial_values(spec, 5, 4, 2, 5, 1, 9)])
    assert np.array_equal(full, part)
    rows = np.concatenate([initial_values(spec, 5, 4, 0, 5, 1, 4),
                           initial_values(spec, 5, 4, 0, 5, 4, 9)], axis=2)
    assert np.array_equal(full, rows)


# ---------------------------------------------------------------------------
# Stage update and divergence
# ---------------------------------------------------------------------------

def test_update_dtau_zero_is_identity():
    result = run_case(RunSpec(case=pair_case(4, 4, nharms=1, h=0.25, dtau=0.0),
                              ranks=1, iterations=3))
    spec = BlockSpec(id=0, ni=4, nj=4, x0=0.0, y0=0.0, h=0.25)
    want = initial_values(spec, 3, 4, 0, 3, 1, 5)
    assert np.array_equal(result.fields[0][:, :, 1:5, 1:5], want)


def test_update_detects_divergence_with_location():
    block = _block()
    block.q[:] = 1.0
    block.resid[:] = 0.0
    block.resid[0, 2, 1, 3] = np.inf
    with pytest.raises(DivergenceError) as err:
        update_stage(block, 1.0, 0, 1, 1, 6, snapshot=True)
    assert (err.value.block, err.value.n) == (0, 0)
    assert (err.value.i, err.value.j, err.value.p) == (4, 2, 2)


def test_rkscheme_validation():
    with pytest.raises(DomainError):
        RKScheme(dtau=-1.0)
    with pytest.raises(DomainError):
        RKScheme(dtau=0.1, alphas=(0.5, 0.5))
    assert RKScheme(dtau=0.0).alphas[-1] == 1.0


# ---------------------------------------------------------------------------
# Forces
# ---------------------------------------------------------------------------

def _force_setup(body_faces, planes=3):
    spec = BlockSpec(id=0, ni=4, nj=4, x0=0.0, y0=0.0, h=0.25,
                     body_faces=body_faces)
    topo = Topology(blocks=(spec,), cuts=(), nbody=2)
    field = HarmonicField.allocate([spec], planes)
    return field, topo


def test_forces_no_owned_faces_are_zero():
    field, topo = _force_setup(())
    forces = compute_forces(field, topo)
    assert np.all(forces.cl == 0.0) and np.all(forces.cd == 0.0) and np.all(forces.cm == 0.0)


def test_forces_constant_face_integrand():
    field, topo = _force_setup((("south", 1),))
    field.blocks[0].q[:, :, :, :] = 1.0
    forces = compute_forces(field, topo)
    # 4-cell face with q = 1 everywhere: sum of h * 1 over the face
    h = 0.25
    expect = h + h + h + h
    assert np.all(forces.cl[:, 1] == expect)
    assert np.all(forces.cd[:, 1] == expect)
    assert np.all(forces.cm[:, 1] == expect)
    assert np.all(forces.cl[:, 0] == 0.0)


def test_forces_fold_order_is_sequential():
    field, topo = _force_setup((("north", 0),), planes=1)
    rng = np.random.default_rng(11)
    field.blocks[0].q[:] = rng.normal(size=field.blocks[0].q.shape)
    forces = compute_forces(field, topo)
    face = face_interior_view(field.blocks[0].q, "north", 1, 4)
    h = 0.25
    expect = 0.0
    for v in face[0, 0].tolist():
        expect += h * v
    assert forces.cl[0, 0] == expect


def test_face_views_address_expected_cells():
    spec = BlockSpec(id=0, ni=3, nj=2, x0=0.0, y0=0.0, h=1.0)
    state = BlockState(spec, 1)
    q = state.q
    q[0, 0, 1, 2] = 5.0   # cell (i=2, j=1): south face, index 2
    assert face_interior_view(q, "south", 1, 3)[0, 0, 1] == 5.0
    q[0, 0, 2, 3] = 6.0   # cell (i=3, j=2): north and east faces
    assert face_interior_view(q, "north", 1, 3)[0, 0, 2] == 6.0
    assert face_interior_view(q, "east", 1, 2)[0, 0, 1] == 6.0
    halo = face_halo_view(q, "west", 1, 2)
    halo[0, 0, 0] = 9.0
    assert q[0, 0, 1, 0] == 9.0
