import numpy as np
import pytest
import scipy.sparse as sp

from bftracer.basis import FlatBasis, StateVector, basis_state
from bftracer.errors import (
    BasisMismatchError,
    ConvergenceError,
    DimensionLimitError,
    ValidationError,
)
from bftracer.modes import ModelParams, build_mode_set, preset_potential
from bftracer.operators import (
    SparseHermitianOperator,
    assemble_bog,
    assemble_full,
    block_decompose,
)
from bftracer.propagate import (
    PropagationConfig,
    dense_expm,
    evolve,
    evolve_blocked,
    evolve_on_grid,
)


def random_hermitian_op(dim, rng, density=0.08):
    nnz = max(1, int(density * dim * dim / 2))
    rows = rng.integers(0, dim, nnz)
    cols = rng.integers(0, dim, nnz)
    vals = rng.standard_normal(nnz) + 1j * rng.standard_normal(nnz)
    upper = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    return SparseHermitianOperator(upper + upper.getH(), FlatBasis(dim))


def random_state(basis, rng):
    amps = rng.standard_normal(basis.dimension) + 1j * rng.standard_normal(basis.dimension)
    return StateVector(basis, amps / np.linalg.norm(amps))


def test_diagonal_is_exact_phase():
    basis = FlatBasis(3)
    op = SparseHermitianOperator(sp.diags([0.0, 1.0, 2.5]), basis)
    psi = StateVector(basis, np.array([1.0, 1.0, 1.0], dtype=complex) / np.sqrt(3))
    out = evolve(op, psi, PropagationConfig(time=0.7))
    expected = np.exp(-1j * 0.7 * np.array([0.0, 1.0, 2.5])) * psi.amplitudes
    assert np.array_equal(out.amplitudes, expected)


def test_zero_time_is_identity(rng):
    op = random_hermitian_op(40, rng)
    psi = random_state(op.basis, rng)
    out = evolve(op, psi, PropagationConfig(time=0.0))
    assert np.array_equal(out.amplitudes, psi.amplitudes)


def test_krylov_matches_dense_oracle_200(rng):
    op = random_hermitian_op(200, rng)
    psi = random_state(op.basis, rng)
    for t in (0.6, -1.4):
        a = evolve(op, psi, PropagationConfig(time=t))
        b = dense_expm(op, psi, t)
        assert np.linalg.norm(a.amplitudes - b.amplitudes) < 1e-8


def test_conservation_and_reversal(rng):
    op = random_hermitian_op(150, rng)
    psi = random_state(op.basis, rng)
    t = 2.0
    cfg = PropagationConfig(time=t)
    out = evolve(op, psi, cfg)
    assert abs(out.norm() - 1.0) <= 1e-9 * (1 + t)
    assert abs(op.expectation(out) - op.expectation(psi)) <= 1e-9 * (1 + t)
    back = evolve(op, out, PropagationConfig(time=-t))
    assert np.linalg.norm(back.amplitudes - psi.amplitudes) <= 1e-8


def test_eigenstate_gets_pure_phase(rng):
    op = random_hermitian_op(60, rng)
    vals, vecs = np.linalg.eigh(op.to_dense())
    psi = StateVector(op.basis, vecs[:, 7].astype(complex))
    out = evolve(op, psi, PropagationConfig(time=1.3))
    expected = np.exp(-1j * 1.3 * vals[7]) * psi.amplitudes
    assert np.linalg.norm(out.amplitudes - expected) < 1e-9


def test_evolve_blocked_matches_full(rng):
    ms = build_mode_set(1, 1)
    v = preset_potential("soft", ms, kind="V")
    w = preset_potential("soft", ms, kind="W")
    params = ModelParams(n_bosons=5, tracer_cutoff=2)
    h = assemble_full(ms, v, w, params)
    decomp = block_decompose(h)
    psi = random_state(h.basis, rng)
    cfg = PropagationConfig(time=0.9)
    full = evolve(h, psi, cfg)
    blocked = evolve_blocked(decomp, psi, cfg)
    assert np.linalg.norm(full.amplitudes - blocked.amplitudes) < 1e-10
    oracle = dense_expm(h, psi, 0.9)
    assert np.linalg.norm(blocked.amplitudes - oracle.amplitudes) < 1e-9


def test_free_model_analytic_phases():
    ms = build_mode_set(1, 1)
    vz = preset_potential("zero", ms, kind="V")
    bog = assemble_bog(ms, vz, cap=3)
    exc = bog.basis
    idx = exc.index_of([1, 2])
    psi = basis_state(exc, idx)
    t = 0.31
    out = evolve(bog, psi, PropagationConfig(time=t))
    energy = bog.matrix.diagonal()[idx].real
    assert out.amplitudes[idx] == pytest.approx(np.exp(-1j * t * energy), rel=1e-12)


def test_physical_hamiltonian_krylov_vs_dense(rng):
    ms = build_mode_set(1, 1)
    v = preset_potential("soft", ms, kind="V")
    w = preset_potential("soft", ms, kind="W")
    params = ModelParams(n_bosons=6, tracer_cutoff=2)
    h = assemble_full(ms, v, w, params)
    psi = random_state(h.basis, rng)
    a = evolve(h, psi, PropagationConfig(time=1.0))
    b = dense_expm(h, psi, 1.0)
    assert np.linalg.norm(a.amplitudes - b.amplitudes) < 1e-8


def test_non_convergence_reports_residual(rng):
    op = random_hermitian_op(300, rng)
    psi = random_state(op.basis, rng)
    cfg = PropagationConfig(time=200.0, tolerance=1e-12, krylov_dim=5,
                            max_substeps=2)
    with pytest.raises(ConvergenceError) as err:
        evolve(op, psi, cfg)
    assert err.value.residual is not None


def test_basis_mismatch(rng):
    op = random_hermitian_op(20, rng)
    other = StateVector(FlatBasis(21), np.zeros(21, dtype=complex))
    with pytest.raises(BasisMismatchError):
        evolve(op, other, PropagationConfig(time=0.1))


def test_dense_guard():
    basis = FlatBasis(10)
    op = SparseHermitianOperator(sp.identity(10, dtype=complex), basis)
    psi = basis_state(basis, 0)
    with pytest.raises(DimensionLimitError):
        dense_expm(op, psi, 0.1, limit=5)


def test_config_validation():
    with pytest.raises(ValidationError):
        PropagationConfig(time=1.0, tolerance=0.0)
    with pytest.raises(ValidationError):
        PropagationConfig(time=1.0, krylov_dim=1)


def test_evolve_on_grid_mixed_signs(rng):
    op = random_hermitian_op(80, rng)
    psi = random_state(op.basis, rng)
    times = [-1.0, -0.25, 0.0, 0.5, 1.5]
    states = evolve_on_grid(op, psi, times, PropagationConfig(time=0.0))
    for t, state in zip(times, states):
        oracle = dense_expm(op, psi, t)
        assert np.linalg.norm(state.amplitudes - oracle.amplitudes) < 1e-8
    assert np.array_equal(states[2].amplitudes, psi.amplitudes)
