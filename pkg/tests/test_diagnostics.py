import itertools
import math

import numpy as np
import pytest

from bftracer.basis import ExcitationBasis, StateVector
from bftracer.diagnostics import (
    alpha_envelope,
    alpha_trace,
    bogoliubov_dispersion,
    bogoliubov_spectrum_check,
    check_pair_sum_identity,
    check_quadratic_bound,
    error_curves,
    make_initial_state,
    quasiparticle_block_minimum,
    recap_state,
    run_identity_suite,
    truncation_tail,
)
from bftracer.errors import ValidationError
from bftracer.modes import (
    ModelParams,
    PotentialSpec,
    build_mode_set,
    kinetic_energy,
    preset_potential,
)
from bftracer.operators import joint_excitation_basis


def test_identity_suite_passes_default_small():
    report = run_identity_suite(n_list=(2, 3), n_random=5)
    assert report.all_passed, [r.name for r in report.failures()]
    assert report.max_deviation <= 1e-10


def test_identity_suite_free_model_trivial():
    ms = build_mode_set(1, 1)
    vz = preset_potential("zero", ms, kind="V")
    wz = preset_potential("zero", ms, kind="W")
    report = run_identity_suite(n_list=(2,), v=vz, w=wz, n_random=3)
    assert report.all_passed
    for r in report.results:
        if r.name.startswith(("v_conjugation", "w_conjugation")):
            assert r.deviation == 0.0


def test_identity_suite_detects_corrupted_potential():
    # evenness broken but realness kept, bypassing validation entirely
    ms = build_mode_set(1, 1)
    bad_v = PotentialSpec(kind="V", coeffs={(1,): 0.5 + 0.1j, (-1,): 0.5 - 0.1j})
    w = preset_potential("soft", ms, kind="W")
    report = run_identity_suite(n_list=(2, 3), v=bad_v, w=w, n_random=3)
    assert not report.all_passed
    failed = {r.name for r in report.failures()}
    assert any(name.startswith("v_conjugation") for name in failed)


def test_identity_suite_d2_spot_check():
    report = run_identity_suite(d=2, lam=1, n_list=(2,), tracer_cutoff=1,
                                n_random=3)
    assert report.all_passed, [r.name for r in report.failures()]


def test_initial_state_vacuum_gauss():
    ms = build_mode_set(1, 1)
    params = ModelParams(n_bosons=4, tracer_cutoff=2)
    phi, meta = make_initial_state("vacuum_gauss", ms, params, cap=4, sigma=1.5)
    counts = phi.basis.excitation_counts()
    assert np.all(phi.amplitudes[counts > 0] == 0)
    assert meta["alpha0"] == pytest.approx(1.0)
    assert phi.norm() == pytest.approx(1.0)


def test_initial_state_single_excitation_alpha0():
    ms = build_mode_set(1, 1)
    params = ModelParams(n_bosons=4, tracer_cutoff=2)
    phi, meta = make_initial_state("single_excitation", ms, params, cap=4)
    assert meta["alpha0"] == pytest.approx(4.0)
    assert meta["max_excitations"] == 1
    assert meta["h0_norm"] == pytest.approx(kinetic_energy((1,)), rel=1e-12)


def test_initial_state_pair_is_number_eigenstate():
    ms = build_mode_set(1, 1)
    params = ModelParams(n_bosons=4, tracer_cutoff=2)
    phi, meta = make_initial_state("pair_excitation", ms, params, cap=4)
    counts = phi.basis.excitation_counts()
    support = counts[np.abs(phi.amplitudes) > 0]
    assert set(support.tolist()) == {2}
    assert meta["nplus1_norm"] == pytest.approx(3.0)


def test_initial_state_errors():
    ms = build_mode_set(1, 1)
    params = ModelParams(n_bosons=4, tracer_cutoff=2)
    with pytest.raises(ValidationError, match="cap"):
        make_initial_state("pair_excitation", ms, params, cap=1)
    with pytest.raises(ValidationError, match="unknown initial state"):
        make_initial_state("squeezed", ms, params, cap=4)
    with pytest.raises(ValidationError, match="nonzero mode"):
        make_initial_state("single_excitation", ms, params, cap=4, p=(0,))


def test_truncation_tail_exact():
    ms = build_mode_set(1, 1)
    params = ModelParams(n_bosons=8, tracer_cutoff=1)
    jb = joint_excitation_basis(ms, params, 6)
    exc = jb.boson
    amps = np.zeros(jb.dimension, dtype=complex)
    # one component per excitation level n, amplitude c_n = 1/(n+1)
    for n in range(7):
        occ = [n, 0]
        idx = jb.flat_index(0, exc.index_of(occ))
        amps[idx] = 1.0 / (n + 1)
    amps /= np.linalg.norm(amps)
    phi = StateVector(jb, amps)
    counts = jb.excitation_counts()
    for n_max in (0, 2, 4):
        tail, bound = truncation_tail(phi, n_max)
        exact = float(np.linalg.norm(amps[counts > n_max]))
        assert tail == exact
        assert tail <= bound


def test_recap_round_trip():
    ms = build_mode_set(1, 1)
    params = ModelParams(n_bosons=8, tracer_cutoff=1)
    phi, _ = make_initial_state("pair_excitation", ms, params, cap=4)
    up = recap_state(phi, joint_excitation_basis(ms, params, 7))
    back = recap_state(up, joint_excitation_basis(ms, params, 4))
    assert np.array_equal(back.amplitudes, phi.amplitudes)


def test_alpha_free_model_constant():
    ms = build_mode_set(1, 1)
    vz = preset_potential("zero", ms, kind="V")
    wz = preset_potential("zero", ms, kind="W")
    params = ModelParams(n_bosons=6, tracer_cutoff=2)
    phi, _ = make_initial_state("single_excitation", ms, params, cap=6)
    times = np.linspace(-2, 2, 9)
    for flavor in ("full", "aux", "bf"):
        tr = alpha_trace(flavor, ms, vz, wz, params, phi, times)
        assert np.max(np.abs(tr.values - tr.alpha0)) <= 1e-10
        assert tr.fitted_rate == 0.0


def test_alpha_grows_and_envelope_holds():
    ms = build_mode_set(1, 1)
    v = preset_potential("soft", ms, kind="V")
    w = preset_potential("soft", ms, kind="W")
    times = np.linspace(-1.0, 1.0, 9)
    traces = []
    for n in (4, 8):
        params = ModelParams(n_bosons=n, tracer_cutoff=2)
        phi, _ = make_initial_state("vacuum_gauss", ms, params, cap=min(n, 6))
        for flavor in ("full", "aux", "bf"):
            traces.append(alpha_trace(flavor, ms, v, w, params, phi, times))
    for tr in traces:
        assert tr.alpha0 == pytest.approx(1.0)
        assert np.max(tr.values) > 1.0  # the coupling does create excitations
        assert np.all(tr.values >= tr.norms**2 - 1e-12)
    v_star, ok, worst = alpha_envelope(traces)
    assert ok, worst


def test_error_curves_zero_time_and_free_model():
    ms = build_mode_set(1, 1)
    v = preset_potential("soft", ms, kind="V")
    w = preset_potential("soft", ms, kind="W")
    params = ModelParams(n_bosons=4, tracer_cutoff=2)
    phi, _ = make_initial_state("single_excitation", ms, params, cap=4)
    out = error_curves(0.0, [4, 8], ms, v, w, phi, tracer_cutoff=2)
    assert all(e <= 1e-12 for e in out["total"].errors)
    vz = preset_potential("zero", ms, kind="V")
    wz = preset_potential("zero", ms, kind="W")
    out = error_curves(1.0, [4, 8], ms, vz, wz, phi, tracer_cutoff=2)
    assert all(e <= 1e-9 for e in out["total"].errors)
    assert all(e <= 1e-9 for e in out["aux_gap"].errors)


def test_error_curves_small_sweep_decreases():
    ms = build_mode_set(1, 1)
    v = preset_potential("soft", ms, kind="V")
    w = preset_potential("soft", ms, kind="W")
    params = ModelParams(n_bosons=4, tracer_cutoff=2)
    phi, _ = make_initial_state("single_excitation", ms, params, cap=4)
    out = error_curves(0.5, [4, 8, 16], ms, v, w, phi, tracer_cutoff=2)
    tot = out["total"]
    assert tot.nonincreasing_ok()
    assert tot.bound_ok()
    assert out["triangle_ok"]
    assert tot.slope is not None and tot.slope <= -0.25


def test_pair_sum_and_quadratic_bound_random(rng):
    ms = build_mode_set(1, 1)
    exc = ExcitationBasis(ms, 6)
    assert check_pair_sum_identity(exc, rng, 20) <= 1e-10
    assert check_quadratic_bound(exc, rng, 20) <= 1e-12


def test_dispersion_closed_form():
    eps = kinetic_energy((1,))
    assert bogoliubov_dispersion(eps, 0.0) == eps
    assert bogoliubov_dispersion(eps, 0.5) == pytest.approx(
        math.sqrt(eps**2 + 2 * eps), rel=1e-15)
    with pytest.raises(ValidationError, match="complex dispersion"):
        bogoliubov_dispersion(1.0, -1.0)


def test_quasiparticle_block_minimum_vs_brute_force():
    # independent brute force with explicit occupation loops
    ms = build_mode_set(1, 2)
    v = preset_potential("soft", ms, kind="V")
    disp = {p: bogoliubov_dispersion(kinetic_energy(p), float(v(p).real))
            for p in ms.nonzero_modes}
    modes = sorted(disp)
    for q in modes:
        best = math.inf
        for counts in itertools.product(range(5), repeat=len(modes)):
            mom = sum(c * m[0] for c, m in zip(counts, modes))
            if mom == q[0]:
                best = min(best, sum(c * disp[m] for c, m in zip(counts, modes)))
        assert quasiparticle_block_minimum(disp, q) == pytest.approx(best, rel=1e-14)


def test_error_cell_d2_spot_check():
    ms = build_mode_set(2, 1)
    v = preset_potential("soft", ms, kind="V", strength=0.5)
    w = preset_potential("soft", ms, kind="W", strength=0.5)
    params = ModelParams(n_bosons=2, tracer_cutoff=1)
    phi, _ = make_initial_state("single_excitation", ms, params, cap=2,
                                p=(1, 0), q0=(0, 0))
    from bftracer.diagnostics import error_cell
    cell = error_cell(2, 0.2, ms, v, w, phi, tracer_cutoff=1, cap_max=2)
    assert cell["triangle_ok"]
    assert 0 < cell["error_total"] < 1.0
    assert cell["error_total"] <= cell["gap_aux"] + cell["gap_aux_bf"] + 1e-12


def test_spectrum_free_model_exact():
    ms = build_mode_set(1, 2)
    vz = preset_potential("zero", ms, kind="V")
    report = bogoliubov_spectrum_check(ms, vz, caps=(2, 4))
    assert not report.unstable
    for p in ((1,), (-1,)):
        assert report.gaps[4][p] == kinetic_energy(p)
        assert report.dispersion[p] == kinetic_energy(p)
    assert report.ground_energies[4] == 0.0


def test_spectrum_soft_converges_to_oracle():
    ms = build_mode_set(1, 2)
    v = preset_potential("soft", ms, kind="V")
    report = bogoliubov_spectrum_check(ms, v, caps=(2, 4, 6, 8))
    assert not report.unstable
    assert report.converged_ok
    assert report.max_deviation <= 1e-6
    assert report.monotone_ok
    # ground state energy is strictly negative for an attractive-free,
    # repulsive-in-momentum table, and matches the pair closed form
    e0 = report.ground_energies[8]
    assert e0 < 0
    assert e0 == pytest.approx(report.ground_energy_oracle, abs=1e-9)


def test_spectrum_d2_free_exact():
    ms = build_mode_set(2, 1)
    vz = preset_potential("zero", ms, kind="V")
    report = bogoliubov_spectrum_check(ms, vz, caps=(2, 3))
    assert report.gaps[3][(1, 0)] == kinetic_energy((1, 0))
    assert report.gaps[3][(1, 1)] == kinetic_energy((1, 1))


def test_spectrum_unstable_flag_and_dive():
    ms = build_mode_set(1, 1)
    # v0 = -10 keeps eps + 4 vhat > 0 (eps = 4 pi^2 dominates): stable
    mild = preset_potential("soft", ms, kind="V", strength=-10.0)
    assert not bogoliubov_spectrum_check(ms, mild, caps=(2,)).unstable
    # v0 = -25 crosses the threshold at |p| = 1: unstable, ground state dives
    strong = preset_potential("soft", ms, kind="V", strength=-25.0)
    report = bogoliubov_spectrum_check(ms, strong, caps=(2, 4, 6))
    assert report.unstable
    assert report.max_deviation is None
    e0 = [report.ground_energies[c] for c in (2, 4, 6)]
    assert e0[1] < e0[0] - 5 and e0[2] < e0[1] - 5
