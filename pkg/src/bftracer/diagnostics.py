"""Measurement layer: exact identity suite, excitation growth traces,
effective-dynamics error curves, and the quasiparticle spectrum check
with its closed-form oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import (
    ExcitationBasis,
    JointBasis,
    SectorBasis,
    StateVector,
    apply_annihilate,
    apply_create,
    basis_state,
)
from .errors import DimensionLimitError, ValidationError
from .modes import (
    ModelParams,
    ModeSet,
    PotentialSpec,
    build_mode_set,
    kinetic_energy,
    preset_potential,
)
from .operators import (
    V_CLASSES,
    _cubic_create,
    _exchange_diag,
    _pairing_create,
    _quartic,
    _tracer_shift,
    _w_create,
    _w_full,
    assemble_aux,
    assemble_bf,
    assemble_bog,
    assemble_full,
    assemble_h0,
    assemble_u_map,
    block_decompose,
    boson_kinetic_diag,
    joint_embed,
    joint_excitation_basis,
    joint_sector_basis,
    joint_u_map,
    ladder_pair_matrix,
    momentum_defect,
    tracer_kinetic_diag,
    truncate_excitations,
)
from .propagate import PropagationConfig, evolve, evolve_on_grid

IDENTITY_TOL = 1e-10
UNITARITY_TOL = 1e-14
SPECTRUM_TOL = 1e-6
DOUBLING_TOL = 1e-6


# ---------------------------------------------------------------------------
# identity suite
# ---------------------------------------------------------------------------


@dataclass
class IdentityResult:
    name: str
    n_bosons: int
    deviation: float
    tolerance: float
    passed: bool
    note: str = ""

    def as_record(self) -> dict:
        return {
            "kind": "identity",
            "name": self.name,
            "n_bosons": self.n_bosons,
            "deviation": self.deviation if math.isfinite(self.deviation) else None,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "note": self.note,
        }


@dataclass
class IdentityReport:
    results: list

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def max_deviation(self) -> float:
        return max((r.deviation for r in self.results), default=0.0)

    def failures(self):
        return [r for r in self.results if not r.passed]


#: one-line description of every identity the suite checks
IDENTITY_INVENTORY = {
    "v_conjugation/exchange": "condensate-exchange part of the pair interaction, conjugated by the excitation map, equals its depletion-weighted excitation form",
    "v_conjugation/pair_create": "double condensate annihilation maps to depletion-weighted pair creation",
    "v_conjugation/pair_annihilate": "double condensate creation maps to depletion-weighted pair annihilation",
    "v_conjugation/cubic": "single-condensate scattering maps to the depletion-weighted cubic excitation terms",
    "v_conjugation/quartic": "condensate-free scattering is invariant under the excitation map",
    "v_conjugation/vanishing": "every remaining condensate-leg pattern of the interaction vanishes for a mean-zero potential",
    "v_conjugation/total": "the conjugated pair interaction equals the sum of its five excitation-space terms",
    "w_conjugation/create": "tracer-driven excitation creation acquires one depletion square root",
    "w_conjugation/annihilate": "tracer-driven excitation annihilation acquires one depletion square root",
    "w_conjugation/dgamma": "the condensate-orthogonal tracer exchange is invariant under the excitation map",
    "w_conjugation/total": "the conjugated tracer coupling equals its three excitation-space terms",
    "ladder_conjugation/number": "the condensate number operator maps to N - N_+",
    "ladder_conjugation/create": "a_p^dagger a_0 maps to a_p^dagger sqrt(N - N_+)",
    "ladder_conjugation/annihilate": "a_0^dagger a_p maps to sqrt(N - N_+) a_p",
    "ladder_conjugation/preserve": "excited-pair operators a_p^dagger a_q are invariant",
    "commutator/pair_create": "[N_+, pair creation] = +2 pair creation",
    "commutator/pair_annihilate": "[N_+, pair annihilation] = -2 pair annihilation",
    "commutator/cubic": "[N_+, depletion-weighted cubic creation] = + the same term",
    "aux_decomposition": "conjugated full Hamiltonian minus the quadratic model equals tracer exchange + cubic + quartic remainders",
    "aux_vs_dense_oracle": "sparse quadratic model equals a dense ladder-action oracle",
    "bf_from_aux": "dropping the depletion square roots from the quadratic model yields the effective tracer-field Hamiltonian",
    "number_pair_sum": "sum_jk |a_j a_k psi|^2 equals <psi, N_+(N_+ - 1) psi>",
    "quadratic_bound/annihilate": "|sum M_jk a_j a_k psi| <= |M|_2 |N_+ psi|",
    "quadratic_bound/create": "|sum M_jk a_j^dagger a_k^dagger psi| <= |M|_2 |(N_+ + 2) psi|",
    "coefficient_l2/pair": "l2 norm of the pair-creation coefficient table is bounded by the potential's L2 norm",
    "coefficient_l2/exchange": "l2 norm of the exchange coefficient table is bounded by the potential's L2 norm",
    "u_map/unitary": "the excitation map is unitary",
    "momentum_block/full": "the full Hamiltonian commutes exactly with total momentum",
    "momentum_block/aux": "the quadratic model commutes exactly with total momentum",
    "momentum_block/bog": "the quadratic excitation Hamiltonian commutes exactly with total momentum",
    "momentum_block/bf": "the effective Hamiltonian commutes exactly with total momentum",
    "hermiticity/all": "every assembled operator is Hermitian to 1e-12 entrywise",
}


def _rel_dev(a, b=None) -> float:
    """Relative Frobenius deviation; absolute when both sides are zero."""
    a = sp.csr_matrix(a)
    if b is None:
        nrm = sp.linalg.norm(a) if a.nnz else 0.0
        return float(nrm)
    b = sp.csr_matrix(b)
    num = sp.linalg.norm(a - b) if (a - b).nnz else 0.0
    den = max(sp.linalg.norm(a) if a.nnz else 0.0,
              sp.linalg.norm(b) if b.nnz else 0.0)
    if den == 0.0:
        return 0.0
    return float(num / den)


def _conj_by(u, m):
    return (u @ m @ u.getH()).tocsr()


def _dense_creation(exc: ExcitationBasis, mode_idx: int, weight=None) -> np.ndarray:
    """Dense ``a_k^dagger g(N_+)`` built from low-level ladder actions."""
    dim = exc.dimension
    totals = exc.totals()
    mat = np.zeros((dim, dim), dtype=np.complex128)
    for col in range(dim):
        n = int(totals[col])
        if n + 1 > exc.cap:
            continue
        out = apply_create(basis_state(exc, col), mode_idx)
        scale = 1.0 if weight is None else weight(n)
        mat[:, col] = scale * out.amplitudes
    return mat


def _dense_quadratic_oracle(jb: JointBasis, v: PotentialSpec, w: PotentialSpec,
                            params: ModelParams, depletion: bool) -> np.ndarray:
    """Dense quadratic Hamiltonian built columnwise from ladder actions.

    With ``depletion`` the sqrt(N - N_+) factors and mean-field prefactors
    are included (the cap-N quadratic model); without it they are replaced
    by one (the effective tracer-field Hamiltonian).
    """
    exc = jb.boson
    n = params.n_bosons
    t_dim = jb.n_tracer
    b_dim = exc.dimension
    totals = exc.totals()
    eye_t = np.eye(t_dim)

    weight = (lambda m: math.sqrt(max(n - m, 0))) if depletion else None
    pair_pref = 1.0 / n if depletion else 1.0
    exch_pref = (2.0 / n) if depletion else 2.0
    w_pref = params.g_tracer if depletion else 1.0

    kin = (tracer_kinetic_diag(jb.tracer, params.tracer_mass)[:, None]
           + boson_kinetic_diag(exc)[None, :]).ravel()
    h = np.diag(kin.astype(np.complex128))

    exch = np.zeros(b_dim, dtype=np.complex128)
    for col in range(b_dim):
        occ = exc.occupations[col]
        val = sum(complex(v(m)) * occ[i] for i, m in enumerate(exc.modes))
        if depletion:
            val *= (n - totals[col])
        exch[col] = val
    h += exch_pref * np.kron(eye_t, np.diag(exch))

    pair = np.zeros((b_dim, b_dim), dtype=np.complex128)
    lookup = {m: i for i, m in enumerate(exc.modes)}
    for col in range(b_dim):
        m_col = int(totals[col])
        if m_col + 2 > exc.cap:
            continue
        for p, vp in sorted(v.coeffs.items()):
            neg = tuple(-c for c in p)
            if p not in lookup or neg not in lookup:
                continue
            st = basis_state(exc, col)
            if weight is not None:
                st = StateVector(exc, weight(m_col) * st.amplitudes)
            st = apply_create(st, lookup[neg])
            if weight is not None:
                st = StateVector(exc, weight(m_col + 1) * st.amplitudes)
            st = apply_create(st, lookup[p])
            pair[:, col] += complex(vp) * st.amplitudes
    pair_joint = pair_pref * np.kron(eye_t, pair)
    h += pair_joint + pair_joint.conj().T

    for k_idx, k_mode in enumerate(exc.modes):
        coeff = complex(w(tuple(-c for c in k_mode)))
        if coeff == 0:
            continue
        shift = _tracer_shift(jb.tracer, tuple(-c for c in k_mode)).toarray()
        term = w_pref * coeff * np.kron(shift, _dense_creation(exc, k_idx, weight))
        h += term + term.conj().T
    return h


def check_pair_sum_identity(exc: ExcitationBasis, rng, n_states: int) -> float:
    """Max relative deviation of sum_jk |a_j a_k psi|^2 from
    <psi, N_+(N_+ - 1) psi> over random states."""
    m = len(exc.modes)
    counts = exc.totals().astype(float)
    worst = 0.0
    for _ in range(n_states):
        amps = rng.standard_normal(exc.dimension) + 1j * rng.standard_normal(exc.dimension)
        amps /= np.linalg.norm(amps)
        psi = StateVector(exc, amps)
        lhs = 0.0
        for k in range(m):
            ak = apply_annihilate(psi, k)
            for j in range(m):
                lhs += apply_annihilate(ak, j).norm() ** 2
        rhs = float(np.sum((counts * (counts - 1.0)) * np.abs(amps) ** 2))
        worst = max(worst, abs(lhs - rhs) / max(lhs, rhs, 1.0))
    return worst


def _annihilation_pair_dense(exc: ExcitationBasis, j: int, k: int) -> np.ndarray:
    dim = exc.dimension
    mat = np.zeros((dim, dim), dtype=np.complex128)
    for col in range(dim):
        st = apply_annihilate(basis_state(exc, col), k)
        st = apply_annihilate(st, j)
        mat[:, col] = st.amplitudes
    return mat


def check_quadratic_bound(exc: ExcitationBasis, rng, n_trials: int,
                          split: bool = False):
    """Max violation (positive part) of the quadratic ladder bounds over
    random coefficient matrices and random states; 0 means no violation.

    With ``split`` the annihilation and creation violations are returned
    separately; the creation case is probed on states with two units of
    cap headroom so no truncation can mask a violation.
    """
    m = len(exc.modes)
    pairs = np.empty((m, m), dtype=object)
    for j in range(m):
        for k in range(m):
            pairs[j, k] = _annihilation_pair_dense(exc, j, k)
    counts = exc.totals().astype(float)
    worst_down = 0.0
    worst_up = 0.0
    for _ in range(n_trials):
        coeff = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        a_down = sum(coeff[j, k] * pairs[j, k] for j in range(m) for k in range(m))
        amps = rng.standard_normal(exc.dimension) + 1j * rng.standard_normal(exc.dimension)
        amps /= np.linalg.norm(amps)
        mnorm = float(np.linalg.norm(coeff))
        lhs = float(np.linalg.norm(a_down @ amps))
        rhs = mnorm * float(np.linalg.norm(counts * amps))
        worst_down = max(worst_down, (lhs - rhs) / max(rhs, 1.0))
        head = amps.copy()
        head[counts > exc.cap - 2] = 0
        nrm = np.linalg.norm(head)
        if nrm > 0:
            head /= nrm
            a_up = a_down.conj().T
            lhs_up = float(np.linalg.norm(a_up @ head))
            rhs_up = mnorm * float(np.linalg.norm((counts + 2.0) * head))
            worst_up = max(worst_up, (lhs_up - rhs_up) / max(rhs_up, 1.0))
    if split:
        return worst_down, worst_up
    return max(worst_down, worst_up)


def run_identity_suite(d: int = 1, lam: int = 1, n_list=(2, 3, 4, 5, 6),
                       v: PotentialSpec | None = None,
                       w: PotentialSpec | None = None,
                       tracer_mass: float = 1.0, tracer_cutoff: int = 2,
                       seed: int = 1234, n_random: int = 20,
                       dense_limit: int = 4000) -> IdentityReport:
    """Run every exact matrix identity at dense-oracle scale.

    All identities must pass at 1e-10 relative Frobenius deviation
    (unitarity at 1e-14, momentum conservation exactly).
    """
    ms = build_mode_set(d, lam)
    if v is None:
        v = preset_potential("soft", ms, kind="V")
    if w is None:
        w = preset_potential("soft", ms, kind="W")
    rng = np.random.default_rng(seed)
    results: list[IdentityResult] = []

    def record(name, n, dev, tol=IDENTITY_TOL, note=""):
        results.append(IdentityResult(name=name, n_bosons=n, deviation=float(dev),
                                      tolerance=tol, passed=bool(dev <= tol),
                                      note=note))

    def guarded(name, n, fn, tol=IDENTITY_TOL):
        try:
            dev = fn()
        except (ValidationError, DimensionLimitError) as exc:
            results.append(IdentityResult(name=name, n_bosons=n,
                                          deviation=float("inf"), tolerance=tol,
                                          passed=False, note=str(exc)))
            return
        record(name, n, dev, tol=tol)

    z = ms.zero_index
    for n in n_list:
        params = ModelParams(n_bosons=n, tracer_mass=tracer_mass,
                             tracer_cutoff=tracer_cutoff)
        sector = SectorBasis(ms, n)
        exc = ExcitationBasis(ms, n)
        jsec = joint_sector_basis(ms, params)
        jexc = joint_excitation_basis(ms, params, n)
        if jsec.dimension > dense_limit:
            raise DimensionLimitError(
                f"identity suite needs dense-oracle sizes; joint dimension "
                f"{jsec.dimension} exceeds {dense_limit}"
            )
        u = assemble_u_map(sector, exc)
        uj = joint_u_map(jsec, jexc)

        record("u_map/unitary", n,
               _rel_dev(u.getH() @ u, sp.identity(sector.dimension, format="csr")),
               tol=UNITARITY_TOL)

        depl = lambda m: float(n - m)
        root = lambda m: math.sqrt(max(n - m, 0))

        rhs_terms = {
            "exchange": 2.0 * _exchange_diag(exc, v, depletion=depl),
            "pair_create": _pairing_create(exc, v, weight=root),
            "quartic": _quartic(exc, v),
        }
        rhs_terms["pair_annihilate"] = rhs_terms["pair_create"].getH().tocsr()
        cubic_up = _cubic_create(exc, v, n)
        rhs_terms["cubic"] = (cubic_up + cubic_up.getH()).tocsr()

        lhs_classes = {
            "exchange": V_CLASSES["exchange"],
            "pair_create": V_CLASSES["pair_create"],
            "pair_annihilate": V_CLASSES["pair_annihilate"],
            "cubic": V_CLASSES["cubic_create"] | V_CLASSES["cubic_annihilate"],
            "quartic": V_CLASSES["quartic"],
        }
        for term, classes in lhs_classes.items():
            guarded(f"v_conjugation/{term}", n,
                    lambda c=classes, t=term: _rel_dev(
                        _conj_by(u, _quartic(sector, v, classes=c)), rhs_terms[t]))
        guarded("v_conjugation/vanishing", n,
                lambda: _rel_dev(_conj_by(
                    u, _quartic(sector, v, classes=V_CLASSES["vanishing"]))))
        guarded("v_conjugation/total", n,
                lambda: _rel_dev(_conj_by(u, _quartic(sector, v)),
                                 sum(rhs_terms.values())))

        # tracer-coupling conjugation on the joint bases
        w_create_lhs = sp.csr_matrix((jsec.dimension, jsec.dimension),
                                     dtype=np.complex128)
        for j in ms.nonzero_indices:
            coeff = complex(w(tuple(-c for c in ms.modes[j])))
            if coeff == 0:
                continue
            shift = _tracer_shift(jsec.tracer, tuple(-c for c in ms.modes[j]))
            w_create_lhs = w_create_lhs + coeff * sp.kron(
                shift, ladder_pair_matrix(sector, j, z), format="csr")
        w_create_rhs = _w_create(jexc, w, weight=root)
        guarded("w_conjugation/create", n,
                lambda: _rel_dev(_conj_by(uj, w_create_lhs), w_create_rhs))
        guarded("w_conjugation/annihilate", n,
                lambda: _rel_dev(_conj_by(uj, w_create_lhs.getH()),
                                 w_create_rhs.getH()))
        guarded("w_conjugation/dgamma", n,
                lambda: _rel_dev(_conj_by(uj, _w_full(jsec, w, exclude_zero=True)),
                                 _w_full(jexc, w)))
        guarded("w_conjugation/total", n,
                lambda: _rel_dev(
                    _conj_by(uj, _w_full(jsec, w)),
                    w_create_rhs + w_create_rhs.getH() + _w_full(jexc, w)))

        # single ladder-pair conjugation identities
        counts = exc.totals().astype(float)
        guarded("ladder_conjugation/number", n,
                lambda: _rel_dev(_conj_by(u, ladder_pair_matrix(sector, z, z)),
                                 sp.diags(n - counts, format="csr")))
        dev_create = 0.0
        dev_annih = 0.0
        dev_preserve = 0.0
        for p in ms.nonzero_indices:
            p_exc = exc.modes.index(ms.modes[p])
            lhs_c = _conj_by(u, ladder_pair_matrix(sector, p, z))
            rhs_c = sp.csr_matrix(_dense_creation(exc, p_exc, weight=root))
            dev_create = max(dev_create, _rel_dev(lhs_c, rhs_c))
            dev_annih = max(dev_annih,
                            _rel_dev(_conj_by(u, ladder_pair_matrix(sector, z, p)),
                                     rhs_c.getH()))
            for q in ms.nonzero_indices:
                q_exc = exc.modes.index(ms.modes[q])
                dev_preserve = max(dev_preserve, _rel_dev(
                    _conj_by(u, ladder_pair_matrix(sector, p, q)),
                    ladder_pair_matrix(exc, p_exc, q_exc)))
        record("ladder_conjugation/create", n, dev_create)
        record("ladder_conjugation/annihilate", n, dev_annih)
        record("ladder_conjugation/preserve", n, dev_preserve)

        # number-operator commutators
        nplus = sp.diags(counts, format="csr")
        pair_up = _pairing_create(exc, v)
        guarded("commutator/pair_create", n,
                lambda: _rel_dev(nplus @ pair_up - pair_up @ nplus, 2.0 * pair_up))
        pair_down = pair_up.getH().tocsr()
        guarded("commutator/pair_annihilate", n,
                lambda: _rel_dev(nplus @ pair_down - pair_down @ nplus,
                                 -2.0 * pair_down))
        guarded("commutator/cubic", n,
                lambda: _rel_dev(nplus @ cubic_up - cubic_up @ nplus, cubic_up))

        # full decomposition of the conjugated Hamiltonian
        def aux_decomposition():
            h_full = assemble_full(ms, v, w, params, basis=jsec)
            h_aux = assemble_aux(ms, v, w, params, basis=jexc)
            eye_t = sp.identity(jexc.n_tracer, format="csr")
            remainder = (params.g_tracer * _w_full(jexc, w)
                         + params.g_boson * sp.kron(
                             eye_t, cubic_up + cubic_up.getH(), format="csr")
                         + params.g_boson * sp.kron(
                             eye_t, _quartic(exc, v), format="csr"))
            return _rel_dev(_conj_by(uj, h_full.matrix),
                            h_aux.matrix + remainder)
        guarded("aux_decomposition", n, aux_decomposition)

        def aux_oracle():
            h_aux = assemble_aux(ms, v, w, params, basis=jexc)
            oracle = _dense_quadratic_oracle(jexc, v, w, params, depletion=True)
            return _rel_dev(h_aux.matrix, sp.csr_matrix(oracle))
        guarded("aux_vs_dense_oracle", n, aux_oracle)

        def bf_from_aux():
            h_bf = assemble_bf(ms, v, w, params, cap=n, basis=jexc)
            oracle = _dense_quadratic_oracle(jexc, v, w, params, depletion=False)
            return _rel_dev(h_bf.matrix, sp.csr_matrix(oracle))
        guarded("bf_from_aux", n, bf_from_aux)

        record("number_pair_sum", n, check_pair_sum_identity(exc, rng, n_random))
        viol_down, viol_up = check_quadratic_bound(exc, rng, n_random, split=True)
        record("quadratic_bound/annihilate", n, max(0.0, viol_down), tol=1e-12)
        record("quadratic_bound/create", n, max(0.0, viol_up), tol=1e-12)

        def momentum_lines():
            h_full = assemble_full(ms, v, w, params, basis=jsec)
            h_aux = assemble_aux(ms, v, w, params, basis=jexc)
            h_bog = assemble_bog(ms, v, cap=n)
            h_bf = assemble_bf(ms, v, w, params, cap=n, basis=jexc)
            ops = {"full": h_full, "aux": h_aux, "bog": h_bog, "bf": h_bf}
            for label, op in ops.items():
                record(f"momentum_block/{label}", n,
                       momentum_defect(op.matrix, op.basis), tol=0.0)
            record("hermiticity/all", n,
                   max(op.hermiticity_defect for op in ops.values()), tol=1e-12)
        try:
            momentum_lines()
        except (ValidationError, DimensionLimitError) as exc_err:
            results.append(IdentityResult(
                name="momentum_block/all", n_bosons=n, deviation=float("inf"),
                tolerance=0.0, passed=False, note=str(exc_err)))

    # coefficient tables, read back off the assembled operators, versus the
    # potential's L2 norm (N independent)
    def coefficient_l2():
        exc2 = ExcitationBasis(ms, 2)
        nz = list(ms.nonzero_modes)
        vac = exc2.index_of(np.zeros(len(nz), dtype=np.int64))
        pair_matrix = np.zeros((len(nz), len(nz)), dtype=complex)
        assembled = _pairing_create(exc2, v)
        for j in range(len(nz)):
            for k in range(len(nz)):
                occ = np.zeros(len(nz), dtype=np.int64)
                occ[j] += 1
                occ[k] += 1
                # the (j,k) and (k,j) coefficients coincide for an even table,
                # so the vacuum matrix element is twice the coefficient
                pair_matrix[j, k] = assembled[exc2.index_of(occ), vac] / 2.0
        exch = _exchange_diag(exc2, v).diagonal()
        exch_matrix = np.diag([exch[exc2.index_of(np.eye(len(nz),
                                                        dtype=np.int64)[j])]
                               for j in range(len(nz))])
        l2 = v.ell2_norm()
        return (max(0.0, float(np.linalg.norm(pair_matrix)) - l2),
                max(0.0, float(np.linalg.norm(exch_matrix)) - l2))
    try:
        pair_excess, exch_excess = coefficient_l2()
        record("coefficient_l2/pair", n_list[-1], pair_excess, tol=1e-12)
        record("coefficient_l2/exchange", n_list[-1], exch_excess, tol=1e-12)
    except (ValidationError, DimensionLimitError) as exc_err:
        results.append(IdentityResult(name="coefficient_l2/pair",
                                      n_bosons=n_list[-1],
                                      deviation=float("inf"), tolerance=1e-12,
                                      passed=False, note=str(exc_err)))

    return IdentityReport(results=results)


# ---------------------------------------------------------------------------
# initial states
# ---------------------------------------------------------------------------

INITIAL_STATE_KINDS = ("vacuum_gauss", "single_excitation", "pair_excitation")


def make_initial_state(kind: str, mode_set: ModeSet, params: ModelParams,
                       cap: int, p=None, q0=None, sigma: float = 1.0):
    """Build one of the documented initial states on the joint excitation basis.

    vacuum_gauss       : excitation vacuum, Gaussian tracer momentum profile
    single_excitation  : one excitation at momentum p, tracer plane wave q0
    pair_excitation    : excitations at p and -p, tracer plane wave q0

    Returns ``(state, metadata)`` where the metadata records the free-energy
    norm ``|H_0 phi|`` and ``|(N_+ + 1) phi|`` of the normalized state.
    """
    if kind not in INITIAL_STATE_KINDS:
        raise ValidationError(
            f"unknown initial state {kind!r}; choose from {INITIAL_STATE_KINDS}")
    d = mode_set.d
    if p is None:
        p = (1,) + (0,) * (d - 1)
    if q0 is None:
        q0 = (0,) * d
    p = tuple(int(c) for c in p)
    q0 = tuple(int(c) for c in q0)
    jb = joint_excitation_basis(mode_set, params, cap)
    exc = jb.boson
    amps = np.zeros(jb.dimension, dtype=np.complex128)

    needed = {"vacuum_gauss": 0, "single_excitation": 1, "pair_excitation": 2}[kind]
    if needed > cap:
        raise ValidationError(
            f"initial state {kind!r} needs {needed} excitations, cap is {cap}")

    vac_idx = exc.index_of(np.zeros(len(exc.modes), dtype=np.int64))
    if kind == "vacuum_gauss":
        if sigma <= 0:
            raise ValidationError("sigma must be positive")
        for t_idx, q in enumerate(jb.tracer):
            weight = math.exp(-float(q @ q) / (2.0 * sigma**2))
            amps[jb.flat_index(t_idx, vac_idx)] = weight
    else:
        if not mode_set.contains(p) or all(c == 0 for c in p):
            raise ValidationError(f"excitation momentum {p} is not a nonzero mode")
        t_idx = jb.tracer_index_of(q0)
        occ = np.zeros(len(exc.modes), dtype=np.int64)
        occ[exc.modes.index(p)] += 1
        if kind == "pair_excitation":
            occ[exc.modes.index(tuple(-c for c in p))] += 1
        amps[jb.flat_index(t_idx, exc.index_of(occ))] = 1.0

    amps /= np.linalg.norm(amps)
    state = StateVector(jb, amps)
    h0 = assemble_h0(jb, params)
    counts = jb.excitation_counts().astype(float)
    meta = {
        "kind": kind,
        "cap": cap,
        "p": list(p),
        "q0": list(q0),
        "sigma": sigma,
        "h0_norm": float(np.linalg.norm(h0.matrix @ amps)),
        "nplus1_norm": float(np.linalg.norm((counts + 1.0) * amps)),
        "alpha0": float(np.sum((counts + 1.0) ** 2 * np.abs(amps) ** 2)),
        "max_excitations": int(np.max(counts[np.abs(amps) > 0])) if np.any(amps) else 0,
    }
    return state, meta


def recap_state(state: StateVector, jb_new: JointBasis) -> StateVector:
    """Move a joint-excitation state to another cap, truncating or embedding."""
    src = state.basis
    if src.boson.cap > jb_new.boson.cap:
        truncated = truncate_excitations(state, jb_new.boson.cap)
        emb = joint_embed(jb_new, src)
        return StateVector(jb_new, emb.getH() @ truncated.amplitudes)
    emb = joint_embed(src, jb_new)
    return StateVector(jb_new, emb @ state.amplitudes)


def truncation_tail(state: StateVector, n_max: int) -> tuple[float, float]:
    """Tail norm beyond ``n_max`` excitations and its (N+1)^-1 |N_+ phi| bound."""
    counts = state.basis.excitation_counts().astype(float)
    amps = state.amplitudes
    tail = float(np.linalg.norm(amps[counts > n_max]))
    bound = float(np.linalg.norm(counts * amps)) / (n_max + 1.0)
    return tail, bound


# ---------------------------------------------------------------------------
# excitation growth traces
# ---------------------------------------------------------------------------


@dataclass
class AlphaTrace:
    """``alpha(t) = |(N_+ + 1) psi(t)|^2`` on a time grid, one flavor."""

    flavor: str
    n_bosons: int
    times: np.ndarray
    values: np.ndarray
    norms: np.ndarray
    fitted_rate: float

    @property
    def alpha0(self) -> float:
        i = int(np.argmin(np.abs(self.times)))
        return float(self.values[i])


def _fit_growth_rate(times, values, alpha0) -> float:
    t = np.abs(np.asarray(times, dtype=float))
    y = np.log(np.asarray(values, dtype=float) / alpha0)
    mask = t > 0
    if not np.any(mask):
        return 0.0
    rate = float(np.sum(t[mask] * y[mask]) / np.sum(t[mask] ** 2))
    return max(rate, 0.0)


def alpha_trace(flavor: str, mode_set: ModeSet, v: PotentialSpec,
                w: PotentialSpec, params: ModelParams, phi: StateVector,
                times, cap: int | None = None,
                tolerance: float = 1e-9, krylov_dim: int = 40,
                max_substeps: int = 10_000) -> AlphaTrace:
    """Excitation-number growth along one of the three evolutions.

    ``flavor`` is ``full`` (microscopic dynamics seen through the
    excitation map), ``aux`` (depletion-weighted quadratic model) or ``bf``
    (effective tracer-field dynamics, with the given cap).
    """
    if flavor not in ("full", "aux", "bf"):
        raise ValidationError(f"unknown flavor {flavor!r}")
    n = params.n_bosons
    times = np.asarray(list(times), dtype=float)
    cfg = PropagationConfig(time=0.0, tolerance=tolerance,
                            krylov_dim=krylov_dim, max_substeps=max_substeps)
    if flavor == "bf":
        cap_eff = min(n, 8) if cap is None else cap
        jb = joint_excitation_basis(mode_set, params, cap_eff)
        psi0 = recap_state(phi, jb)
        op = assemble_bf(mode_set, v, w, params, cap_eff, basis=jb)
    else:
        jb = joint_excitation_basis(mode_set, params, n)
        phi_n = recap_state(phi, jb)
        if flavor == "aux":
            psi0 = phi_n
            op = assemble_aux(mode_set, v, w, params, basis=jb)
        else:
            jsec = joint_sector_basis(mode_set, params)
            uj = joint_u_map(jsec, jb)
            psi0 = StateVector(jsec, uj.getH() @ phi_n.amplitudes)
            op = assemble_full(mode_set, v, w, params, basis=jsec)
    counts = op.basis.excitation_counts().astype(float)
    states = evolve_on_grid(op, psi0, times, cfg)
    values = np.array([
        float(np.sum((counts + 1.0) ** 2 * np.abs(s.amplitudes) ** 2))
        for s in states
    ])
    norms = np.array([s.norm() for s in states])
    i0 = int(np.argmin(np.abs(times)))
    rate = _fit_growth_rate(times, values, values[i0])
    return AlphaTrace(flavor=flavor, n_bosons=n, times=times, values=values,
                      norms=norms, fitted_rate=rate)


def alpha_envelope(traces, slack: float = 1.05):
    """Single growth rate covering every trace, and the envelope verdict.

    Returns ``(v_star, ok, worst_ratio)`` where ``worst_ratio`` is the max
    of ``alpha(t) / (slack * alpha(0) * exp(v_star |t|))`` over all traces.
    """
    v_star = max(tr.fitted_rate for tr in traces)
    worst = 0.0
    for tr in traces:
        envelope = slack * tr.alpha0 * np.exp(v_star * np.abs(tr.times))
        worst = max(worst, float(np.max(tr.values / envelope)))
    return v_star, worst <= 1.0 + 1e-12, worst


# ---------------------------------------------------------------------------
# effective-dynamics error curves
# ---------------------------------------------------------------------------


@dataclass
class ErrorCurve:
    """Distance between two evolutions as a function of the boson number."""

    kind: str
    time: float
    n_values: list
    errors: list
    slope: float | None = None
    prefactor: float | None = None
    fit_window: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def bound_prefactor(self) -> float:
        """Envelope constant calibrated at the smallest N."""
        return self.errors[0] * self.n_values[0] ** 0.25

    def bound_ok(self, rel_slack: float = 1e-12) -> bool:
        k = self.bound_prefactor()
        return all(e <= k * n ** -0.25 * (1 + rel_slack) + 1e-15
                   for n, e in zip(self.n_values, self.errors))

    def nonincreasing_ok(self, slack: float = 0.10) -> bool:
        return all(self.errors[i + 1] <= self.errors[i] * (1 + slack) + 1e-15
                   for i in range(len(self.errors) - 1))


def _fit_loglog(n_values, errors, noise_floor: float):
    window = [i for i, e in enumerate(errors) if e > noise_floor]
    if len(window) < 2:
        return None, None, window
    x = np.log(np.array([n_values[i] for i in window], dtype=float))
    y = np.log(np.array([errors[i] for i in window], dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(np.exp(intercept)), window


def error_cell(n: int, t: float, mode_set: ModeSet, v: PotentialSpec,
               w: PotentialSpec, phi: StateVector,
               tracer_mass: float = 1.0, tracer_cutoff: int = 2,
               cap_max: int = 8, tolerance: float = 1e-9,
               krylov_dim: int = 40, max_substeps: int = 10_000,
               dimension_limit: int = 5_000_000) -> dict:
    """One sweep cell: all three evolution distances at boson number ``n``.

    The microscopic evolution (seen through the excitation map), the
    depletion-weighted quadratic evolution and the effective tracer-field
    evolution of the same initial data are compared in norm.  The effective
    dynamics is capped at ``min(n, cap_max)`` excitations and its cap
    convergence is certified by a doubling check recorded in the cell.
    """
    params = ModelParams(n_bosons=n, tracer_mass=tracer_mass,
                         tracer_cutoff=tracer_cutoff)
    cfg = PropagationConfig(time=t, tolerance=tolerance,
                            krylov_dim=krylov_dim, max_substeps=max_substeps)
    jsec = joint_sector_basis(mode_set, params, dimension_limit=dimension_limit)
    jexc_n = joint_excitation_basis(mode_set, params, n,
                                    dimension_limit=dimension_limit)
    uj = joint_u_map(jsec, jexc_n)
    phi_n = recap_state(phi, jexc_n)
    tail_sq = float(np.linalg.norm(phi.amplitudes) ** 2
                    - np.linalg.norm(phi_n.amplitudes) ** 2)

    h_full = assemble_full(mode_set, v, w, params, basis=jsec)
    psi0 = StateVector(jsec, uj.getH() @ phi_n.amplitudes)
    psi_full = evolve(h_full, psi0, cfg)
    mapped = uj @ psi_full.amplitudes

    h_aux = assemble_aux(mode_set, v, w, params, basis=jexc_n)
    psi_aux = evolve(h_aux, phi_n, cfg)

    cap = min(n, cap_max)
    jexc_m = joint_excitation_basis(mode_set, params, cap,
                                    dimension_limit=dimension_limit)
    phi_m = recap_state(phi, jexc_m)
    h_bf = assemble_bf(mode_set, v, w, params, cap, basis=jexc_m)
    psi_bf = evolve(h_bf, phi_m, cfg)

    jexc_2m = joint_excitation_basis(mode_set, params, 2 * cap,
                                     dimension_limit=dimension_limit)
    phi_2m = recap_state(phi, jexc_2m)
    h_bf2 = assemble_bf(mode_set, v, w, params, 2 * cap, basis=jexc_2m)
    psi_bf2 = evolve(h_bf2, phi_2m, cfg)
    emb_m2 = joint_embed(jexc_m, jexc_2m)
    doubling_dev = float(np.linalg.norm(emb_m2 @ psi_bf.amplitudes
                                        - psi_bf2.amplitudes))

    emb_mn = joint_embed(jexc_m, jexc_n)
    bf_in_n = emb_mn @ psi_bf.amplitudes
    e_total = float(np.linalg.norm(mapped - bf_in_n))
    e_aux = float(np.linalg.norm(mapped - psi_aux.amplitudes))
    e_auxbf = float(np.linalg.norm(psi_aux.amplitudes - bf_in_n))
    return {
        "kind": "error_cell",
        "n_bosons": n,
        "time": t,
        "error_total": e_total,
        "gap_aux": e_aux,
        "gap_aux_bf": e_auxbf,
        "bf_cap": cap,
        "bf_doubling_deviation": doubling_dev,
        "bf_doubling_ok": doubling_dev <= DOUBLING_TOL,
        "triangle_ok": e_total <= e_aux + e_auxbf + 1e-12,
        "truncation_tail_sq": tail_sq,
        "dim_sector_joint": jsec.dimension,
        "dim_excitation_joint": jexc_n.dimension,
        "dim_bf_joint": jexc_m.dimension,
        "tolerance_propagation": tolerance,
    }


def curves_from_cells(cells, t: float, tolerance: float, cap_max: int) -> dict:
    """Assemble the three fitted error curves from completed sweep cells."""
    cells = sorted(cells, key=lambda rec: rec["n_bosons"])
    n_list = [rec["n_bosons"] for rec in cells]
    noise_floor = 10.0 * tolerance * (1.0 + abs(t))
    out = {
        "records": cells,
        "triangle_ok": all(rec["triangle_ok"] for rec in cells),
        "doubling_ok": all(rec["bf_doubling_ok"] for rec in cells),
    }
    for kind, field_name in (("total", "error_total"), ("aux_gap", "gap_aux"),
                             ("aux_bf_gap", "gap_aux_bf")):
        errs = [rec[field_name] for rec in cells]
        slope, prefactor, window = _fit_loglog(n_list, errs, noise_floor)
        out[kind] = ErrorCurve(
            kind=kind, time=t, n_values=list(n_list), errors=errs,
            slope=slope, prefactor=prefactor, fit_window=window,
            metadata={"cap_max": cap_max, "tolerance": tolerance,
                      "noise_floor": noise_floor},
        )
    return out


def initial_state_norms(phi: StateVector, tracer_mass: float = 1.0) -> dict:
    """Free-energy and excitation-number norms of a joint-excitation state."""
    jb = phi.basis
    counts = jb.excitation_counts().astype(float)
    kin = (tracer_kinetic_diag(jb.tracer, tracer_mass)[:, None]
           + boson_kinetic_diag(jb.boson)[None, :]).ravel()
    return {
        "h0_norm": float(np.linalg.norm(kin * phi.amplitudes)),
        "nplus1_norm": float(np.linalg.norm((counts + 1.0) * phi.amplitudes)),
    }


def error_curves(t: float, n_list, mode_set: ModeSet, v: PotentialSpec,
                 w: PotentialSpec, phi: StateVector,
                 tracer_mass: float = 1.0, tracer_cutoff: int = 2,
                 cap_max: int = 8, tolerance: float = 1e-9,
                 krylov_dim: int = 40, max_substeps: int = 10_000,
                 dimension_limit: int = 5_000_000) -> dict:
    """Full error-curve sweep over ``n_list``; see :func:`error_cell`."""
    cells = [
        error_cell(int(n), t, mode_set, v, w, phi, tracer_mass=tracer_mass,
                   tracer_cutoff=tracer_cutoff, cap_max=cap_max,
                   tolerance=tolerance, krylov_dim=krylov_dim,
                   max_substeps=max_substeps, dimension_limit=dimension_limit)
        for n in sorted(int(n) for n in n_list)
    ]
    out = curves_from_cells(cells, t, tolerance, cap_max)
    norms = initial_state_norms(phi, tracer_mass)
    for kind in ("total", "aux_gap", "aux_bf_gap"):
        out[kind].metadata.update(norms)
    return out


# ---------------------------------------------------------------------------
# quasiparticle spectrum check
# ---------------------------------------------------------------------------


def bogoliubov_dispersion(eps: float, vhat: float) -> float:
    """Closed-form quasiparticle energy ``sqrt(eps^2 + 4 eps vhat)``.

    Derived from the 2x2 reduction of the quadratic Hamiltonian on each
    (p, -p) momentum pair: with A = eps + 2 vhat and B = 2 vhat the
    excitation energy is sqrt(A^2 - B^2).  Negative radicand (eps + 4 vhat
    < 0) means the dispersion turns complex and the model is unstable.
    """
    radicand = eps * (eps + 4.0 * vhat)
    if radicand < 0:
        raise ValidationError(
            f"complex dispersion: eps + 4 vhat = {eps + 4.0 * vhat:.6g} < 0")
    return math.sqrt(radicand)


def quasiparticle_block_minimum(dispersions: dict, q) -> float:
    """Exact minimum of ``sum n_p E(p)`` over occupations with total momentum q.

    ``dispersions`` maps nonzero integer momentum tuples to quasiparticle
    energies (all positive).  Enumerates configurations with energy-bound
    pruning; this is the infinite-cap oracle for the per-block gap.
    """
    q = tuple(int(c) for c in q)
    modes = sorted(dispersions)
    energies = [dispersions[m] for m in modes]
    if min(energies) <= 0:
        raise ValidationError("quasiparticle energies must be positive")
    # feasible seed: decompose q into unit steps along each axis
    d = len(q)
    seed = 0.0
    for axis, comp in enumerate(q):
        if comp == 0:
            continue
        unit = tuple((1 if comp > 0 else -1) if a == axis else 0 for a in range(d))
        if unit not in dispersions:
            raise ValidationError(f"unit momentum {unit} missing from dispersion table")
        seed += abs(comp) * dispersions[unit]
    best = seed

    def dfs(i, remaining, acc):
        nonlocal best
        if acc > best + 1e-15:
            return
        if i == len(modes):
            if all(c == 0 for c in remaining) and acc < best:
                best = acc
            return
        p = modes[i]
        e = energies[i]
        n_max = int((best - acc) / e + 1e-12)
        for cnt in range(n_max + 1):
            dfs(i + 1, tuple(r - cnt * c for r, c in zip(remaining, p)),
                acc + cnt * e)

    dfs(0, q, 0.0)
    return best


@dataclass
class SpectrumReport:
    momenta: list
    caps: list
    gaps: dict
    oracle: dict
    dispersion: dict
    ground_energies: dict
    ground_energy_oracle: float | None
    unstable: bool
    max_deviation: float | None
    converged_ok: bool
    monotone_ok: bool


def bogoliubov_spectrum_check(mode_set: ModeSet, v: PotentialSpec,
                              caps=(2, 4, 6, 8),
                              dense_limit: int = 4000) -> SpectrumReport:
    """Per-momentum gap of the capped quadratic excitation Hamiltonian
    against the closed-form quasiparticle oracle.

    For each cap the lowest energy in every momentum block is computed by
    dense diagonalization; the gap over the global ground state must
    converge, as the cap grows, to the configuration minimum of the
    closed-form dispersion.  An unstable potential (complex dispersion)
    is flagged and the comparison skipped.
    """
    caps = sorted(int(c) for c in caps)
    momenta = [tuple(int(c) for c in m) for m in mode_set.nonzero_modes]
    unstable = any(
        kinetic_energy(p) + 4.0 * float(v(p).real) < 0 for p in momenta)

    dispersion = {}
    oracle = {}
    e0_oracle = None
    if not unstable:
        for p in momenta:
            dispersion[p] = bogoliubov_dispersion(kinetic_energy(p),
                                                  float(v(p).real))
        for p in momenta:
            oracle[p] = quasiparticle_block_minimum(dispersion, p)
        seen = set()
        e0_oracle = 0.0
        for p in momenta:
            neg = tuple(-c for c in p)
            if p in seen or neg in seen:
                continue
            seen.add(p)
            a = kinetic_energy(p) + 2.0 * float(v(p).real)
            e0_oracle += dispersion[p] - a

    gaps = {}
    ground = {}
    for cap in caps:
        op = assemble_bog(mode_set, v, cap)
        if op.dimension > dense_limit:
            raise DimensionLimitError(
                f"spectrum check needs dense diagonalization; dimension "
                f"{op.dimension} exceeds {dense_limit}")
        decomp = block_decompose(op)
        block_min = {}
        for q, block in zip(decomp.momenta, decomp.blocks):
            vals = np.linalg.eigvalsh(block.toarray())
            block_min[q] = float(vals[0])
        e0 = min(block_min.values())
        ground[cap] = e0
        gaps[cap] = {p: block_min[p] - e0 for p in momenta if p in block_min}

    max_dev = None
    converged = False
    monotone = True
    if not unstable:
        last = gaps[caps[-1]]
        max_dev = max(abs(last[p] - oracle[p]) for p in momenta)
        converged = max_dev <= SPECTRUM_TOL
        for p in momenta:
            series = [gaps[c][p] for c in caps if p in gaps[c]]
            monotone = monotone and all(
                series[i + 1] <= series[i] + 1e-10 for i in range(len(series) - 1))

    return SpectrumReport(momenta=momenta, caps=caps, gaps=gaps, oracle=oracle,
                          dispersion=dispersion, ground_energies=ground,
                          ground_energy_oracle=e0_oracle, unstable=unstable,
                          max_deviation=max_dev, converged_ok=converged,
                          monotone_ok=monotone)
