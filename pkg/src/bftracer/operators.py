"""Sparse assembly of the gas-tracer Hamiltonians and the excitation map.

All assembled operators follow one Galerkin rule: a scattering or creation
term whose target leaves the mode cutoff, the tracer cutoff or the
excitation cap is dropped together with its conjugate (matrix compression
to the retained subspace), which preserves Hermiticity exactly.  Every
public assembler returns a :class:`SparseHermitianOperator` whose
Hermiticity defect is verified and recorded at build time.

Joint operators are Kronecker products against the flattened joint index
``tracer_index * boson_dim + boson_index``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import (
    DIMENSION_LIMIT,
    ExcitationBasis,
    JointBasis,
    SectorBasis,
    StateVector,
    check_same_basis,
    joint_basis,
)
from .errors import BasisMismatchError, ValidationError
from .modes import ModelParams, ModeSet, PotentialSpec, kinetic_energy

#: entrywise Hermiticity certificate threshold
HERMITICITY_TOL = 1e-12
#: entries below this modulus are pruned after assembly
PRUNE_TOL = 1e-15


class SparseHermitianOperator:
    """Immutable sparse complex matrix with a verified Hermiticity certificate."""

    def __init__(self, matrix, basis, name: str = ""):
        m = sp.csr_matrix(matrix, dtype=np.complex128, copy=True)
        if m.shape != (basis.dimension, basis.dimension):
            raise ValidationError(
                f"matrix shape {m.shape} does not match basis dimension "
                f"{basis.dimension}"
            )
        if m.nnz:
            m.data[np.abs(m.data) < PRUNE_TOL] = 0
            m.eliminate_zeros()
        defect = hermiticity_defect(m)
        if defect > HERMITICITY_TOL:
            raise ValidationError(
                f"operator {name or '<unnamed>'} is not Hermitian: "
                f"max |A - A^H| entry is {defect:.3e}"
            )
        m.sort_indices()
        self.matrix = m
        self.basis = basis
        self.name = name
        self.hermiticity_defect = defect
        diag = sp.diags(m.diagonal(), format="csr", dtype=np.complex128)
        self.is_diagonal = (m - diag).nnz == 0

    @property
    def dimension(self) -> int:
        return self.basis.dimension

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def to_dense(self, limit: int = 4000) -> np.ndarray:
        if self.dimension > limit:
            raise ValidationError(
                f"refusing to densify dimension {self.dimension} > {limit}"
            )
        return self.matrix.toarray()

    def expectation(self, state: StateVector) -> float:
        check_same_basis(self.basis, state.basis)
        val = np.vdot(state.amplitudes, self.matrix @ state.amplitudes)
        return float(val.real)


def hermiticity_defect(matrix) -> float:
    d = (matrix - matrix.getH()).tocoo()
    return float(np.max(np.abs(d.data))) if d.nnz else 0.0


# ---------------------------------------------------------------------------
# low-level builders (raw csr matrices, no Hermiticity gate)
# ---------------------------------------------------------------------------


class _Coo:
    def __init__(self, shape):
        self.shape = shape
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[complex] = []

    def add(self, r: int, c: int, v: complex):
        self.rows.append(r)
        self.cols.append(c)
        self.vals.append(v)

    def build(self):
        return sp.coo_matrix(
            (np.array(self.vals, dtype=np.complex128),
             (np.array(self.rows, dtype=np.int64),
              np.array(self.cols, dtype=np.int64))),
            shape=self.shape,
        ).tocsr()


def _mode_lookup(basis) -> dict:
    return {tuple(m): i for i, m in enumerate(basis.modes)}


def boson_kinetic_diag(basis) -> np.ndarray:
    energies = np.array([kinetic_energy(m) for m in basis.modes])
    return basis.occupations @ energies


def tracer_kinetic_diag(tracer: np.ndarray, mass: float) -> np.ndarray:
    return np.array([kinetic_energy(q) for q in tracer]) / (2.0 * mass)


def _tracer_shift(tracer: np.ndarray, p) -> sp.csr_matrix:
    """Momentum boost ``|q> -> |q + p>`` on the tracer list; out-of-cutoff dropped."""
    lookup = {tuple(q): i for i, q in enumerate(tracer)}
    out = _Coo((len(tracer), len(tracer)))
    p = tuple(int(c) for c in p)
    for col, q in enumerate(tracer):
        target = tuple(int(a + b) for a, b in zip(q, p))
        row = lookup.get(target)
        if row is not None:
            out.add(row, col, 1.0)
    return out.build()


def _transition(basis, p, exclude_zero: bool = False) -> sp.csr_matrix:
    """Boson hopping ``sum_{k_k - k_j = p} a_j^dagger a_k`` on a boson basis."""
    lookup = _mode_lookup(basis)
    zero = (0,) * basis.mode_set.d
    cap = getattr(basis, "cap", None)
    out = _Coo((basis.dimension, basis.dimension))
    p = tuple(int(c) for c in p)
    for col in range(basis.dimension):
        occ = basis.occupations[col]
        for k_idx in np.nonzero(occ)[0]:
            k_mode = basis.modes[k_idx]
            if exclude_zero and k_mode == zero:
                continue
            j_mode = tuple(a - b for a, b in zip(k_mode, p))
            if exclude_zero and j_mode == zero:
                continue
            j_idx = lookup.get(j_mode)
            if j_idx is None:
                continue
            new = occ.copy()
            amp = np.sqrt(new[k_idx])
            new[k_idx] -= 1
            new[j_idx] += 1
            amp *= np.sqrt(new[j_idx])
            out.add(basis.index_of(new), col, amp)
    return out.build()


def ladder_pair_matrix(basis, create_idx: int, annihilate_idx: int) -> sp.csr_matrix:
    """Matrix of the number-preserving pair ``a_j^dagger a_k`` on a boson basis."""
    out = _Coo((basis.dimension, basis.dimension))
    for col in range(basis.dimension):
        occ = basis.occupations[col]
        if occ[annihilate_idx] == 0:
            continue
        new = occ.copy()
        amp = np.sqrt(new[annihilate_idx])
        new[annihilate_idx] -= 1
        new[create_idx] += 1
        amp *= np.sqrt(new[create_idx])
        out.add(basis.index_of(new), col, amp)
    return out.build()


#: zero-mode patterns (j==0, k==0, l==0, m==0) of the pair-interaction sum
V_CLASSES = {
    "exchange": {(0, 1, 0, 1), (1, 0, 1, 0)},
    "pair_create": {(0, 0, 1, 1)},
    "pair_annihilate": {(1, 1, 0, 0)},
    "cubic_create": {(0, 0, 0, 1), (0, 0, 1, 0)},
    "cubic_annihilate": {(1, 0, 0, 0), (0, 1, 0, 0)},
    "quartic": {(0, 0, 0, 0)},
}
V_CLASSES["vanishing"] = {
    pat
    for pat in [tuple(int(b) for b in np.unravel_index(i, (2,) * 4))
                for i in range(16)]
    if not any(pat in c for c in V_CLASSES.values())
}


def _quartic(basis, v: PotentialSpec, classes=None) -> sp.csr_matrix:
    """Pair interaction ``sum V(k_j - k_m) delta(k_j + k_k = k_l + k_m)
    a_j^dagger a_k^dagger a_l a_m`` over the modes of ``basis``.

    ``classes`` optionally restricts the sum to the given zero-mode
    patterns (a set of 4-tuples as in :data:`V_CLASSES`).
    """
    lookup = _mode_lookup(basis)
    zero = (0,) * basis.mode_set.d
    support = sorted(v.coeffs.items())
    out = _Coo((basis.dimension, basis.dimension))
    for col in range(basis.dimension):
        occ = basis.occupations[col]
        for m_idx in np.nonzero(occ)[0]:
            m_mode = basis.modes[m_idx]
            occ1 = occ.copy()
            amp_m = np.sqrt(occ1[m_idx])
            occ1[m_idx] -= 1
            for l_idx in np.nonzero(occ1)[0]:
                l_mode = basis.modes[l_idx]
                occ2 = occ1.copy()
                amp_l = amp_m * np.sqrt(occ2[l_idx])
                occ2[l_idx] -= 1
                for p, vp in support:
                    j_mode = tuple(a + b for a, b in zip(m_mode, p))
                    k_mode = tuple(a - b for a, b in zip(l_mode, p))
                    j_idx = lookup.get(j_mode)
                    k_idx = lookup.get(k_mode)
                    if j_idx is None or k_idx is None:
                        continue
                    if classes is not None:
                        pattern = (
                            int(j_mode == zero),
                            int(k_mode == zero),
                            int(l_mode == zero),
                            int(m_mode == zero),
                        )
                        if pattern not in classes:
                            continue
                    occ3 = occ2.copy()
                    occ3[k_idx] += 1
                    amp_k = amp_l * np.sqrt(occ3[k_idx])
                    occ3[j_idx] += 1
                    amp_j = amp_k * np.sqrt(occ3[j_idx])
                    out.add(basis.index_of(occ3), col, vp * amp_j)
    return out.build()


def _exchange_diag(basis: ExcitationBasis, v: PotentialSpec, depletion=None) -> sp.csr_matrix:
    """Diagonal ``sum_p V(p) a_p^dagger a_p  [* depletion(N_+)]`` on excitations."""
    weights = np.array([complex(v(m)) for m in basis.modes])
    diag = basis.occupations @ weights
    if depletion is not None:
        totals = basis.totals()
        diag = diag * np.array([depletion(int(n)) for n in totals])
    return sp.diags(diag, format="csr", dtype=np.complex128)


def _pairing_create(basis: ExcitationBasis, v: PotentialSpec, weight=None) -> sp.csr_matrix:
    """Pair creation ``sum_p V(p) a_p^dagger g(N_+) a_{-p}^dagger g(N_+)``.

    ``weight`` is the scalar factor ``g`` as a function of the excitation
    count it acts on; ``None`` means 1.  Targets beyond the cap are dropped
    (cap-Galerkin rule).
    """
    lookup = _mode_lookup(basis)
    out = _Coo((basis.dimension, basis.dimension))
    totals = basis.totals()
    for col in range(basis.dimension):
        n = int(totals[col])
        if n + 2 > basis.cap:
            continue
        occ = basis.occupations[col]
        for p, vp in sorted(v.coeffs.items()):
            p_idx = lookup.get(p)
            neg_idx = lookup.get(tuple(-c for c in p))
            if p_idx is None or neg_idx is None:
                continue
            amp = complex(vp)
            if weight is not None:
                amp *= weight(n)
            new = occ.copy()
            new[neg_idx] += 1
            amp *= np.sqrt(new[neg_idx])
            if weight is not None:
                amp *= weight(n + 1)
            new[p_idx] += 1
            amp *= np.sqrt(new[p_idx])
            out.add(basis.index_of(new), col, amp)
    return out.build()


def _cubic_create(basis: ExcitationBasis, v: PotentialSpec, n_bosons: int) -> sp.csr_matrix:
    """``2 sum V(k_j) delta(k_j + k_k = k_l) a_j^dagger sqrt(N - N_+) a_k^dagger a_l``."""
    lookup = _mode_lookup(basis)
    out = _Coo((basis.dimension, basis.dimension))
    totals = basis.totals()
    for col in range(basis.dimension):
        n = int(totals[col])
        if n + 1 > basis.cap or n > n_bosons:
            continue
        occ = basis.occupations[col]
        root = np.sqrt(max(n_bosons - n, 0))
        if root == 0.0:
            continue
        for l_idx in np.nonzero(occ)[0]:
            l_mode = basis.modes[l_idx]
            occ1 = occ.copy()
            amp_l = np.sqrt(occ1[l_idx])
            occ1[l_idx] -= 1
            for p, vp in sorted(v.coeffs.items()):
                j_idx = lookup.get(p)
                if j_idx is None:
                    continue
                k_mode = tuple(a - b for a, b in zip(l_mode, p))
                k_idx = lookup.get(k_mode)
                if k_idx is None:
                    continue
                occ2 = occ1.copy()
                occ2[k_idx] += 1
                amp_k = amp_l * np.sqrt(occ2[k_idx])
                occ2[j_idx] += 1
                amp_j = amp_k * np.sqrt(occ2[j_idx])
                out.add(basis.index_of(occ2), col, 2.0 * vp * root * amp_j)
    return out.build()


def _creation_weighted(basis: ExcitationBasis, mode_index: int, weight=None) -> sp.csr_matrix:
    """``a_k^dagger g(N_+)`` on an excitation basis, cap-compressed."""
    out = _Coo((basis.dimension, basis.dimension))
    totals = basis.totals()
    for col in range(basis.dimension):
        n = int(totals[col])
        if n + 1 > basis.cap:
            continue
        amp = 1.0 if weight is None else weight(n)
        if amp == 0.0:
            continue
        new = basis.occupations[col].copy()
        new[mode_index] += 1
        out.add(basis.index_of(new), col, amp * np.sqrt(new[mode_index]))
    return out.build()


def _w_create(jb: JointBasis, w: PotentialSpec, weight=None) -> sp.csr_matrix:
    """Tracer-correlated field creation ``sum_k W(-k) Shift(-k) (x) a_k^dagger g(N_+)``."""
    exc = jb.boson
    total = sp.csr_matrix((jb.dimension, jb.dimension), dtype=np.complex128)
    for k_idx, k_mode in enumerate(exc.modes):
        coeff = complex(w(tuple(-c for c in k_mode)))
        if coeff == 0:
            continue
        shift = _tracer_shift(jb.tracer, tuple(-c for c in k_mode))
        total = total + coeff * sp.kron(shift, _creation_weighted(exc, k_idx, weight),
                                        format="csr")
    return total


def _w_full(jb: JointBasis, w: PotentialSpec, exclude_zero: bool = False) -> sp.csr_matrix:
    """Tracer coupling ``sum_p W(p) Shift(p) (x) sum_{k_k - k_j = p} a_j^dagger a_k``."""
    total = sp.csr_matrix((jb.dimension, jb.dimension), dtype=np.complex128)
    for p, wp in sorted(w.coeffs.items()):
        hop = _transition(jb.boson, p, exclude_zero=exclude_zero)
        if hop.nnz == 0:
            continue
        total = total + complex(wp) * sp.kron(_tracer_shift(jb.tracer, p), hop,
                                              format="csr")
    return total


def _kron_joint(jb: JointBasis, tracer_part, boson_part) -> sp.csr_matrix:
    return sp.kron(tracer_part, boson_part, format="csr")


def _joint_diag(jb: JointBasis, tracer_diag: np.ndarray, boson_diag: np.ndarray) -> sp.csr_matrix:
    flat = (tracer_diag[:, None] + boson_diag[None, :]).ravel()
    return sp.diags(flat.astype(np.complex128), format="csr")


# ---------------------------------------------------------------------------
# public assemblers
# ---------------------------------------------------------------------------


def joint_sector_basis(mode_set: ModeSet, params: ModelParams,
                       dimension_limit: int = DIMENSION_LIMIT) -> JointBasis:
    return joint_basis(mode_set, SectorBasis(mode_set, params.n_bosons,
                                             dimension_limit=dimension_limit),
                       params.tracer_cutoff, dimension_limit=dimension_limit)


def joint_excitation_basis(mode_set: ModeSet, params: ModelParams, cap: int,
                           dimension_limit: int = DIMENSION_LIMIT) -> JointBasis:
    return joint_basis(mode_set, ExcitationBasis(mode_set, cap,
                                                 dimension_limit=dimension_limit),
                       params.tracer_cutoff, dimension_limit=dimension_limit)


def _check_potentials(v: PotentialSpec, w: PotentialSpec):
    if v.kind != "V":
        raise ValidationError(f"pair potential has kind {v.kind!r}, expected 'V'")
    if w.kind != "W":
        raise ValidationError(f"tracer potential has kind {w.kind!r}, expected 'W'")


def assemble_full(mode_set: ModeSet, v: PotentialSpec, w: PotentialSpec,
                  params: ModelParams, basis: JointBasis | None = None,
                  dimension_limit: int = DIMENSION_LIMIT) -> SparseHermitianOperator:
    """The microscopic Hamiltonian on the tracer (x) N-boson sector basis.

    Kinetic terms plus the pair interaction with coupling 1/N and the
    tracer coupling with 1/sqrt(N); the ground truth of every experiment.
    """
    _check_potentials(v, w)
    if basis is None:
        basis = joint_sector_basis(mode_set, params, dimension_limit)
    if not isinstance(basis.boson, SectorBasis) or basis.boson.n_bosons != params.n_bosons:
        raise BasisMismatchError("assemble_full needs the N-boson sector joint basis")
    h = _joint_diag(basis, tracer_kinetic_diag(basis.tracer, params.tracer_mass),
                    boson_kinetic_diag(basis.boson))
    if not v.is_zero:
        h = h + params.g_boson * _kron_joint(
            basis, sp.identity(basis.n_tracer, format="csr"),
            _quartic(basis.boson, v))
    if not w.is_zero:
        h = h + params.g_tracer * _w_full(basis, w)
    return SparseHermitianOperator(h, basis, name="H_full")


def assemble_u_map(sector: SectorBasis, excitation: ExcitationBasis) -> sp.csr_matrix:
    """The excitation map as a matrix: a coefficient-preserving relabeling.

    The sector state with condensate occupation ``n_0`` and excited
    occupations ``{n_k}`` maps with coefficient exactly one to the
    excitation state ``{n_k}``; with cap equal to N this is a bijection,
    hence a permutation matrix.
    """
    if excitation.cap != sector.n_bosons:
        raise ValidationError(
            f"excitation cap {excitation.cap} must equal the boson number "
            f"{sector.n_bosons}"
        )
    if excitation.mode_set.descriptor != sector.mode_set.descriptor:
        raise BasisMismatchError("sector and excitation bases use different modes")
    z = sector.mode_set.zero_index
    keep = [i for i in range(len(sector.mode_set)) if i != z]
    out = _Coo((excitation.dimension, sector.dimension))
    for col in range(sector.dimension):
        rest = sector.occupations[col][keep]
        out.add(excitation.index_of(rest), col, 1.0)
    return out.build()


def joint_u_map(sector_joint: JointBasis, exc_joint: JointBasis) -> sp.csr_matrix:
    """``1 (x) U`` on joint bases with identical tracer lists."""
    if sector_joint.n_tracer != exc_joint.n_tracer or not np.array_equal(
            sector_joint.tracer, exc_joint.tracer):
        raise BasisMismatchError("joint bases have different tracer lists")
    u = assemble_u_map(sector_joint.boson, exc_joint.boson)
    return sp.kron(sp.identity(sector_joint.n_tracer, format="csr"), u, format="csr")


def assemble_aux(mode_set: ModeSet, v: PotentialSpec, w: PotentialSpec,
                 params: ModelParams, basis: JointBasis | None = None,
                 dimension_limit: int = DIMENSION_LIMIT) -> SparseHermitianOperator:
    """The depletion-weighted quadratic Hamiltonian on excitations, cap N.

    Quadratic in the excitation field with explicit sqrt(N - N_+) factors;
    conjugating the full Hamiltonian by the excitation map and removing
    the cubic, quartic and tracer-exchange remainders lands exactly here.
    """
    _check_potentials(v, w)
    n = params.n_bosons
    if basis is None:
        basis = joint_excitation_basis(mode_set, params, n, dimension_limit)
    if not isinstance(basis.boson, ExcitationBasis) or basis.boson.cap != n:
        raise BasisMismatchError("assemble_aux needs the excitation joint basis with cap N")
    exc = basis.boson
    h = _joint_diag(basis, tracer_kinetic_diag(basis.tracer, params.tracer_mass),
                    boson_kinetic_diag(exc))
    eye_t = sp.identity(basis.n_tracer, format="csr")
    if not v.is_zero:
        exch = _exchange_diag(exc, v, depletion=lambda m: float(n - m))
        pair = _pairing_create(exc, v, weight=lambda m: np.sqrt(max(n - m, 0)))
        h = h + (2.0 / n) * _kron_joint(basis, eye_t, exch)
        quad = (1.0 / n) * _kron_joint(basis, eye_t, pair)
        h = h + quad + quad.getH()
    if not w.is_zero:
        w_plus = params.g_tracer * _w_create(
            basis, w, weight=lambda m: np.sqrt(max(n - m, 0)))
        h = h + w_plus + w_plus.getH()
    return SparseHermitianOperator(h, basis, name="H_aux")


def assemble_bog(mode_set: ModeSet, v: PotentialSpec, cap: int,
                 basis: ExcitationBasis | None = None,
                 dimension_limit: int = DIMENSION_LIMIT) -> SparseHermitianOperator:
    """The quadratic excitation Hamiltonian from the condensate substitution.

    ``dGamma(-Laplace) + 2 sum_p V(p) n_p + sum_p V(p)(a_p^dagger
    a_{-p}^dagger + a_p a_{-p})`` on the capped excitation basis; creation
    terms leaving the cap are dropped symmetrically.
    """
    if v.kind != "V":
        raise ValidationError(f"pair potential has kind {v.kind!r}, expected 'V'")
    if basis is None:
        basis = ExcitationBasis(mode_set, cap, dimension_limit=dimension_limit)
    elif basis.cap != cap:
        raise BasisMismatchError(f"basis cap {basis.cap} != requested cap {cap}")
    h = sp.diags(boson_kinetic_diag(basis).astype(np.complex128), format="csr")
    if not v.is_zero:
        h = h + 2.0 * _exchange_diag(basis, v)
        pair = _pairing_create(basis, v)
        h = h + pair + pair.getH()
    return SparseHermitianOperator(h, basis, name="H_bog")


def assemble_bf(mode_set: ModeSet, v: PotentialSpec, w: PotentialSpec,
                params: ModelParams, cap: int, basis: JointBasis | None = None,
                dimension_limit: int = DIMENSION_LIMIT) -> SparseHermitianOperator:
    """The effective tracer-excitation Hamiltonian: free tracer plus the
    quadratic excitation Hamiltonian plus the linear field coupling."""
    _check_potentials(v, w)
    if basis is None:
        basis = joint_excitation_basis(mode_set, params, cap, dimension_limit)
    if not isinstance(basis.boson, ExcitationBasis) or basis.boson.cap != cap:
        raise BasisMismatchError("assemble_bf needs an excitation joint basis with the given cap")
    exc = basis.boson
    h = _joint_diag(basis, tracer_kinetic_diag(basis.tracer, params.tracer_mass),
                    boson_kinetic_diag(exc))
    eye_t = sp.identity(basis.n_tracer, format="csr")
    if not v.is_zero:
        h = h + 2.0 * _kron_joint(basis, eye_t, _exchange_diag(exc, v))
        pair = _kron_joint(basis, eye_t, _pairing_create(exc, v))
        h = h + pair + pair.getH()
    if not w.is_zero:
        w_plus = _w_create(basis, w)
        h = h + w_plus + w_plus.getH()
    return SparseHermitianOperator(h, basis, name="H_bf")


def assemble_dgamma_w(mode_set: ModeSet, w: PotentialSpec,
                      basis: JointBasis) -> SparseHermitianOperator:
    """Second quantization of the condensate-orthogonal tracer exchange
    ``dGamma(Q W_x Q)`` on a joint basis (sector or excitation)."""
    if w.kind != "W":
        raise ValidationError(f"tracer potential has kind {w.kind!r}, expected 'W'")
    exclude = isinstance(basis.boson, SectorBasis)
    h = _w_full(basis, w, exclude_zero=exclude)
    return SparseHermitianOperator(h, basis, name="dGamma_QWQ")


def assemble_h0(basis: JointBasis, params: ModelParams) -> SparseHermitianOperator:
    """Free part: tracer kinetic energy plus the excitation kinetic term."""
    h = _joint_diag(basis, tracer_kinetic_diag(basis.tracer, params.tracer_mass),
                    boson_kinetic_diag(basis.boson))
    return SparseHermitianOperator(h, basis, name="H_0")


# ---------------------------------------------------------------------------
# embeddings, truncation, momentum blocks
# ---------------------------------------------------------------------------


def embed_excitation(src: ExcitationBasis, dst: ExcitationBasis) -> sp.csr_matrix:
    """Isometric inclusion of a lower-cap excitation basis into a higher one."""
    if src.mode_set.descriptor != dst.mode_set.descriptor:
        raise BasisMismatchError("excitation bases use different mode sets")
    if src.cap > dst.cap:
        raise ValidationError(f"cannot embed cap {src.cap} into smaller cap {dst.cap}")
    out = _Coo((dst.dimension, src.dimension))
    for col in range(src.dimension):
        out.add(dst.index_of(src.occupations[col]), col, 1.0)
    return out.build()


def joint_embed(src: JointBasis, dst: JointBasis) -> sp.csr_matrix:
    if not np.array_equal(src.tracer, dst.tracer):
        raise BasisMismatchError("joint bases have different tracer lists")
    emb = embed_excitation(src.boson, dst.boson)
    return sp.kron(sp.identity(src.n_tracer, format="csr"), emb, format="csr")


def truncate_excitations(state: StateVector, n_max: int) -> StateVector:
    """Project out all components with more than ``n_max`` excitations."""
    counts = state.basis.excitation_counts()
    amps = state.amplitudes.copy()
    amps[counts > n_max] = 0
    return StateVector(state.basis, amps)


def momentum_defect(matrix, basis) -> float:
    """Largest entry coupling different total-momentum blocks (0 if none)."""
    key = _momentum_keys(basis)
    coo = sp.csr_matrix(matrix).tocoo()
    if coo.nnz == 0:
        return 0.0
    off = key[coo.row] != key[coo.col]
    return float(np.max(np.abs(coo.data[off]))) if np.any(off) else 0.0


def _momentum_keys(basis) -> np.ndarray:
    p = basis.momenta()
    uniq, inverse = np.unique(p, axis=0, return_inverse=True)
    return inverse


@dataclass
class BlockDecomposition:
    """Partition of a basis index set by total momentum, with sub-operators."""

    basis: object
    momenta: list
    index_lists: list
    blocks: list

    @property
    def n_blocks(self) -> int:
        return len(self.momenta)


def block_decompose(op, basis=None) -> BlockDecomposition:
    """Split an operator into its exact total-momentum blocks.

    Raises :class:`ValidationError` if any matrix entry couples two
    different momentum sectors; momentum conservation must be exact.
    """
    if isinstance(op, SparseHermitianOperator):
        matrix = op.matrix
        basis = op.basis if basis is None else basis
    else:
        matrix = sp.csr_matrix(op)
        if basis is None:
            raise ValidationError("block_decompose needs a basis for a raw matrix")
    defect = momentum_defect(matrix, basis)
    if defect > 0.0:
        raise ValidationError(
            f"operator couples momentum blocks with entry {defect:.3e}"
        )
    p = basis.momenta()
    uniq, inverse = np.unique(p, axis=0, return_inverse=True)
    momenta, index_lists, blocks = [], [], []
    for b in range(uniq.shape[0]):
        idx = np.nonzero(inverse == b)[0]
        momenta.append(tuple(int(c) for c in uniq[b]))
        index_lists.append(idx)
        blocks.append(matrix[np.ix_(idx, idx)].tocsr())
    return BlockDecomposition(basis=basis, momenta=momenta,
                              index_lists=index_lists, blocks=blocks)


DUMP_FORMAT_VERSION = 1


def dump_operator(op: SparseHermitianOperator, path) -> None:
    """Write the operator in coordinate text format for external cross-checks."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# bftracer operator dump v{DUMP_FORMAT_VERSION}\n")
        fh.write(f"# basis {op.basis.digest}\n")
        fh.write(f"# dim {op.dimension} nnz {coo.nnz}\n")
        for i in order:
            fh.write(
                f"{coo.row[i]} {coo.col[i]} "
                f"{float(coo.data[i].real)!r} {float(coo.data[i].imag)!r}\n"
            )
