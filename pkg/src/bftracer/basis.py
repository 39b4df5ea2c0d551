"""Occupation-number bases, ladder operator actions and state vectors.

Three basis families are provided: the fixed-total sector basis of N
bosons over all modes, the excitation basis of at most ``cap`` bosons over
the nonzero modes, and the joint basis pairing a tracer plane-wave index
with either boson basis (flattened as ``tracer_index * boson_dim +
boson_index``).

Occupation vectors are enumerated in colexicographic order for a fixed
mode order, and indexing is a closed-form combinatorial ranking, so every
basis is reproducible bit for bit and rank/unrank run in O(number of
modes) without hashing.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import BasisMismatchError, DimensionLimitError, ValidationError
from .modes import ModeSet

#: default ceiling on basis dimensions (keeps dense oracles and sparse
#: assembly inside desk-scale memory)
DIMENSION_LIMIT = 5_000_000


def sector_dimension(n_modes: int, total: int) -> int:
    return comb(total + n_modes - 1, total)


def excitation_dimension(n_modes: int, cap: int) -> int:
    return sum(comb(n + n_modes - 1, n) for n in range(cap + 1))


def _compositions(total: int, parts: int):
    """Yield weak compositions of ``total`` into ``parts`` in colex order."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for last in range(total + 1):
        for head in _compositions(total - last, parts - 1):
            yield head + (last,)


def _rank_composition(occ, total: int) -> int:
    """Colex rank of a weak composition of ``total``."""
    r = 0
    remaining = total
    for i in range(len(occ), 1, -1):
        v = int(occ[i - 1])
        s = i - 1
        r += comb(remaining + s, s) - comb(remaining - v + s, s)
        remaining -= v
    return r


def _unrank_composition(r: int, total: int, parts: int) -> tuple[int, ...]:
    occ = [0] * parts
    remaining = total
    for i in range(parts, 1, -1):
        s = i - 1
        v = 0
        while True:
            block = comb(remaining - v + s - 1, s - 1)
            if r < block:
                break
            r -= block
            v += 1
        occ[i - 1] = v
        remaining -= v
    occ[0] = remaining
    return tuple(occ)


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:12]


class SectorBasis:
    """All occupation vectors over the full mode set with total exactly N."""

    def __init__(self, mode_set: ModeSet, n_bosons: int,
                 dimension_limit: int = DIMENSION_LIMIT):
        if n_bosons < 0:
            raise ValidationError(f"boson number must be nonnegative, got {n_bosons}")
        m = len(mode_set)
        dim = sector_dimension(m, n_bosons)
        if dim > dimension_limit:
            raise DimensionLimitError(
                f"sector basis with {m} modes and N={n_bosons} has dimension "
                f"{dim}, exceeding the limit of {dimension_limit}"
            )
        self.mode_set = mode_set
        self.n_bosons = n_bosons
        self.occupations = np.array(
            list(_compositions(n_bosons, m)), dtype=np.int64
        ).reshape(dim, m)
        self._modes_array = np.array(mode_set.modes, dtype=np.int64)

    @property
    def modes(self):
        return self.mode_set.modes

    @property
    def dimension(self) -> int:
        return self.occupations.shape[0]

    def index_of(self, occ) -> int:
        return _rank_composition(occ, self.n_bosons)

    def occupation(self, i: int) -> np.ndarray:
        return self.occupations[i]

    def totals(self) -> np.ndarray:
        return np.full(self.dimension, self.n_bosons, dtype=np.int64)

    def excitation_counts(self) -> np.ndarray:
        """Number of bosons outside the condensate mode, per basis element."""
        z = self.mode_set.zero_index
        return self.n_bosons - self.occupations[:, z]

    def momenta(self) -> np.ndarray:
        """Total momentum vector of every basis element, shape (dim, d)."""
        return self.occupations @ self._modes_array

    @property
    def descriptor(self) -> str:
        return f"sector(N={self.n_bosons})@{self.mode_set.descriptor}"

    @property
    def digest(self) -> str:
        return _digest(self.descriptor)


class ExcitationBasis:
    """Occupation vectors over the nonzero modes with total at most ``cap``."""

    def __init__(self, mode_set: ModeSet, cap: int,
                 dimension_limit: int = DIMENSION_LIMIT):
        if cap < 0:
            raise ValidationError(f"excitation cap must be nonnegative, got {cap}")
        m = len(mode_set.nonzero_indices)
        dim = excitation_dimension(m, cap)
        if dim > dimension_limit:
            raise DimensionLimitError(
                f"excitation basis with {m} modes and cap {cap} has dimension "
                f"{dim}, exceeding the limit of {dimension_limit}"
            )
        self.mode_set = mode_set
        self.cap = cap
        rows = []
        offsets = [0]
        for n in range(cap + 1):
            level = list(_compositions(n, m))
            rows.extend(level)
            offsets.append(offsets[-1] + len(level))
        self._level_offsets = np.array(offsets, dtype=np.int64)
        self.occupations = np.array(rows, dtype=np.int64).reshape(dim, m)
        self._modes_array = np.array(mode_set.nonzero_modes, dtype=np.int64).reshape(
            m, mode_set.d
        )

    @property
    def modes(self):
        return self.mode_set.nonzero_modes

    @property
    def dimension(self) -> int:
        return self.occupations.shape[0]

    def index_of(self, occ) -> int:
        total = int(sum(occ))
        if total > self.cap:
            raise KeyError(f"occupation total {total} exceeds cap {self.cap}")
        return int(self._level_offsets[total]) + _rank_composition(occ, total)

    def occupation(self, i: int) -> np.ndarray:
        return self.occupations[i]

    def totals(self) -> np.ndarray:
        return self.occupations.sum(axis=1)

    def excitation_counts(self) -> np.ndarray:
        return self.totals()

    def momenta(self) -> np.ndarray:
        return self.occupations @ self._modes_array

    @property
    def descriptor(self) -> str:
        return f"excitation(cap={self.cap})@{self.mode_set.descriptor}"

    @property
    def digest(self) -> str:
        return _digest(self.descriptor)


def tracer_momenta(d: int, cutoff: int) -> np.ndarray:
    """Tracer plane-wave momenta with ``|q|_inf <= cutoff``, lex order."""
    if cutoff < 0:
        raise ValidationError(f"tracer cutoff must be nonnegative, got {cutoff}")
    return np.array(
        list(itertools.product(range(-cutoff, cutoff + 1), repeat=d)),
        dtype=np.int64,
    )


class JointBasis:
    """Tracer plane waves tensored with a boson basis.

    The flattened index of (tracer ``t``, boson ``b``) is
    ``t * boson_dim + b``.
    """

    def __init__(self, tracer: np.ndarray, boson,
                 dimension_limit: int = DIMENSION_LIMIT):
        self.tracer = np.asarray(tracer, dtype=np.int64)
        if self.tracer.ndim != 2 or self.tracer.shape[1] != boson.mode_set.d:
            raise ValidationError("tracer momentum list has wrong shape")
        self.boson = boson
        dim = self.tracer.shape[0] * boson.dimension
        if dim > dimension_limit:
            raise DimensionLimitError(
                f"joint basis has dimension {dim}, exceeding the limit of "
                f"{dimension_limit}"
            )
        self._tracer_index = {tuple(q): i for i, q in enumerate(self.tracer)}

    @property
    def mode_set(self) -> ModeSet:
        return self.boson.mode_set

    @property
    def n_tracer(self) -> int:
        return self.tracer.shape[0]

    @property
    def dimension(self) -> int:
        return self.n_tracer * self.boson.dimension

    def flat_index(self, tracer_index: int, boson_index: int) -> int:
        return tracer_index * self.boson.dimension + boson_index

    def tracer_index_of(self, q) -> int:
        return self._tracer_index[tuple(int(c) for c in q)]

    def momenta(self) -> np.ndarray:
        """Total momentum (tracer plus bosons) per element, shape (dim, d)."""
        boson_p = self.boson.momenta()
        return np.repeat(self.tracer, self.boson.dimension, axis=0) + np.tile(
            boson_p, (self.n_tracer, 1)
        )

    def excitation_counts(self) -> np.ndarray:
        return np.tile(self.boson.excitation_counts(), self.n_tracer)

    @property
    def descriptor(self) -> str:
        cut = int(np.max(np.abs(self.tracer))) if self.tracer.size else 0
        return f"tracer(cutoff={cut},n={self.n_tracer})*{self.boson.descriptor}"

    @property
    def digest(self) -> str:
        return _digest(self.descriptor)


def joint_basis(mode_set: ModeSet, boson, tracer_cutoff: int,
                dimension_limit: int = DIMENSION_LIMIT) -> JointBasis:
    return JointBasis(tracer_momenta(mode_set.d, tracer_cutoff), boson,
                      dimension_limit=dimension_limit)


class FlatBasis:
    """An untyped index set; used to tag generic vectors and test operators."""

    def __init__(self, dimension: int):
        self._dimension = int(dimension)

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def descriptor(self) -> str:
        return f"flat(dim={self._dimension})"

    @property
    def digest(self) -> str:
        return _digest(self.descriptor)


@dataclass
class StateVector:
    """Complex amplitudes over a tagged basis."""

    basis: object
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (self.basis.dimension,):
            raise ValidationError(
                f"amplitude vector has shape {amps.shape}, basis dimension is "
                f"{self.basis.dimension}"
            )
        if not np.all(np.isfinite(amps)):
            raise ValidationError("amplitudes must be finite")
        self.amplitudes = amps

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def inner(self, other: "StateVector") -> complex:
        check_same_basis(self.basis, other.basis)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.basis, self.amplitudes.copy())


def check_same_basis(a, b) -> None:
    if a.descriptor != b.descriptor:
        raise BasisMismatchError(
            f"basis mismatch: {a.descriptor} vs {b.descriptor}"
        )


def zero_state(basis) -> StateVector:
    return StateVector(basis, np.zeros(basis.dimension, dtype=np.complex128))


def basis_state(basis, index: int) -> StateVector:
    amps = np.zeros(basis.dimension, dtype=np.complex128)
    amps[index] = 1.0
    return StateVector(basis, amps)


def _annihilation_targets(basis):
    """Target basis for one annihilation: N-1 sector, or the same cap space."""
    if isinstance(basis, SectorBasis):
        return SectorBasis(basis.mode_set, basis.n_bosons - 1)
    return basis


def _creation_targets(basis):
    if isinstance(basis, SectorBasis):
        return SectorBasis(basis.mode_set, basis.n_bosons + 1)
    return basis


def apply_annihilate(state: StateVector, mode_index: int, target=None) -> StateVector:
    """Apply ``a_k`` to a state, returning a state tagged with the target basis.

    For a sector basis the result lives in the N-1 sector; excitation bases
    are mapped into themselves.
    """
    src = state.basis
    if not 0 <= mode_index < len(src.modes):
        raise ValidationError(f"mode index {mode_index} out of range")
    if target is None:
        target = _annihilation_targets(src)
    out = np.zeros(target.dimension, dtype=np.complex128)
    occ = src.occupations
    nz = np.nonzero((state.amplitudes != 0) & (occ[:, mode_index] > 0))[0]
    for i in nz:
        n_k = occ[i, mode_index]
        new = occ[i].copy()
        new[mode_index] -= 1
        out[target.index_of(new)] += np.sqrt(n_k) * state.amplitudes[i]
    return StateVector(target, out)


def apply_create(state: StateVector, mode_index: int, target=None) -> StateVector:
    """Apply ``a_k^dagger``; components leaving the basis are an error here.

    Dropping out-of-range targets is the business of assembled operators
    (the cap-Galerkin rule), never of this low-level action.
    """
    src = state.basis
    if not 0 <= mode_index < len(src.modes):
        raise ValidationError(f"mode index {mode_index} out of range")
    if target is None:
        target = _creation_targets(src)
    if isinstance(src, ExcitationBasis):
        bad = (state.amplitudes != 0) & (src.totals() >= target.cap)
        if np.any(bad):
            raise ValidationError(
                "creation would exceed the excitation cap "
                f"{target.cap}; truncation is only performed by assembled operators"
            )
    out = np.zeros(target.dimension, dtype=np.complex128)
    occ = src.occupations
    nz = np.nonzero(state.amplitudes != 0)[0]
    for i in nz:
        new = occ[i].copy()
        new[mode_index] += 1
        out[target.index_of(new)] += np.sqrt(new[mode_index]) * state.amplitudes[i]
    return StateVector(target, out)


def number_operator(basis):
    """Diagonal excitation-number operator as a sparse matrix."""
    return sp.diags(basis.excitation_counts().astype(float)).tocsr()


def total_momentum(basis) -> np.ndarray:
    """Integer total-momentum vectors, one row per basis element."""
    return basis.momenta()


STATE_FORMAT_VERSION = 1


def save_state(path, state: StateVector) -> None:
    """Checkpoint a state: versioned header, basis digest, amplitude list."""
    with open(path, "w") as fh:
        fh.write(f"# bftracer state checkpoint v{STATE_FORMAT_VERSION}\n")
        fh.write(f"basis {state.basis.digest}\n")
        fh.write(f"dim {state.basis.dimension}\n")
        for a in state.amplitudes:
            fh.write(f"{float(a.real)!r} {float(a.imag)!r}\n")


def load_state(path, basis) -> StateVector:
    """Load a checkpoint written by :func:`save_state` onto a matching basis."""
    with open(path) as fh:
        header = fh.readline()
        if f"state checkpoint v{STATE_FORMAT_VERSION}" not in header:
            raise ValidationError(f"{path}: unrecognized checkpoint header")
        digest = fh.readline().split()[1]
        if digest != basis.digest:
            raise BasisMismatchError(
                f"{path}: checkpoint was written for basis {digest}, "
                f"got {basis.digest}"
            )
        dim = int(fh.readline().split()[1])
        if dim != basis.dimension:
            raise BasisMismatchError(f"{path}: dimension {dim} != {basis.dimension}")
        amps = np.empty(dim, dtype=np.complex128)
        for i in range(dim):
            re, im = fh.readline().split()
            amps[i] = complex(float(re), float(im))
    return StateVector(basis, amps)
