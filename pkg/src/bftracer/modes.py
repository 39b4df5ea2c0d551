"""Plane-wave modes of the unit torus and band-limited potentials.

Momenta are integer vectors ``k`` labelling the waves ``exp(2*pi*i*k.y)``
on the torus of side length one, so the Laplacian eigenvalue of mode ``k``
is ``4*pi^2*|k|^2``.  Potentials are finite Fourier coefficient tables;
a real position-space potential requires ``c(-p) == conj(c(p))`` and an
even one additionally ``c(-p) == c(p)``.  Both the boson pair potential
``V`` (even, real, mean zero) and the tracer coupling ``W`` (real, mean
zero) are represented this way.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionLimitError, ValidationError

Momentum = tuple[int, ...]

FOUR_PI_SQ = 4.0 * math.pi**2

#: absolute tolerance for the symmetry checks of ``validate_potential``
SYMMETRY_TOL = 1e-12

#: default ceiling for the number of one-particle modes
MAX_MODES = 200_000


def kinetic_energy(k: Iterable[int]) -> float:
    """Laplacian eigenvalue ``4*pi^2*|k|^2`` of the plane wave with momentum ``k``."""
    kk = np.asarray(tuple(k), dtype=np.int64)
    return FOUR_PI_SQ * float(kk @ kk)


@dataclass(frozen=True)
class ModeSet:
    """The momentum-truncated one-particle basis of the torus.

    Modes are all integer vectors with max-norm at most ``cutoff``, ordered
    lexicographically so that every derived basis and matrix is reproducible
    bit for bit.  The zero mode (the constant function) sits at
    ``zero_index``.
    """

    d: int
    cutoff: int
    modes: tuple[Momentum, ...]
    zero_index: int
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._index.update({k: i for i, k in enumerate(self.modes)})

    def __len__(self) -> int:
        return len(self.modes)

    def index_of(self, k: Iterable[int]) -> int:
        """Position of momentum ``k`` in the mode list; raises KeyError if absent."""
        return self._index[tuple(int(c) for c in k)]

    def contains(self, k: Iterable[int]) -> bool:
        return tuple(int(c) for c in k) in self._index

    def negation_index(self, i: int) -> int:
        """Index of ``-k`` for the mode ``k`` at index ``i``."""
        return self._index[tuple(-c for c in self.modes[i])]

    @property
    def nonzero_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.modes)) if i != self.zero_index)

    @property
    def nonzero_modes(self) -> tuple[Momentum, ...]:
        return tuple(self.modes[i] for i in self.nonzero_indices)

    @property
    def descriptor(self) -> str:
        return f"torus(d={self.d},cutoff={self.cutoff})"

    def kinetic_energies(self) -> np.ndarray:
        """Kinetic energy of every mode, in list order."""
        return np.array([kinetic_energy(k) for k in self.modes])


def build_mode_set(d: int, cutoff: int, max_modes: int = MAX_MODES) -> ModeSet:
    """Enumerate all momenta with ``|k|_inf <= cutoff`` in lexicographic order.

    Parameters
    ----------
    d : spatial dimension, one of 1, 2, 3.
    cutoff : nonnegative max-norm momentum cutoff.
    max_modes : guard against accidentally huge bases.
    """
    if d not in (1, 2, 3):
        raise ValidationError(f"spatial dimension must be 1, 2 or 3, got {d}")
    if cutoff < 0:
        raise ValidationError(f"cutoff must be nonnegative, got {cutoff}")
    n_modes = (2 * cutoff + 1) ** d
    if n_modes > max_modes:
        raise DimensionLimitError(
            f"mode set with cutoff {cutoff} in d={d} has {n_modes} modes, "
            f"exceeding the limit of {max_modes}"
        )
    modes = tuple(itertools.product(range(-cutoff, cutoff + 1), repeat=d))
    zero_index = modes.index((0,) * d)
    return ModeSet(d=d, cutoff=cutoff, modes=modes, zero_index=zero_index)


@dataclass(frozen=True)
class PotentialSpec:
    """Validated Fourier coefficient table of a torus potential.

    ``kind`` is ``"V"`` for the boson pair potential (even) or ``"W"`` for
    the tracer coupling.  Only nonzero coefficients are stored.  Instances
    should be produced through :func:`validate_potential`,
    :func:`preset_potential` or :func:`load_potential_file`; the raw
    constructor performs no checks.
    """

    kind: str
    coeffs: Mapping[Momentum, complex]

    def __call__(self, p: Iterable[int]) -> complex:
        return self.coeffs.get(tuple(int(c) for c in p), 0j)

    @property
    def support(self) -> tuple[Momentum, ...]:
        return tuple(sorted(self.coeffs))

    @property
    def is_zero(self) -> bool:
        return not self.coeffs

    def ell2_norm(self) -> float:
        """L2 norm of the position-space potential, by Parseval."""
        return math.sqrt(sum(abs(c) ** 2 for c in self.coeffs.values()))


def validate_potential(
    raw_coeffs: Mapping[Iterable[int], complex],
    kind: str,
    mode_set: ModeSet,
) -> PotentialSpec:
    """Check a raw coefficient table and freeze it into a :class:`PotentialSpec`.

    Violations are rejected, never repaired: a nonzero mean, a symmetry
    defect beyond :data:`SYMMETRY_TOL`, or support outside the momentum
    differences reachable within ``mode_set`` (max-norm ``2*cutoff``) all
    raise :class:`ValidationError`.
    """
    if kind not in ("V", "W"):
        raise ValidationError(f"potential kind must be 'V' or 'W', got {kind!r}")
    table: dict[Momentum, complex] = {}
    for p, c in raw_coeffs.items():
        key = tuple(int(x) for x in p)
        if len(key) != mode_set.d:
            raise ValidationError(
                f"momentum {key} has dimension {len(key)}, expected {mode_set.d}"
            )
        if key in table:
            raise ValidationError(f"duplicate coefficient for momentum {key}")
        table[key] = complex(c)

    zero = (0,) * mode_set.d
    if abs(table.get(zero, 0j)) > SYMMETRY_TOL:
        raise ValidationError(
            f"zero-mean violated: coefficient at p=0 is {table[zero]}"
        )
    table.pop(zero, None)

    reach = 2 * mode_set.cutoff
    for p in table:
        if max(abs(c) for c in p) > reach:
            raise ValidationError(
                f"coefficient at {p} lies outside the reachable momentum "
                f"transfers |p|_inf <= {reach}"
            )

    for p, c in table.items():
        neg = tuple(-x for x in p)
        cneg = table.get(neg, 0j)
        if abs(cneg - c.conjugate()) > SYMMETRY_TOL:
            raise ValidationError(
                f"realness violated at {p}: c(-p)={cneg}, conj(c(p))={c.conjugate()}"
            )
        if kind == "V" and abs(cneg - c) > SYMMETRY_TOL:
            raise ValidationError(
                f"evenness violated at {p}: c(-p)={cneg}, c(p)={c}"
            )

    table = {p: c for p, c in table.items() if c != 0}
    return PotentialSpec(kind=kind, coeffs=table)


PRESET_NAMES = ("soft", "gauss", "zero")


def preset_potential(
    name: str,
    mode_set: ModeSet,
    kind: str = "V",
    strength: float = 1.0,
) -> PotentialSpec:
    """Deterministic built-in coefficient tables.

    ``soft``  : c(p) = strength / (1 + |p|^2)
    ``gauss`` : c(p) = strength * exp(-|p|^2 / 2)
    ``zero``  : the free model

    All presets are real and even, fill the full reachable support
    ``0 < |p|_inf <= 2*cutoff`` and have zero mean.
    """
    if name not in PRESET_NAMES:
        raise ValidationError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    reach = 2 * mode_set.cutoff
    table: dict[Momentum, complex] = {}
    if name != "zero" and strength != 0.0:
        for p in itertools.product(range(-reach, reach + 1), repeat=mode_set.d):
            if all(c == 0 for c in p):
                continue
            p_sq = sum(c * c for c in p)
            if name == "soft":
                table[p] = complex(strength / (1.0 + p_sq))
            else:
                table[p] = complex(strength * math.exp(-0.5 * p_sq))
    return validate_potential(table, kind, mode_set)


def load_potential_file(path, kind: str, mode_set: ModeSet) -> PotentialSpec:
    """Read a coefficient table from a text file.

    One coefficient per line, ``p_1 ... p_d  re  im``; ``#`` starts a
    comment; blank lines and explicitly zero coefficients are allowed;
    a momentum appearing twice is an error.
    """
    table: dict[Momentum, complex] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != mode_set.d + 2:
                raise ValidationError(
                    f"{path}:{lineno}: expected {mode_set.d} momentum components "
                    f"plus re and im, got {len(parts)} fields"
                )
            try:
                p = tuple(int(x) for x in parts[: mode_set.d])
                re, im = float(parts[-2]), float(parts[-1])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            if p in table:
                raise ValidationError(f"{path}:{lineno}: duplicate momentum {p}")
            table[p] = complex(re, im)
    return validate_potential(table, kind, mode_set)


def save_potential_file(path, potential: PotentialSpec) -> None:
    """Write a coefficient table in the format read by :func:`load_potential_file`."""
    with open(path, "w") as fh:
        fh.write(f"# potential kind={potential.kind}\n")
        for p in potential.support:
            c = potential.coeffs[p]
            comps = " ".join(str(x) for x in p)
            fh.write(f"{comps} {float(c.real)!r} {float(c.imag)!r}\n")


@dataclass(frozen=True)
class ModelParams:
    """Particle numbers, masses and cutoffs of the coupled gas-tracer model.

    The coupling strengths are not free parameters: the boson pair coupling
    is ``1/N`` and the tracer coupling ``1/sqrt(N)``, both derived from
    ``n_bosons``.
    """

    n_bosons: int
    tracer_mass: float = 1.0
    tracer_cutoff: int = 2

    def __post_init__(self):
        if self.n_bosons < 1:
            raise ValidationError(f"n_bosons must be positive, got {self.n_bosons}")
        if self.tracer_mass <= 0:
            raise ValidationError(f"tracer_mass must be positive, got {self.tracer_mass}")
        if self.tracer_cutoff < 0:
            raise ValidationError(
                f"tracer_cutoff must be nonnegative, got {self.tracer_cutoff}"
            )

    @property
    def g_boson(self) -> float:
        """Mean-field pair coupling, fixed to 1/N."""
        return 1.0 / self.n_bosons

    @property
    def g_tracer(self) -> float:
        """Tracer coupling, fixed to N**(-1/2)."""
        return self.n_bosons ** -0.5
