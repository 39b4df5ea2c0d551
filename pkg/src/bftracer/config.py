"""Experiment configuration: flat typed key-value text, lossless round
trip, and a stable content hash that stamps every output record.

Units: the torus has side length one, momenta are integer lattice vectors
(wave vectors in units of 2*pi), energies are Laplacian units (hbar = 1)
and times are inverse energies.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .basis import DIMENSION_LIMIT
from .diagnostics import make_initial_state
from .errors import ValidationError
from .modes import (
    ModelParams,
    build_mode_set,
    load_potential_file,
    preset_potential,
)


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(x) for x in text.split(","))


def _show_int_tuple(value) -> str:
    return ",".join(str(int(x)) for x in value)


_TYPES = {
    int: (int, str),
    float: (float, lambda x: repr(float(x))),
    str: (str, str),
    tuple: (_parse_int_tuple, _show_int_tuple),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """All scientific parameters of a run.  Output paths and worker counts
    are deliberately not part of the config (and so not of its hash)."""

    d: int = 1
    lam: int = 1
    tracer_cutoff: int = 2
    tracer_mass: float = 1.0
    n_bosons: int = 4
    n_list: tuple = (4, 8, 16, 32, 64)
    cap: int = 8
    v_preset: str = "soft"
    v0: float = 1.0
    v_file: str = ""
    w_preset: str = "soft"
    w0: float = 1.0
    w_file: str = ""
    time: float = 1.0
    time_final: float = 2.0
    time_points: int = 21
    flavor: str = "full"
    initial_state: str = "single_excitation"
    init_p: tuple = (1,)
    init_q: tuple = (0,)
    init_sigma: float = 1.0
    identity_n_list: tuple = (2, 3, 4, 5, 6)
    spectrum_caps: tuple = (2, 4, 6, 8)
    tol_propagation: float = 1e-9
    krylov_dim: int = 40
    max_substeps: int = 10000
    dimension_limit: int = DIMENSION_LIMIT
    seed: int = 1234


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _codec_for(name: str):
    default = getattr(ExperimentConfig(), name)
    if isinstance(default, bool):
        raise AssertionError("no bool fields expected")
    if isinstance(default, int):
        return _TYPES[int]
    if isinstance(default, float):
        return _TYPES[float]
    if isinstance(default, tuple):
        return _TYPES[tuple]
    return _TYPES[str]


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical flat text: one ``key = value`` line per field, sorted."""
    lines = []
    for name in sorted(_FIELD_TYPES):
        _, show = _codec_for(name)
        lines.append(f"{name} = {show(getattr(cfg, name))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        key, _, raw = body.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELD_TYPES:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        parse, _ = _codec_for(key)
        try:
            updates[key] = parse(raw)
        except ValueError as exc:
            raise ValidationError(f"config line {lineno}: {exc}") from exc
    return replace(cfg, **updates)


def read_config_file(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base=base)


def write_config_file(path, cfg: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Apply ``key=value`` string overrides with the same typing as files."""
    text = "\n".join(f"{k} = {v}" for k, v in overrides.items())
    return parse_config(text, base=cfg)


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# model builders
# ---------------------------------------------------------------------------


def mode_set_from(cfg: ExperimentConfig):
    return build_mode_set(cfg.d, cfg.lam)


def potentials_from(cfg: ExperimentConfig, mode_set):
    if cfg.v_file:
        v = load_potential_file(cfg.v_file, "V", mode_set)
    else:
        v = preset_potential(cfg.v_preset, mode_set, kind="V", strength=cfg.v0)
    if cfg.w_file:
        w = load_potential_file(cfg.w_file, "W", mode_set)
    else:
        w = preset_potential(cfg.w_preset, mode_set, kind="W", strength=cfg.w0)
    return v, w


def params_from(cfg: ExperimentConfig, n_bosons: int | None = None) -> ModelParams:
    return ModelParams(n_bosons=cfg.n_bosons if n_bosons is None else n_bosons,
                       tracer_mass=cfg.tracer_mass,
                       tracer_cutoff=cfg.tracer_cutoff)


def initial_state_from(cfg: ExperimentConfig, mode_set, params, cap: int):
    return make_initial_state(cfg.initial_state, mode_set, params, cap,
                              p=cfg.init_p, q0=cfg.init_q, sigma=cfg.init_sigma)
