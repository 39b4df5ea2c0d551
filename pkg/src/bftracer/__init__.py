"""Exact finite-mode numerics for a Bose condensate coupled to a tracer.

The package realizes the microscopic N-boson-plus-tracer model on a torus
in momentum-truncated occupation bases, the excitation map that relabels
sector states by their excitation content, the depletion-weighted
quadratic model and the effective Bogoliubov-Froehlich dynamics, together
with an exact identity suite, a certified Krylov propagator and the
convergence experiments tying them together.
"""

from .basis import (
    ExcitationBasis,
    JointBasis,
    SectorBasis,
    StateVector,
    apply_annihilate,
    apply_create,
    basis_state,
    joint_basis,
    load_state,
    number_operator,
    save_state,
    total_momentum,
)
from .config import (
    ExperimentConfig,
    config_digest,
    parse_config,
    read_config_file,
    serialize_config,
)
from .diagnostics import (
    alpha_envelope,
    alpha_trace,
    bogoliubov_dispersion,
    bogoliubov_spectrum_check,
    error_curves,
    make_initial_state,
    quasiparticle_block_minimum,
    run_identity_suite,
    truncation_tail,
)
from .errors import (
    BasisMismatchError,
    ConvergenceError,
    DimensionLimitError,
    ValidationError,
)
from .modes import (
    ModelParams,
    ModeSet,
    PotentialSpec,
    build_mode_set,
    kinetic_energy,
    load_potential_file,
    preset_potential,
    validate_potential,
)
from .operators import (
    BlockDecomposition,
    SparseHermitianOperator,
    assemble_aux,
    assemble_bf,
    assemble_bog,
    assemble_dgamma_w,
    assemble_full,
    assemble_u_map,
    block_decompose,
    dump_operator,
    embed_excitation,
    joint_u_map,
    truncate_excitations,
)
from .propagate import PropagationConfig, dense_expm, evolve, evolve_blocked

__version__ = "0.1.0"
