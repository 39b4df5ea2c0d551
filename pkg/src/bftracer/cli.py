"""Batch experiment front end.

Subcommands: ``check`` (identity suite + propagator certification),
``evolve`` (single evolution with observables), ``converge``
(effective-dynamics error curves), ``spectrum`` (quasiparticle dispersion
report).  Exit codes: 0 success, 1 scientific-check failure, 2
usage/config error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import sys

import numpy as np
import scipy.sparse as sp

from . import diagnostics as diag
from .basis import FlatBasis, StateVector, save_state
from .config import (
    ExperimentConfig,
    apply_overrides,
    config_digest,
    initial_state_from,
    mode_set_from,
    params_from,
    parse_config,
    potentials_from,
    read_config_file,
    serialize_config,
)
from .errors import ConvergenceError, DimensionLimitError, ValidationError
from .operators import (
    SparseHermitianOperator,
    assemble_aux,
    assemble_bf,
    assemble_bog,
    assemble_full,
    dump_operator,
    joint_excitation_basis,
    joint_sector_basis,
    joint_u_map,
)
from .propagate import PropagationConfig, dense_expm, evolve, evolve_on_grid
from .reports import RunWriter, write_columns
from . import plotting


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bftracer",
        description="exact finite-mode numerics for a condensate-tracer model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="seed for randomized suites")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a single config key (repeatable)")
        p.add_argument("--preset", help="potential preset for both V and W")
        p.add_argument("--v0", type=float, help="pair potential strength")
        p.add_argument("--w0", type=float, help="tracer potential strength")
        p.add_argument("--potential-file", help="Fourier table file for V")
        p.add_argument("--w-file", help="Fourier table file for W")

    p_check = sub.add_parser("check", help="run the exact identity suite")
    common(p_check)
    p_check.add_argument("--list", action="store_true",
                         help="print the identity inventory and exit")
    p_check.set_defaults(func=cmd_check)

    p_evolve = sub.add_parser("evolve", help="one evolution with observables")
    common(p_evolve)
    p_evolve.add_argument("--flavor", choices=("full", "aux", "bf"))
    p_evolve.add_argument("--save-states", action="store_true",
                          help="checkpoint the state at every grid time")
    p_evolve.add_argument("--dump-operator", action="store_true",
                          help="dump the Hamiltonian in coordinate format")
    p_evolve.set_defaults(func=cmd_evolve)

    p_conv = sub.add_parser("converge", help="effective-dynamics error curves")
    common(p_conv)
    p_conv.add_argument("--workers", type=int, default=1,
                        help="parallel sweep cells")
    p_conv.set_defaults(func=cmd_converge)

    p_spec = sub.add_parser("spectrum", help="quasiparticle dispersion report")
    common(p_spec)
    p_spec.set_defaults(func=cmd_spectrum)
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = read_config_file(args.config, base=cfg)
    overrides = {}
    if args.preset:
        overrides["v_preset"] = args.preset
        overrides["w_preset"] = args.preset
    if args.v0 is not None:
        overrides["v0"] = repr(args.v0)
    if args.w0 is not None:
        overrides["w0"] = repr(args.w0)
    if args.potential_file:
        overrides["v_file"] = args.potential_file
    if args.w_file:
        overrides["w_file"] = args.w_file
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = apply_overrides(cfg, overrides)
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        cfg = apply_overrides(cfg, {key.strip(): value.strip()})
    return cfg


def _initial_state_record(phi_meta: dict) -> dict:
    rec = dict(phi_meta)
    rec["state_kind"] = rec.pop("kind")
    rec["kind"] = "initial_state"
    return rec


def _prop_cfg(cfg: ExperimentConfig, t: float) -> PropagationConfig:
    return PropagationConfig(time=t, tolerance=cfg.tol_propagation,
                             krylov_dim=cfg.krylov_dim,
                             max_substeps=cfg.max_substeps)


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def _propagator_checks(cfg: ExperimentConfig, writer: RunWriter) -> bool:
    rng = np.random.default_rng(cfg.seed)
    ok = True
    for dim in (64, 128, 256):
        h = random_sparse_hermitian(dim, rng)
        basis = FlatBasis(dim)
        op = SparseHermitianOperator(h, basis, name=f"random{dim}")
        amps = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        amps /= np.linalg.norm(amps)
        psi = StateVector(basis, amps)
        t = 0.9
        approx = evolve(op, psi, _prop_cfg(cfg, t))
        exact = dense_expm(op, psi, t)
        dev = float(np.linalg.norm(approx.amplitudes - exact.amplitudes))
        passed = dev <= 1e-8
        ok = ok and passed
        writer.add({"kind": "propagator_check", "name": f"krylov_vs_dense_{dim}",
                    "deviation": dev, "tolerance": 1e-8, "passed": passed})

    ms = mode_set_from(cfg)
    v, w = potentials_from(cfg, ms)
    params = params_from(cfg, n_bosons=min(cfg.identity_n_list))
    n = params.n_bosons
    try:
        ops = {
            "full": assemble_full(ms, v, w, params),
            "aux": assemble_aux(ms, v, w, params),
            "bf": assemble_bf(ms, v, w, params, cap=n),
            "bog": assemble_bog(ms, v, cap=n),
        }
    except ValidationError as exc:
        writer.add({"kind": "propagator_check", "name": "assembly",
                    "passed": False, "note": str(exc)})
        return False
    for label, op in ops.items():
        rng_local = np.random.default_rng(cfg.seed + 1)
        amps = rng_local.standard_normal(op.dimension) \
            + 1j * rng_local.standard_normal(op.dimension)
        amps /= np.linalg.norm(amps)
        psi = StateVector(op.basis, amps)
        t = 2.0
        fwd = evolve(op, psi, _prop_cfg(cfg, t))
        back = evolve(op, fwd, _prop_cfg(cfg, -t))
        drift_norm = abs(fwd.norm() - psi.norm())
        drift_energy = abs(op.expectation(fwd) - op.expectation(psi))
        reversal = float(np.linalg.norm(back.amplitudes - psi.amplitudes))
        tol_drift = cfg.tol_propagation * (1.0 + abs(t))
        passed = (drift_norm <= tol_drift and drift_energy <= tol_drift
                  and reversal <= 1e-8)
        ok = ok and passed
        writer.add({"kind": "propagator_check", "name": f"conservation_{label}",
                    "norm_drift": drift_norm, "energy_drift": drift_energy,
                    "reversal": reversal, "tolerance": tol_drift,
                    "passed": passed})
    return ok


def random_sparse_hermitian(dim: int, rng, density: float = 0.05) -> sp.csr_matrix:
    nnz = max(1, int(density * dim * dim / 2))
    rows = rng.integers(0, dim, nnz)
    cols = rng.integers(0, dim, nnz)
    vals = rng.standard_normal(nnz) + 1j * rng.standard_normal(nnz)
    upper = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    h = upper + upper.getH()
    return h


def cmd_check(cfg: ExperimentConfig, args) -> int:
    if args.list:
        for name, desc in diag.IDENTITY_INVENTORY.items():
            print(f"{name:32s} {desc}")
        return 0
    writer = RunWriter(args.out, config_digest(cfg))
    v, w = potentials_from(cfg, mode_set_from(cfg))
    with writer.time_block("identity_suite"):
        report = diag.run_identity_suite(
            d=cfg.d, lam=cfg.lam, n_list=cfg.identity_n_list, v=v, w=w,
            tracer_mass=cfg.tracer_mass, tracer_cutoff=cfg.tracer_cutoff,
            seed=cfg.seed)
    for res in report.results:
        writer.add(res.as_record())
    with writer.time_block("propagator_checks"):
        prop_ok = _propagator_checks(cfg, writer)
    writer.finish()

    for res in report.results:
        status = "pass" if res.passed else "FAIL"
        print(f"{status}  {res.name:32s} N={res.n_bosons:<3d} "
              f"dev={res.deviation:.3e} tol={res.tolerance:g}")
    print(f"identity suite: {len(report.results)} checks, "
          f"{len(report.failures())} failures; propagator checks "
          f"{'pass' if prop_ok else 'FAIL'}")
    return 0 if (report.all_passed and prop_ok) else 1


# ---------------------------------------------------------------------------
# evolve
# ---------------------------------------------------------------------------


def cmd_evolve(cfg: ExperimentConfig, args) -> int:
    if args.flavor:
        cfg = apply_overrides(cfg, {"flavor": args.flavor})
    writer = RunWriter(args.out, config_digest(cfg))
    ms = mode_set_from(cfg)
    v, w = potentials_from(cfg, ms)
    params = params_from(cfg)
    n = params.n_bosons
    cap = min(n, cfg.cap)
    phi, phi_meta = initial_state_from(cfg, ms, params, cap)

    flavor = cfg.flavor
    if flavor == "bf":
        jb = joint_excitation_basis(ms, params, cap)
        psi0 = diag.recap_state(phi, jb)
        op = assemble_bf(ms, v, w, params, cap, basis=jb)
    elif flavor == "aux":
        jb = joint_excitation_basis(ms, params, n)
        psi0 = diag.recap_state(phi, jb)
        op = assemble_aux(ms, v, w, params, basis=jb)
    elif flavor == "full":
        jexc = joint_excitation_basis(ms, params, n)
        jsec = joint_sector_basis(ms, params)
        uj = joint_u_map(jsec, jexc)
        phi_n = diag.recap_state(phi, jexc)
        psi0 = StateVector(jsec, uj.getH() @ phi_n.amplitudes)
        op = assemble_full(ms, v, w, params, basis=jsec)
    else:
        raise ValidationError(f"unknown flavor {cfg.flavor!r}")

    if args.dump_operator:
        dump_operator(op, writer.path("hamiltonian.txt"))

    times = np.linspace(0.0, cfg.time_final, cfg.time_points)
    with writer.time_block("evolution"):
        states = evolve_on_grid(op, psi0, times, _prop_cfg(cfg, 0.0))

    counts = op.basis.excitation_counts().astype(float)
    momenta = op.basis.momenta()
    rows = []
    for t, state in zip(times, states):
        weights = np.abs(state.amplitudes) ** 2
        alpha = float(np.sum((counts + 1.0) ** 2 * weights))
        ptot = [float(np.sum(momenta[:, i] * weights)) for i in range(ms.d)]
        rec = {
            "kind": "observables", "flavor": flavor, "time": float(t),
            "norm": state.norm(), "energy": op.expectation(state),
            "alpha": alpha, "momentum": ptot,
            "tolerance_propagation": cfg.tol_propagation,
        }
        writer.add(rec)
        rows.append([float(t), state.norm(), op.expectation(state), alpha, *ptot])

    writer.add(_initial_state_record(phi_meta))
    header = ["observables " + flavor,
              f"config {config_digest(cfg)}",
              "columns: t norm energy alpha " +
              " ".join(f"p_{i}" for i in range(ms.d))]
    write_columns(writer.path("observables.dat"), header, rows)
    write_columns(writer.path("alpha.dat"),
                  [f"excitation growth, flavor {flavor}",
                   f"config {config_digest(cfg)}", "columns: t alpha"],
                  [[r[0], r[3]] for r in rows])
    plotting.save_observables_figure(
        writer.path("observables.png"), times,
        {"norm": [r[1] for r in rows], "energy": [r[2] for r in rows],
         "alpha": [r[3] for r in rows]})
    if args.save_states:
        import os
        os.makedirs(writer.path("states"), exist_ok=True)
        for i, state in enumerate(states):
            save_state(writer.path(f"states/state_{i:04d}.txt"), state)
    writer.finish()
    print(f"evolve[{flavor}]: N={n}, {len(times)} grid points, "
          f"records in {args.out}")
    return 0


# ---------------------------------------------------------------------------
# converge
# ---------------------------------------------------------------------------


def _converge_cell(cfg_text: str, n: int) -> dict:
    cfg = parse_config(cfg_text)
    ms = mode_set_from(cfg)
    v, w = potentials_from(cfg, ms)
    params = params_from(cfg, n_bosons=n)
    cap = min(min(cfg.n_list), cfg.cap)
    phi, _ = initial_state_from(cfg, ms, params, cap)
    return diag.error_cell(
        n, cfg.time, ms, v, w, phi,
        tracer_mass=cfg.tracer_mass, tracer_cutoff=cfg.tracer_cutoff,
        cap_max=cfg.cap, tolerance=cfg.tol_propagation,
        krylov_dim=cfg.krylov_dim, max_substeps=cfg.max_substeps,
        dimension_limit=cfg.dimension_limit)


def cmd_converge(cfg: ExperimentConfig, args) -> int:
    writer = RunWriter(args.out, config_digest(cfg))
    cfg_text = serialize_config(cfg)
    n_list = sorted(cfg.n_list)
    ms = mode_set_from(cfg)
    params = params_from(cfg, n_bosons=max(n_list))
    _, phi_meta = initial_state_from(cfg, ms, params,
                                     min(min(n_list), cfg.cap))
    writer.add(_initial_state_record(phi_meta))
    cells = []
    failures = []
    with writer.time_block("sweep"):
        if args.workers > 1:
            with concurrent.futures.ProcessPoolExecutor(args.workers) as pool:
                futures = {pool.submit(_converge_cell, cfg_text, n): n
                           for n in n_list}
                for fut in concurrent.futures.as_completed(futures):
                    n = futures[fut]
                    try:
                        cells.append(fut.result())
                    except (ConvergenceError, DimensionLimitError) as exc:
                        failures.append((n, str(exc)))
        else:
            for n in n_list:
                try:
                    cells.append(_converge_cell(cfg_text, n))
                except (ConvergenceError, DimensionLimitError) as exc:
                    failures.append((n, str(exc)))

    cells.sort(key=lambda rec: rec["n_bosons"])
    for rec in cells:
        writer.add(rec)
    for n, message in failures:
        writer.add({"kind": "error_cell_failed", "n_bosons": n, "note": message})

    result = None
    if len(cells) >= 1:
        result = diag.curves_from_cells(cells, cfg.time, cfg.tol_propagation,
                                        cfg.cap)
        for kind in ("total", "aux_gap", "aux_bf_gap"):
            curve = result[kind]
            writer.add({
                "kind": "error_fit", "curve": kind, "time": curve.time,
                "slope": curve.slope, "prefactor": curve.prefactor,
                "fit_window": curve.fit_window,
                "bound_prefactor": curve.bound_prefactor(),
                "bound_ok": curve.bound_ok(),
                "nonincreasing_ok": curve.nonincreasing_ok(),
                "triangle_ok": result["triangle_ok"],
                "doubling_ok": result["doubling_ok"],
            })
            write_columns(
                writer.path(f"error_{kind}.dat"),
                [f"error curve {kind}", f"config {config_digest(cfg)}",
                 "columns: N error"],
                [[c["n_bosons"], c[_CELL_FIELD[kind]]] for c in cells])
        plotting.save_error_curve_figure(
            writer.path("error_curves.png"),
            {k: result[k] for k in ("total", "aux_gap", "aux_bf_gap")})
    writer.finish()

    if failures:
        print(f"converge: {len(cells)} cells completed, "
              f"{len(failures)} failed; partial results persisted in {args.out}")
        return 3
    total = result["total"]
    print(f"converge: t={cfg.time}, N={n_list}, slope={total.slope}, "
          f"bound_ok={total.bound_ok()}, records in {args.out}")
    return 0


_CELL_FIELD = {"total": "error_total", "aux_gap": "gap_aux",
               "aux_bf_gap": "gap_aux_bf"}


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------


def cmd_spectrum(cfg: ExperimentConfig, args) -> int:
    writer = RunWriter(args.out, config_digest(cfg))
    ms = mode_set_from(cfg)
    v, _ = potentials_from(cfg, ms)
    with writer.time_block("spectrum"):
        report = diag.bogoliubov_spectrum_check(ms, v, caps=cfg.spectrum_caps)
    for cap in report.caps:
        for p in report.momenta:
            if p in report.gaps[cap]:
                writer.add({"kind": "spectrum_gap", "cap": cap,
                            "momentum": list(p),
                            "gap": report.gaps[cap][p]})
    writer.add({
        "kind": "spectrum_summary",
        "unstable": report.unstable,
        "max_deviation": report.max_deviation,
        "converged_ok": report.converged_ok,
        "monotone_ok": report.monotone_ok,
        "ground_energies": {str(k): v for k, v in report.ground_energies.items()},
        "ground_energy_oracle": report.ground_energy_oracle,
    })
    rows = []
    if not report.unstable:
        last = report.caps[-1]
        for p in report.momenta:
            rows.append([*p, report.gaps[last][p], report.oracle[p]])
        write_columns(writer.path("dispersion.dat"),
                      ["quasiparticle dispersion",
                       f"config {config_digest(cfg)}",
                       "columns: p gap oracle"], rows)
    plotting.save_spectrum_figure(writer.path("dispersion.png"), report)
    writer.finish()
    if report.unstable:
        print("spectrum: UNSTABLE potential (complex dispersion); check skipped")
        return 0
    print(f"spectrum: caps={report.caps}, max deviation from oracle "
          f"{report.max_deviation:.3e}, converged={report.converged_ok}")
    return 0 if report.converged_ok else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
    except (ValidationError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(cfg, args)
    except (ValidationError, DimensionLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
