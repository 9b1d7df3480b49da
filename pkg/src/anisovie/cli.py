"""Command-line driver.

    anisovie solve     --config run.ini [--out DIR] [--tol T] [--method M] [--threads N]
    anisovie converge  --config study.ini
    anisovie sweep     --config sweep.ini
    anisovie kernel-dump --config run.ini [--kernel g] [--axis z] [--index 0] [--space fourier]
    anisovie export    SOLUTION_DIR --what {slice,probes,trace} [--field E_sc] [--component z]

Exit status: 0 success, 2 invalid configuration or arguments, 3 a solve did
not converge, 4 other runtime errors (bad solution directory, missing field).
The default output root is ``$ANISOVIE_OUT`` or ``./runs``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fftconv
from .config import ConfigError, RunConfig, load_config
from .fieldio import write_slice_csv
from .grid import ProbeSet, ScalarField, sample_at_probes
from .operators import EquationKind
from .scattering import (convergence_study, format_table, load_solution, rows_to_csv,
                         solve_problem)

log = logging.getLogger("anisovie")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_RUNTIME = 0, 2, 3, 4

LABELS = {"iso_222": "D222", "diag_234": "D234", "dense_rot": "R234", "iso_444": "D444"}
_AXES = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}


def _e(v: float) -> str:
    return f"{v:.15e}"


def _write_lines(path: Path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.tol is not None or args.method is not None:
        try:
            cfg.solver = replace(cfg.solver,
                                 tolerance=cfg.solver.tolerance if args.tol is None else args.tol,
                                 method=cfg.solver.method if args.method is None else args.method)
        except ValueError as e:
            raise ConfigError("solver", str(e)) from None
    return cfg


def _run_dir(cfg: RunConfig, args, prefix: str) -> Path:
    d = cfg.output_root(args.out) / f"{prefix}-{cfg.fingerprint()}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "run.ini").write_text(cfg.canonical(), encoding="utf-8", newline="\n")
    return d


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args) -> int:
    cfg = _config(args)
    d = _run_dir(cfg, args, "solve")
    p = cfg.problem()
    s = solve_problem(p)
    s.save(d / "solution")
    t = s.trace
    header = "Size,N_tot,n_side,N_matvec,converged,true_residual,Time"
    row = [_e(cfg.size), str(p.n_unknowns), str(cfg.n_side), str(t.matvecs),
           str(s.converged).lower(), _e(t.true_residual), _e(t.wall_time)]
    _write_lines(d / "summary.csv", [header, ",".join(row)])
    print(f"Size={cfg.size:.3g} N_tot={p.n_unknowns} n_side={cfg.n_side} "
          f"N_matvec={t.matvecs}{'' if s.converged else '*'} Time={t.wall_time:.2f}s "
          f"residual={t.true_residual:.2e} -> {d}")
    return EXIT_OK if s.converged else EXIT_NONCONVERGED


def cmd_converge(args) -> int:
    cfg = _config(args)
    if not cfg.study_sizes:
        raise ConfigError("study.sizes", "a convergence study needs at least one size")
    if cfg.reference is None:
        raise ConfigError("study.reference", "a convergence study needs a reference size")
    d = _run_dir(cfg, args, "converge")
    rows, _ = convergence_study(cfg.template(), cfg.study_sizes, cfg.reference, cfg.probes())
    rows_to_csv(rows, d / "converge.csv")
    table = format_table(rows)
    (d / "converge.txt").write_text(table, encoding="utf-8", newline="\n")
    print(table, end="")
    return EXIT_OK if all(r.converged for r in rows) else EXIT_NONCONVERGED


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if cfg.kind is EquationKind.ELECTROSTATIC:
        raise ConfigError("problem.kind", "a frequency sweep needs a Helmholtz or Maxwell kind")
    if not cfg.sweep_sizes:
        raise ConfigError("sweep.omegas", "empty frequency list")
    d = _run_dir(cfg, args, "sweep")
    lines = ["label,variant,omega,Size,N_matvec,converged,Time"]
    all_ok = True
    for variant in cfg.sweep_variants:
        for size in cfg.sweep_sizes:
            s = solve_problem(cfg.template(variant, size).build(cfg.n_side), recover_fields=False)
            ok = s.converged
            all_ok &= ok
            n = s.trace.matvecs if ok else -1
            label = LABELS.get(variant, variant)
            lines.append(",".join([label, variant, _e(s.omega), _e(size), str(n), str(ok).lower(),
                                   _e(s.trace.wall_time)]))
            print(f"{label:>6}  omega={s.omega:10.4f}  N_matvec={n}", flush=True)
    _write_lines(d / "sweep.csv", lines)
    return EXIT_OK if all_ok else EXIT_NONCONVERGED


def cmd_kernel_dump(args) -> int:
    cfg = _config(args)
    if args.kernel not in fftconv.KERNELS:
        raise ConfigError("--kernel", f"unknown kernel {args.kernel!r}; choose from {fftconv.KERNELS}")
    axis = _axis(args.axis)
    grid = cfg.problem().grid
    plan = fftconv.build_kernel_plan(grid, cfg.omega if cfg.kind is not EquationKind.ELECTROSTATIC else 0.0,
                                     cfg.L)
    if args.space == "fourier":
        data = plan.full_multiplier(args.kernel)
        coords = [np.fft.fftfreq(M, d=plan.h) * 2 * np.pi for M in plan.padded]
        names = ("kx", "ky", "kz")
    else:
        data = plan.kernel_samples(args.kernel)
        coords = [np.arange(m) * plan.h for m in data.shape]
        names = ("x", "y", "z")
    index = args.index if args.index is not None else 0
    if not 0 <= index < data.shape[axis]:
        raise ConfigError("--index", f"outside 0..{data.shape[axis] - 1}")
    plane = np.take(data, index, axis=axis)
    c = list(coords)
    fixed = c.pop(axis)[index]
    U, V = np.meshgrid(c[0], c[1], indexing="ij")
    cols = [U.ravel(), V.ravel()]
    cols.insert(axis, np.full(U.size, fixed))
    out = cfg.output_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"kernel-{args.kernel}-{args.space}-{'xyz'[axis]}{index}-{cfg.fingerprint()}.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(names) + ",re,im\n")
        np.savetxt(fh, np.column_stack(cols + [plane.real.ravel(), plane.imag.ravel()]),
                   fmt="%.15e", delimiter=",")
    print(path)
    return EXIT_OK


def _axis(text: str) -> int:
    if text not in _AXES:
        raise ConfigError("--axis", f"expected x, y or z, got {text!r}")
    return _AXES[text]


def cmd_export(args) -> int:
    s = load_solution(args.solution)
    out = Path(args.output) if args.output else Path(args.solution) / "export"
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "trace":
        path = out / "trace.csv"
        s.trace.to_csv(path)
        print(path)
        return EXIT_OK
    arr = s.get(args.field)
    if arr.ndim == 4:
        if args.component is None:
            raise ConfigError("--component", f"{args.field} is a vector field; pick x, y or z")
        comp = _axis(args.component)
        arr, tag = arr[comp], f"{args.field}_{'xyz'[comp]}"
    else:
        tag = args.field
    if args.what == "slice":
        axis = _axis(args.axis)
        n = s.grid.n_side
        if args.index is not None:
            index = args.index
        else:
            # node nearest to the requested coordinate
            index = int(np.clip(np.floor((args.coord - s.grid.origin[axis]) * n), 0, n - 1))
        path = out / f"slice-{tag}-{'xyz'[axis]}{index}.csv"
        write_slice_csv(path, arr, s.grid, axis, index)
    else:
        probes = ProbeSet.lattice(args.probe_count, args.probe_lo, args.probe_hi)
        vals = sample_at_probes(ScalarField(s.grid, arr), probes)
        path = out / f"probes-{tag}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("x,y,z,re,im\n")
            np.savetxt(fh, np.column_stack([probes.points, vals.real, vals.imag]),
                       fmt="%.15e", delimiter=",")
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anisovie", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", help="output root (default $ANISOVIE_OUT or ./runs)")
        p.add_argument("--threads", type=int, help="cap FFT worker threads")
        p.add_argument("--tol", type=float, help="override solver tolerance")
        p.add_argument("--method", choices=("bicgstab", "gmres"), help="override Krylov method")

    common(sub.add_parser("solve", help="solve one problem and write a solution directory"))
    common(sub.add_parser("converge", help="self-convergence table against a reference size"))
    common(sub.add_parser("sweep", help="iteration counts versus frequency per material"))
    kd = sub.add_parser("kernel-dump", help="write a slice of a kernel multiplier")
    common(kd)
    kd.add_argument("--kernel", default="g", help=f"one of {', '.join(fftconv.KERNELS)}")
    kd.add_argument("--axis", default="z")
    kd.add_argument("--index", type=int)
    kd.add_argument("--space", choices=("fourier", "real"), default="fourier")

    ex = sub.add_parser("export", help="export slices, probe samples or the residual trace")
    ex.add_argument("solution", help="solution directory written by 'solve'")
    ex.add_argument("--what", choices=("slice", "probes", "trace"), required=True)
    ex.add_argument("--field", default="J")
    ex.add_argument("--component")
    ex.add_argument("--axis", default="z")
    ex.add_argument("--index", type=int)
    ex.add_argument("--coord", type=float, default=0.5, help="slice coordinate if --index is absent")
    ex.add_argument("--probe-count", type=int, default=11)
    ex.add_argument("--probe-lo", type=float, default=0.25)
    ex.add_argument("--probe-hi", type=float, default=0.75)
    ex.add_argument("--output", help="output directory (default SOLUTION/export)")
    ex.add_argument("--threads", type=int)
    return ap


COMMANDS = {"solve": cmd_solve, "converge": cmd_converge, "sweep": cmd_sweep,
            "kernel-dump": cmd_kernel_dump, "export": cmd_export}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        fftconv.set_workers(args.threads)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, FileNotFoundError, ValueError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
