"""Self-convergence of the oscillatory-permittivity Maxwell problem.

Scaled-down analogue of the large oscillatory run: eps = (1 + W (1 + 0.1
sin(wx) sin(wy) sin(wz))) I with E_in = (0, 0, exp(iwx)), solved at two
resolutions; the relative probe-lattice error of the coarse currents is
printed and a z = 1/2 slice of the coarse E_sc z-component is written.
The defaults (w = 64 pi, n = 128 against 192) need hours and ~5 GB.

    python scripts/oscillatory_selfconvergence.py --size 32 --n 128 --reference 192
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from anisovie import fftconv
from anisovie.fieldio import write_slice_csv
from anisovie.grid import ProbeSet
from anisovie.krylov import SolveOptions
from anisovie.operators import EquationKind
from anisovie.scattering import (ProblemTemplate, probe_currents, recover, relative_errors,
                                 solve_problem)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--size", type=float, default=32.0, help="w / 2 pi")
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--reference", type=int, default=192)
    ap.add_argument("--tol", type=float, default=1e-10)
    ap.add_argument("--max-matvecs", type=int, default=12000)
    ap.add_argument("--out", default="runs/oscillatory")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = SolveOptions(tolerance=args.tol, max_matvecs=args.max_matvecs, stagnation_window=3000)
    t = ProblemTemplate(EquationKind.MAXWELL_REDUCED, "oscillatory", args.size, options=opts)
    probes = ProbeSet.lattice()
    vals = {}
    for n in (args.reference, args.n):
        t0 = time.perf_counter()
        s = solve_problem(t.build(n), recover_fields=False)
        vals[n] = probe_currents(s, probes)
        np.save(out / f"probes-{n}.npy", vals[n])
        s.trace.to_csv(out / f"trace-{n}.csv")
        print(f"n={n}: N_matvec={s.trace.matvecs} converged={s.converged} "
              f"residual={s.trace.true_residual:.2e} {time.perf_counter() - t0:.0f}s", flush=True)
        if n == args.n:
            E = recover(s.grid, EquationKind.MAXWELL_REDUCED, t.omega, s.J)["E_sc"]
            write_slice_csv(out / f"Ez-slice-{n}.csv", E[2], s.grid, 2, n // 2)
        del s
        fftconv.clear_plan_cache()
    e2, einf = relative_errors(vals[args.n], vals[args.reference])
    print(f"E2 = {e2:.2e}  Einf = {einf:.2e}")


if __name__ == "__main__":
    main()
