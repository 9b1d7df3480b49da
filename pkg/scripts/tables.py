"""Self-convergence tables for the Maxwell reduced system.

One table per material: Size (w / 2 pi) rows, each with a set of resolutions
compared against a finer reference.  Desk-scale defaults reproduce the first
three Size rows of each table at n = 70 against n = 180 (a few minutes per
reference on one core).

    python scripts/tables.py --variant iso_222 --sizes 1e-50 1e-10 1 --ns 70 --reference 180
"""

import argparse
import logging
from pathlib import Path

from anisovie.krylov import SolveOptions
from anisovie.operators import EquationKind
from anisovie.scattering import ProblemTemplate, convergence_study, format_table, rows_to_csv
from anisovie import fftconv


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--variant", default="iso_222",
                    choices=("iso_222", "diag_234", "dense_rot", "iso_444"))
    ap.add_argument("--sizes", type=float, nargs="+", default=[1e-50, 1e-10, 1.0])
    ap.add_argument("--ns", type=int, nargs="+", default=[70])
    ap.add_argument("--reference", type=int, default=180)
    ap.add_argument("--tol", type=float, default=1e-14)
    ap.add_argument("--out", default="runs/tables")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for size in args.sizes:
        t = ProblemTemplate(EquationKind.MAXWELL_REDUCED, args.variant, size,
                            options=SolveOptions(tolerance=args.tol))
        r, _ = convergence_study(t, args.ns, args.reference)
        rows.extend(r)
        fftconv.clear_plan_cache()
        print(format_table(r), end="", flush=True)
    rows_to_csv(rows, out / f"table-{args.variant}.csv")
    (out / f"table-{args.variant}.txt").write_text(format_table(rows))
    print(format_table(rows), end="")


if __name__ == "__main__":
    main()
