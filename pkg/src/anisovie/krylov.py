"""Unpreconditioned Krylov solvers with per-application residual tracking.

``N_matvec`` convention: every operator application counts once.  Bi-CGStab
applies the operator twice per iteration, so an iteration that converges at
its half step costs one application.  The true residual is recomputed when
the recursive estimate meets the tolerance; that certification application
is counted separately (``SolveTrace.certify_matvecs``) so iteration counts
stay comparable with textbook Bi-CGStab.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

log = logging.getLogger(__name__)


@dataclass
class SolveOptions:
    tolerance: float = 1e-14
    max_matvecs: int = 20000
    method: str = "bicgstab"
    restart: int = 50
    stagnation_window: int = 400

    def __post_init__(self):
        if not 0 < self.tolerance < 1:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tolerance}")
        if self.method not in ("bicgstab", "gmres"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.restart < 1:
            raise ValueError("gmres restart must be >= 1")
        if self.max_matvecs < 1:
            raise ValueError("max_matvecs must be >= 1")


@dataclass
class SolveTrace:
    matvecs: int = 0
    residuals: list = field(default_factory=list)
    wall_time: float = 0.0
    reason: str = "max_matvecs"
    true_residual: float = float("nan")
    certify_matvecs: int = 0
    restarts: int = 0

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["matvec", "residual"])
            for i, r in enumerate(self.residuals, start=1):
                w.writerow([i, f"{r:.15e}"])


class _Counted:
    def __init__(self, op: Callable):
        self.op = op
        self.count = 0

    def __call__(self, x):
        self.count += 1
        return self.op(x)


def _bicgstab(A: _Counted, b: np.ndarray, opts: SolveOptions, trace: SolveTrace,
              x0: Optional[np.ndarray] = None):
    bnorm = np.linalg.norm(b)
    tol = opts.tolerance
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b.copy() if x0 is None else b - A(x)
    if x0 is not None:
        trace.residuals.append(np.linalg.norm(r) / bnorm)
    best, best_at = np.inf, 0
    breakdowns = 0

    while True:
        rhat = r.copy()
        rho = alpha = omega = 1.0 + 0j
        v = np.zeros_like(b)
        p = np.zeros_like(b)
        restart = False
        while A.count < opts.max_matvecs:
            rho_new = np.vdot(rhat, r)
            if abs(rho_new) < 1e-300 or abs(omega) == 0:
                restart = True
                break
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            p = r + beta * (p - omega * v)
            v = A(p)
            denom = np.vdot(rhat, v)
            if denom == 0:
                restart = True
                break
            alpha = rho / denom
            s = r - alpha * v
            res = np.linalg.norm(s) / bnorm
            trace.residuals.append(res)
            if res <= tol:
                x = x + alpha * p
                r = s
                if _certified(A, b, x, bnorm, tol, trace):
                    return x, "converged"
                r = b - A.op(x)
                restart = True
                break
            if A.count >= opts.max_matvecs:
                x = x + alpha * p
                r = s
                break
            t = A(s)
            tt = np.vdot(t, t).real
            omega = np.vdot(t, s) / tt if tt > 0 else 0.0
            x = x + alpha * p + omega * s
            r = s - omega * t
            res = np.linalg.norm(r) / bnorm
            trace.residuals.append(res)
            if res <= tol:
                if _certified(A, b, x, bnorm, tol, trace):
                    return x, "converged"
                r = b - A.op(x)
                restart = True
                break
            if A.count % 100 < 2:
                log.info("bicgstab: %d matvecs, residual %.3e", A.count, res)
            if res < 0.999 * best:
                best, best_at = res, A.count
            elif A.count - best_at > opts.stagnation_window:
                return x, "stagnated"
        if not restart:
            return x, "max_matvecs"
        breakdowns += 1
        trace.restarts += 1
        if breakdowns > 3:
            log.warning("bicgstab breakdown persisted after restarts")
            return x, "stagnated"
        # restart from the current iterate with a fresh shadow residual


def _certified(A: _Counted, b, x, bnorm, tol, trace: SolveTrace) -> bool:
    trace.certify_matvecs += 1
    true = np.linalg.norm(b - A.op(x)) / bnorm
    trace.true_residual = float(true)
    return true <= 1.5 * tol


def solve(op, rhs: np.ndarray, opts: Optional[SolveOptions] = None):
    """Solve ``op(x) = rhs`` from a zero initial guess; returns ``(x, SolveTrace)``."""
    opts = opts or SolveOptions()
    b = np.asarray(rhs, dtype=complex).ravel()
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite entries")
    trace = SolveTrace()
    t0 = time.perf_counter()
    if not np.any(b):
        trace.reason = "converged"
        trace.true_residual = 0.0
        return np.zeros_like(b), trace
    A = _Counted(op)
    if opts.method == "bicgstab":
        x, reason = _bicgstab(A, b, opts, trace)
    else:
        x, reason = _gmres(A, b, opts, trace)
    trace.matvecs = A.count
    trace.reason = reason
    trace.wall_time = time.perf_counter() - t0
    if np.isnan(trace.true_residual):
        trace.true_residual = float(np.linalg.norm(b - A.op(x)) / np.linalg.norm(b))
        trace.certify_matvecs += 1
    return x, trace


def _gmres(A: _Counted, b: np.ndarray, opts: SolveOptions, trace: SolveTrace):
    n = b.size
    lin = LinearOperator((n, n), matvec=A, dtype=complex)
    restart = min(opts.restart, opts.max_matvecs)
    maxiter = max(1, opts.max_matvecs // restart)
    x, info = gmres(lin, b, rtol=opts.tolerance, atol=0.0, restart=restart, maxiter=maxiter,
                    callback=lambda pr: trace.residuals.append(float(pr)),
                    callback_type="pr_norm")
    if info == 0:
        return x, ("converged" if _certified(A, b, x, np.linalg.norm(b), opts.tolerance, trace)
                   else "stagnated")
    return x, "max_matvecs" if info > 0 else "stagnated"
