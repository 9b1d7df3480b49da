"""End-to-end scattering problems: incoming data, solve, field recovery, checks.

Unknowns are solved on the bounding box of the material contrast (the
"window").  Outside that box the multiplier vanishes, so the currents do too,
and the restricted system is exactly the full one.  Maxwell currents are the
rescaled ones, ``J = (eps - I) E_total`` and ``M = (mu - I) H_total``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fftconv
from .fftconv import DEFAULT_L, KernelPlan
from .fieldio import read_field, write_field
from .grid import ComplexVectorField, ProbeSet, ScalarField, UniformGrid, make_grid, sample_at_probes
from .krylov import SolveOptions, SolveTrace, solve
from .media import TensorField, build_eps, cayley_multiplier, identity_tensor
from .operators import EquationKind, SystemOperator, rhs_build

log = logging.getLogger(__name__)

INCOMING_KINDS = ("uniform_gradient", "harmonic_poly", "plane_wave")
_PDE_TOL = 1e-10


# ---------------------------------------------------------------------------
# incoming fields


def _monomial_laplacian(coeffs: dict) -> dict:
    out: dict = {}
    for (a, b, c), v in coeffs.items():
        for axis, e in enumerate((a, b, c)):
            if e >= 2:
                key = [a, b, c]
                key[axis] -= 2
                out[tuple(key)] = out.get(tuple(key), 0.0) + v * e * (e - 1)
    return out


@dataclass(frozen=True)
class IncomingField:
    """Analytic incoming data.

    ``uniform_gradient``: ``phi = A d.x``.
    ``harmonic_poly``: ``phi = A sum c_abc x^a y^b z^c``, ``coeffs`` maps exponent
    triples to coefficients and must be harmonic.
    ``plane_wave``: scalar kinds use ``phi = A exp(i w d.x) / (i w)`` so that
    ``grad phi = A d exp(i w d.x)`` keeps unit size as ``w -> 0``; Maxwell uses
    ``E = A p exp(i w d.x)``, ``H = A (d x p) exp(i w d.x)``.
    """

    kind: str
    direction: tuple = (1.0, 0.0, 0.0)
    omega: float = 0.0
    polarization: tuple = (0.0, 0.0, 1.0)
    amplitude: complex = 1.0
    coeffs: tuple = ()
    degree: int = 1

    def __post_init__(self):
        if self.kind not in INCOMING_KINDS:
            raise ValueError(f"unknown incoming kind {self.kind!r}; choose from {INCOMING_KINDS}")
        object.__setattr__(self, "direction", tuple(float(v) for v in self.direction))
        object.__setattr__(self, "polarization", tuple(complex(v) for v in self.polarization))
        if self.kind == "harmonic_poly":
            cs = tuple(sorted((tuple(int(e) for e in k), float(v)) for k, v in dict(self.coeffs).items()))
            if not cs:
                raise ValueError("harmonic_poly needs at least one coefficient")
            if max(sum(k) for k, _ in cs) > self.degree:
                raise ValueError("harmonic_poly coefficient exceeds the declared degree")
            object.__setattr__(self, "coeffs", cs)

    # constructors
    @classmethod
    def uniform_gradient(cls, direction=(1.0, 0.0, 0.0), amplitude=1.0) -> "IncomingField":
        return cls("uniform_gradient", direction=direction, amplitude=amplitude)

    @classmethod
    def harmonic_poly(cls, degree: int, coeffs: dict, amplitude=1.0) -> "IncomingField":
        return cls("harmonic_poly", coeffs=tuple(coeffs.items()), degree=degree, amplitude=amplitude)

    @classmethod
    def plane_wave(cls, omega: float, direction=(1.0, 0.0, 0.0), polarization=(0.0, 0.0, 1.0),
                   amplitude=1.0) -> "IncomingField":
        return cls("plane_wave", direction=direction, omega=omega, polarization=polarization,
                   amplitude=amplitude)

    def scaled(self, c: complex) -> "IncomingField":
        return replace(self, amplitude=self.amplitude * c)

    @property
    def d(self) -> np.ndarray:
        return np.asarray(self.direction)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.polarization)

    def validate(self, kind) -> None:
        """Reject data that is not a free-space solution for ``kind``."""
        kind = EquationKind(kind)
        if kind is EquationKind.ELECTROSTATIC:
            if self.kind == "plane_wave":
                raise ValueError("electrostatic problems need a harmonic incoming potential")
            if self.kind == "harmonic_poly":
                lap = _monomial_laplacian(dict(self.coeffs))
                scale = max(abs(v) for _, v in self.coeffs)
                if any(abs(v) > _PDE_TOL * scale for v in lap.values()):
                    raise ValueError("harmonic_poly coefficients are not harmonic")
            return
        if self.kind != "plane_wave":
            raise ValueError(f"{kind.value} problems need a plane-wave incoming field")
        if self.omega <= 0:
            raise ValueError("plane-wave frequency must be positive")
        if abs(self.d @ self.d - 1.0) > _PDE_TOL:
            raise ValueError("plane-wave direction must have unit length")
        if kind in (EquationKind.MAXWELL_REDUCED, EquationKind.MAXWELL_FULL):
            pn = np.linalg.norm(self.p)
            if pn == 0 or abs(self.d @ self.p) > _PDE_TOL * pn:
                raise ValueError("plane-wave polarization must be nonzero and orthogonal to d")

    def _phase(self, x, y, z):
        d = self.direction
        return np.exp(1j * self.omega * (d[0] * np.asarray(x) + d[1] * np.asarray(y) + d[2] * np.asarray(z)))

    @staticmethod
    def _shape(x, y, z):
        return np.broadcast(np.asarray(x), np.asarray(y), np.asarray(z)).shape

    def phi(self, x, y, z) -> np.ndarray:
        A = self.amplitude
        shp = self._shape(x, y, z)
        if self.kind == "uniform_gradient":
            d = self.direction
            return np.broadcast_to(A * (d[0] * np.asarray(x) + d[1] * np.asarray(y) + d[2] * np.asarray(z)),
                                   shp).astype(complex)
        if self.kind == "harmonic_poly":
            out = np.zeros(shp, dtype=complex)
            for (a, b, c), v in self.coeffs:
                out += v * np.asarray(x) ** a * np.asarray(y) ** b * np.asarray(z) ** c
            return A * out
        return np.broadcast_to(A * self._phase(x, y, z) / (1j * self.omega), shp).copy()

    def grad_phi(self, x, y, z) -> np.ndarray:
        A = self.amplitude
        shp = self._shape(x, y, z)
        out = np.zeros((3,) + shp, dtype=complex)
        if self.kind == "uniform_gradient":
            for i in range(3):
                out[i] = A * self.direction[i]
        elif self.kind == "harmonic_poly":
            X = [np.asarray(x), np.asarray(y), np.asarray(z)]
            for e, v in self.coeffs:
                for i in range(3):
                    if e[i] == 0:
                        continue
                    term = v * e[i]
                    for j in range(3):
                        term = term * X[j] ** (e[j] - (j == i))
                    out[i] += term
            out *= A
        else:
            ph = self._phase(x, y, z)
            for i in range(3):
                out[i] = A * self.direction[i] * ph
        return out

    def E(self, x, y, z) -> np.ndarray:
        if self.kind != "plane_wave":
            raise ValueError("E is only defined for plane waves")
        ph = self._phase(x, y, z)
        shp = self._shape(x, y, z)
        return np.stack([np.broadcast_to(self.amplitude * self.p[i] * ph, shp) for i in range(3)])

    def H(self, x, y, z) -> np.ndarray:
        if self.kind != "plane_wave":
            raise ValueError("H is only defined for plane waves")
        ph = self._phase(x, y, z)
        shp = self._shape(x, y, z)
        q = np.cross(self.d, self.p)
        return np.stack([np.broadcast_to(self.amplitude * q[i] * ph, shp) for i in range(3)])

    def canonical(self) -> str:
        parts = [f"kind={self.kind}", f"amplitude={complex(self.amplitude)!r}"]
        if self.kind == "harmonic_poly":
            parts.append(f"degree={self.degree}")
            parts.append("coeffs=" + ";".join(f"{a}{b}{c}:{v!r}" for (a, b, c), v in self.coeffs))
        else:
            parts.append("direction=" + ",".join(repr(v) for v in self.direction))
        if self.kind == "plane_wave":
            parts.append(f"omega={self.omega!r}")
            parts.append("polarization=" + ",".join(repr(complex(v)) for v in self.polarization))
        return " ".join(parts)


# ---------------------------------------------------------------------------
# problems and solutions


@dataclass(frozen=True)
class ScatteringProblem:
    kind: EquationKind
    grid: UniformGrid
    eps: TensorField
    omega: float
    incoming: IncomingField
    options: SolveOptions = field(default_factory=SolveOptions)
    mu: Optional[TensorField] = None
    L: float = DEFAULT_L
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", EquationKind(self.kind))
        if (self.omega == 0) != (self.kind is EquationKind.ELECTROSTATIC):
            raise ValueError("omega must be 0 exactly for the electrostatic problem and only then")
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")
        if self.eps.grid != self.grid:
            raise ValueError("eps lives on a different grid")
        self.eps.check_admissible()
        if self.kind is EquationKind.MAXWELL_FULL:
            if self.mu is None:
                object.__setattr__(self, "mu", identity_tensor(self.grid))
            if self.mu.grid != self.grid:
                raise ValueError("mu lives on a different grid")
            self.mu.check_admissible()
        elif self.mu is not None:
            raise ValueError("mu is only used by the full Maxwell system")
        self.incoming.validate(self.kind)
        if self.incoming.kind == "plane_wave" and self.incoming.omega != self.omega:
            raise ValueError("incoming plane-wave frequency differs from the problem frequency")

    def canonical(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.eps.values).tobytes())
        if self.mu is not None:
            h.update(np.ascontiguousarray(self.mu.values).tobytes())
        o = self.options
        return "\n".join([
            f"kind={self.kind.value}",
            f"n_side={self.grid.n_side}",
            f"pad_factor={self.grid.pad_factor}",
            f"omega={self.omega!r}",
            f"L={self.L!r}",
            f"eps={self.eps.name}",
            f"mu={'none' if self.mu is None else self.mu.name}",
            f"materials_sha256={h.hexdigest()}",
            f"incoming={self.incoming.canonical()}",
            f"solver={o.method} tol={o.tolerance!r} max_matvecs={o.max_matvecs} restart={o.restart}",
        ]) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @property
    def n_unknowns(self) -> int:
        return 3 * self.kind.n_fields * self.grid.size


@dataclass
class Solution:
    grid: UniformGrid
    kind: EquationKind
    omega: float
    J: np.ndarray
    M: Optional[np.ndarray]
    fields: dict
    trace: SolveTrace
    fingerprint: str
    canonical: str = ""
    window: Optional[tuple] = None

    @property
    def converged(self) -> bool:
        return self.trace.converged

    def available(self) -> list:
        names = ["J"] + (["M"] if self.M is not None else [])
        return names + sorted(self.fields)

    def get(self, name: str) -> np.ndarray:
        if name == "J":
            return self.J
        if name == "M" and self.M is not None:
            return self.M
        if name in self.fields:
            return self.fields[name]
        raise KeyError(f"field {name!r} not in solution; available: {', '.join(self.available())}")

    def summary(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "kind": self.kind.value,
            "n_side": self.grid.n_side,
            "N_tot": 3 * self.kind.n_fields * self.grid.size,
            "omega": self.omega,
            "size": self.omega / (2 * math.pi),
            "N_matvec": self.trace.matvecs,
            "converged": self.converged,
            "reason": self.trace.reason,
            "true_residual": self.trace.true_residual,
            "time": self.trace.wall_time,
        }

    def save(self, path) -> Path:
        d = Path(path)
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.txt").write_text(self.canonical, encoding="utf-8")
        write_field(d / "J.bin", self.J, self.grid)
        if self.M is not None:
            write_field(d / "M.bin", self.M, self.grid)
        for name, arr in self.fields.items():
            write_field(d / f"{name}.bin", arr, self.grid)
        self.trace.to_csv(d / "trace.csv")
        lines = [f"{k} = {_fmt(v)}" for k, v in self.summary().items()]
        (d / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        return d


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.15e}"
    return str(v)


def load_solution(path) -> Solution:
    d = Path(path)
    if not (d / "summary.txt").is_file() or not (d / "J.bin").is_file():
        raise FileNotFoundError(f"{d} is not a solution directory")
    meta = {}
    for line in (d / "summary.txt").read_text(encoding="utf-8").splitlines():
        k, _, v = line.partition(" = ")
        meta[k] = v
    J, grid = read_field(d / "J.bin")
    M = read_field(d / "M.bin")[0] if (d / "M.bin").is_file() else None
    fields = {p.stem: read_field(p)[0] for p in sorted(d.glob("*.bin")) if p.stem not in ("J", "M")}
    trace = SolveTrace(matvecs=int(meta["N_matvec"]), reason=meta["reason"],
                       true_residual=float(meta["true_residual"]), wall_time=float(meta["time"]))
    tr = d / "trace.csv"
    if tr.is_file():
        rows = tr.read_text(encoding="utf-8").splitlines()[1:]
        trace.residuals = [float(r.split(",")[1]) for r in rows]
    canon = (d / "config.txt").read_text(encoding="utf-8") if (d / "config.txt").is_file() else ""
    return Solution(grid, EquationKind(meta["kind"]), float(meta["omega"]), J, M, fields, trace,
                    meta["fingerprint"], canon)


def support_window(mask: np.ndarray) -> Optional[tuple]:
    """Bounding box of ``mask`` as slices, or ``None`` when empty."""
    if not mask.any():
        return None
    sl = []
    for ax in range(3):
        other = tuple(a for a in range(3) if a != ax)
        idx = np.nonzero(mask.any(axis=other))[0]
        sl.append(slice(int(idx[0]), int(idx[-1]) + 1))
    return tuple(sl)


def _multipliers(p: ScatteringProblem):
    mode = "inverse" if p.kind is EquationKind.HELMHOLTZ else "direct"
    He = cayley_multiplier(p.eps, mode)
    Hm = cayley_multiplier(p.mu, "direct", tag="H_mu") if p.mu is not None else None
    return He, Hm


def _window_points(grid: UniformGrid, win):
    ax = grid.axes()
    x, y, z = (a[s] for a, s in zip(ax, win))
    return x[:, None, None], y[None, :, None], z[None, None, :]


def solve_problem(p: ScatteringProblem, recover_fields: bool = True) -> Solution:
    """Assemble, solve and (optionally) recover scattered fields on the full grid."""
    t0 = time.perf_counter()
    grid = p.grid
    He, Hm = _multipliers(p)
    mask = p.eps.support_mask | (p.mu.support_mask if p.mu is not None else False)
    win = support_window(mask)
    trace = SolveTrace(reason="converged", true_residual=0.0)
    x = None
    if win is not None:
        plan = fftconv.window_plan(grid, win, p.omega, p.L)
        # contiguous window copies let the full-grid multipliers go before the solve
        Hw = np.ascontiguousarray(He.window(win))
        Hmw = np.ascontiguousarray(Hm.window(win)) if Hm is not None else None
        del He, Hm
        pts = _window_points(grid, win)
        rhs = rhs_build(p.kind, Hw, p.incoming, pts, Hmw)
        op = SystemOperator(p.kind, plan, Hw, Hmw)
        b = SystemOperator.stack(*rhs) if isinstance(rhs, tuple) else SystemOperator.stack(rhs)
        del rhs
        x, trace = solve(op, b, p.options)
    full = (3,) + grid.shape
    J = np.zeros(full, dtype=complex)
    M = np.zeros(full, dtype=complex) if p.kind is EquationKind.MAXWELL_FULL else None
    if x is not None:
        Jw, Mw = op.unstack(x)
        J[(slice(None),) + win] = Jw
        if M is not None:
            M[(slice(None),) + win] = Mw
    if not trace.converged:
        log.warning("solve did not converge (%s) after %d matvecs", trace.reason, trace.matvecs)
    fields = recover(grid, p.kind, p.omega, J, M, p.L) if recover_fields else {}
    trace.wall_time = time.perf_counter() - t0
    return Solution(grid, p.kind, p.omega, J, M, fields, trace, p.fingerprint(), p.canonical(), win)


def recover(grid: UniformGrid, kind, omega: float, J, M=None, L: float = DEFAULT_L) -> dict:
    """Scattered fields on the whole grid from the currents."""
    kind = EquationKind(kind)
    if not np.any(J) and (M is None or not np.any(M)):
        if kind in (EquationKind.ELECTROSTATIC, EquationKind.HELMHOLTZ):
            return {"phi_sc": np.zeros(grid.shape, dtype=complex)}
        z = np.zeros((3,) + grid.shape, dtype=complex)
        return {"E_sc": z, "H_sc": z.copy()}
    plan = fftconv.build_kernel_plan(grid, omega, L)
    if kind in (EquationKind.ELECTROSTATIC, EquationKind.HELMHOLTZ):
        return {"phi_sc": fftconv.div_potential(plan, J)}
    w2 = omega ** 2
    E = fftconv.grad_div_potential(plan, J, shift=w2)
    H = -1j * omega * fftconv.curl_potential(plan, J)
    if M is not None and np.any(M):
        E += 1j * omega * fftconv.curl_potential(plan, M)
        H += fftconv.grad_div_potential(plan, M, shift=w2)
    return {"E_sc": E, "H_sc": H}


# ---------------------------------------------------------------------------
# diagnostics


def _curl_spec(kb, F):
    return [1j * (kb[(i + 1) % 3] * F[(i + 2) % 3] - kb[(i + 2) % 3] * F[(i + 1) % 3]) for i in range(3)]


def pde_residual(s: Solution, p: ScatteringProblem) -> tuple:
    """Relative strong-form residual(s) over the contrast support.

    Scalar problems return ``(r,)`` for ``div(A grad phi) + w^2 phi`` with
    ``A = eps`` (electrostatic) or ``eps^-1`` (Helmholtz).  Maxwell returns the
    residuals of both curl equations, each divided by ``w``, normalised by the
    size of the source term ``(eps - I) E_in`` (plus ``(mu - I) H_in``).
    Derivatives of the potentials are spectral and fused with the kernel.
    """
    mask = p.eps.support_mask | (p.mu.support_mask if p.mu is not None else False)
    win = support_window(mask)
    if win is None:
        return (0.0,) * (1 if p.kind.n_fields == 1 and p.kind in
                         (EquationKind.ELECTROSTATIC, EquationKind.HELMHOLTZ) else 2)
    grid, w = p.grid, p.omega
    plan = fftconv.window_plan(grid, win, w, p.L)
    kb, mult = plan.kb, plan.multiplier
    k2 = kb[0] ** 2 + kb[1] ** 2 + kb[2] ** 2
    pts = _window_points(grid, win)
    m = mask[win]
    cut = (slice(None),) + win
    Jw = s.J[cut]

    if p.kind in (EquationKind.ELECTROSTATIC, EquationKind.HELMHOLTZ):
        A = p.eps.values if p.kind is EquationKind.ELECTROSTATIC else p.eps.inverse().values
        Am = A[(slice(None), slice(None)) + win] - np.eye(3).reshape(3, 3, 1, 1, 1)
        D = fftconv.div_spectrum(plan, Jw) * mult          # div V J = i D
        lap_phi = plan.inverse(1j * (w ** 2 - k2) * D)     # (lap + w^2) phi_sc
        g_sc = np.stack([plan.inverse(-kb[i] * D) for i in range(3)])
        g_in = p.incoming.grad_phi(*pts)
        q = np.einsum("ij...,j...->i...", Am, g_sc + g_in)
        res = lap_phi + fftconv.periodic_derivative(plan, q, "div")
        src = fftconv.periodic_derivative(plan, np.einsum("ij...,j...->i...", Am, g_in), "div")
        den = np.linalg.norm(src[m])
        return (float(np.linalg.norm(res[m]) / den) if den > 0 else 0.0,)

    eye = np.eye(3).reshape(3, 3, 1, 1, 1)
    Em = p.eps.values[(slice(None), slice(None)) + win] - eye
    E_in = p.incoming.E(*pts)
    H_in = p.incoming.H(*pts)
    FJ = [plan.forward(c) * mult for c in Jw]
    Mw = s.M[cut] if s.M is not None else np.zeros_like(Jw)
    FM = [plan.forward(c) * mult for c in Mw]
    kJ = sum(kb[i] * FJ[i] for i in range(3))
    kM = sum(kb[i] * FM[i] for i in range(3))
    cJ, cM = _curl_spec(kb, FJ), _curl_spec(kb, FM)
    # spectra of E_sc, H_sc, and of curl E_sc / w, curl H_sc / w (no division by w)
    E_hat = [-kb[i] * kJ + w ** 2 * FJ[i] + 1j * w * cM[i] for i in range(3)]
    H_hat = [-kb[i] * kM + w ** 2 * FM[i] - 1j * w * cJ[i] for i in range(3)]
    ccM = [k2 * FM[i] - kb[i] * kM for i in range(3)]
    ccJ = [k2 * FJ[i] - kb[i] * kJ for i in range(3)]
    curlE_w = [w * cJ[i] + 1j * ccM[i] for i in range(3)]
    curlH_w = [w * cM[i] - 1j * ccJ[i] for i in range(3)]
    E_sc = np.stack([plan.inverse(x) for x in E_hat])
    H_sc = np.stack([plan.inverse(x) for x in H_hat])
    cE = np.stack([plan.inverse(x) for x in curlE_w])
    cH = np.stack([plan.inverse(x) for x in curlH_w])
    E_tot = E_in + E_sc
    H_tot = H_in + H_sc
    r2 = cH + 1j * (E_sc + np.einsum("ij...,j...->i...", Em, E_tot))
    src_e = np.einsum("ij...,j...->i...", Em, E_in)
    if p.mu is not None:
        Mm = p.mu.values[(slice(None), slice(None)) + win] - eye
        r1 = cE - 1j * (H_sc + np.einsum("ij...,j...->i...", Mm, H_tot))
        src_h = np.einsum("ij...,j...->i...", Mm, H_in)
    else:
        r1 = cE - 1j * H_sc
        src_h = np.zeros_like(src_e)
    den = math.hypot(np.linalg.norm(src_e[:, m]), np.linalg.norm(src_h[:, m]))
    if den == 0:
        return (0.0, 0.0)
    return (float(np.linalg.norm(r1[:, m]) / den), float(np.linalg.norm(r2[:, m]) / den))


def _exterior_check(grid: UniformGrid, pts: np.ndarray, margin: float = 0.1) -> None:
    lo = np.asarray(grid.origin)
    hi = lo + 1.0
    gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
    dist = np.linalg.norm(gap, axis=1)
    if np.any(dist <= margin):
        raise ValueError("far-field targets must be more than 0.1 box sides outside the box")


def far_field_eval(s: Solution, targets: ProbeSet, chunk: int = 64):
    """Scattered fields at exterior targets by midpoint quadrature of the representation."""
    grid = s.grid
    pts = targets.points
    _exterior_check(grid, pts)
    scalar = s.kind in (EquationKind.ELECTROSTATIC, EquationKind.HELMHOLTZ)
    P = len(pts)
    nz = np.any(s.J != 0, axis=0)
    if s.M is not None:
        nz |= np.any(s.M != 0, axis=0)
    if not nz.any():
        return np.zeros(P, complex) if scalar else (np.zeros((3, P), complex), np.zeros((3, P), complex))
    idx = np.nonzero(nz)
    ax = grid.axes()
    Y = np.stack([ax[i][idx[i]] for i in range(3)], axis=1)
    Jn = s.J[(slice(None),) + idx].T
    Mn = s.M[(slice(None),) + idx].T if s.M is not None else None
    w = s.omega
    wq = grid.h ** 3
    phi = np.zeros(P, complex)
    E = np.zeros((3, P), complex)
    H = np.zeros((3, P), complex)
    for a in range(0, P, chunk):
        X = pts[a:a + chunk]
        R = X[:, None, :] - Y[None, :, :]
        r = np.linalg.norm(R, axis=2)
        rh = R / r[..., None]
        G = np.exp(1j * w * r) / (4 * np.pi * r)
        g1 = G * (1j * w - 1 / r)
        if scalar:
            phi[a:a + chunk] = wq * np.einsum("pn,pni,ni->p", g1, rh, Jn)
            continue
        g2 = G * ((1j * w - 1 / r) ** 2 + 1 / r ** 2)

        def gdd(C):
            rc = np.einsum("pni,ni->pn", rh, C)
            t = (g2 - g1 / r) * rc
            return wq * (np.einsum("pn,pni->pi", t, rh)
                         + np.einsum("pn,ni->pi", g1 / r + w ** 2 * G, C))

        def curl(C):
            return wq * np.einsum("pn,pni->pi", g1, np.cross(rh, C[None, :, :]))

        Eb = gdd(Jn)
        Hb = -1j * w * curl(Jn)
        if Mn is not None:
            Eb += 1j * w * curl(Mn)
            Hb += gdd(Mn)
        E[:, a:a + chunk] = Eb.T
        H[:, a:a + chunk] = Hb.T
    return phi if scalar else (E, H)


# ---------------------------------------------------------------------------
# convergence studies


@dataclass(frozen=True)
class ProblemTemplate:
    """Everything but the resolution; ``size`` is the number of wavelengths ``w / 2 pi``."""

    kind: EquationKind
    variant: str = "iso_222"
    size: float = 1.0
    direction: tuple = (1.0, 0.0, 0.0)
    polarization: tuple = (0.0, 0.0, 1.0)
    options: SolveOptions = field(default_factory=SolveOptions)
    mu_variant: Optional[str] = None
    L: float = DEFAULT_L
    pad_factor: int = 2

    @property
    def omega(self) -> float:
        return 0.0 if EquationKind(self.kind) is EquationKind.ELECTROSTATIC else 2 * math.pi * self.size

    def incoming(self) -> IncomingField:
        if EquationKind(self.kind) is EquationKind.ELECTROSTATIC:
            return IncomingField.uniform_gradient(self.direction)
        return IncomingField.plane_wave(self.omega, self.direction, self.polarization)

    def build(self, n_side: int) -> ScatteringProblem:
        grid = make_grid(n_side, self.pad_factor)
        kind = EquationKind(self.kind)
        eps = build_eps(self.variant, grid, omega=self.omega)
        mu = None
        if kind is EquationKind.MAXWELL_FULL:
            mu = build_eps(self.mu_variant or "identity", grid, omega=self.omega)
        return ScatteringProblem(kind, grid, eps, self.omega, self.incoming(), self.options, mu, self.L,
                                 label=self.variant)


@dataclass
class StudyRow:
    size: float
    n_tot: int
    n_side: int
    e2: float
    einf: float
    n_matvec: int
    time: float
    converged: bool

    HEADER = ("Size", "N_tot", "n_side", "E2", "Einf", "N_matvec", "Time")

    def cells(self) -> list:
        flag = "" if self.converged else "*"
        return [f"{self.size:.15e}", str(self.n_tot), str(self.n_side), f"{self.e2:.15e}",
                f"{self.einf:.15e}", f"{self.n_matvec}{flag}", f"{self.time:.15e}"]


def probe_currents(s: Solution, probes: ProbeSet) -> np.ndarray:
    parts = [sample_at_probes(ComplexVectorField(s.grid, s.J), probes)]
    if s.M is not None:
        parts.append(sample_at_probes(ComplexVectorField(s.grid, s.M), probes))
    return np.concatenate(parts)


def relative_errors(v: np.ndarray, ref: np.ndarray) -> tuple:
    d = v - ref
    n2, ninf = np.linalg.norm(ref), np.abs(ref).max()
    if n2 == 0:
        return (0.0, 0.0) if not np.any(d) else (math.inf, math.inf)
    return float(np.linalg.norm(d) / n2), float(np.abs(d).max() / ninf)


def convergence_study(template: ProblemTemplate, sizes: Sequence[int], reference: int,
                      probes: Optional[ProbeSet] = None, reference_solution: Optional[Solution] = None):
    """Self-convergence of the currents against a finer reference run.

    Errors are relative, over the probe lattice (default 11^3 on [0.25, 0.75]^3),
    of the trigonometric interpolants of the currents.  Inside that region
    ``E_sc = (eps - I)^-1 J - E_in``, so this is equivalent to comparing fields.
    Returns ``(rows, reference_solution)``.
    """
    sizes = [int(n) for n in sizes]
    if not sizes:
        raise ValueError("a convergence study needs at least one size")
    if any(n > reference for n in sizes):
        raise ValueError("the reference size must not be smaller than the study sizes")
    probes = probes or ProbeSet.lattice()
    ref = reference_solution or solve_problem(template.build(reference), recover_fields=False)
    ref_vals = probe_currents(ref, probes)
    rows = []
    for n in sizes:
        s = ref if n == reference else solve_problem(template.build(n), recover_fields=False)
        e2, einf = relative_errors(probe_currents(s, probes), ref_vals)
        rows.append(StudyRow(template.size, 3 * template_kind(template).n_fields * n ** 3, n, e2, einf,
                             s.trace.matvecs, s.trace.wall_time, s.converged and ref.converged))
        log.info("n=%d E2=%.3e Einf=%.3e matvecs=%d time=%.1fs", n, e2, einf,
                 s.trace.matvecs, s.trace.wall_time)
    return rows, ref


def template_kind(t: ProblemTemplate) -> EquationKind:
    return EquationKind(t.kind)


def format_table(rows: Sequence[StudyRow]) -> str:
    """Aligned text table with the study columns."""
    body = [list(StudyRow.HEADER)]
    for r in rows:
        body.append([f"{r.size:.3g}", str(r.n_tot), str(r.n_side), f"{r.e2:.1e}", f"{r.einf:.1e}",
                     f"{r.n_matvec}{'' if r.converged else '*'}", f"{r.time:.1f}"])
    widths = [max(len(row[i]) for row in body) for i in range(len(body[0]))]
    return "\n".join("  ".join(c.rjust(wd) for c, wd in zip(row, widths)) for row in body) + "\n"


def rows_to_csv(rows: Sequence[StudyRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(StudyRow.HEADER) + "\n")
        for r in rows:
            fh.write(",".join(r.cells()) + "\n")


def summary_json(s: Solution) -> str:
    return json.dumps(s.summary(), sort_keys=True)
