"""Matrix-free left-hand sides of the second-kind volume integral equations.

All functions act on raw arrays of shape ``(3,) + plan.shape`` together with
multiplier arrays of shape ``(3, 3) + plan.shape``; ``MultiplierField`` and
``ComplexVectorField`` arguments are unwrapped.  ``build_system`` restricts
everything to the bounding box of the material contrast, which is where the
unknown currents live.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator

from . import fftconv
from .fftconv import KernelPlan
from .grid import ComplexVectorField
from .media import MultiplierField, apply_multiplier


class EquationKind(str, enum.Enum):
    ELECTROSTATIC = "electrostatic"
    HELMHOLTZ = "helmholtz"
    MAXWELL_REDUCED = "maxwell_reduced"
    MAXWELL_FULL = "maxwell_full"

    @property
    def n_fields(self) -> int:
        return 2 if self is EquationKind.MAXWELL_FULL else 1


def _arr(x):
    if isinstance(x, MultiplierField):
        return x.values
    if isinstance(x, ComplexVectorField):
        return x.components
    return x


def op_T(plan: KernelPlan, f):
    """``f/2 + grad div V_omega f``."""
    a = _arr(f)
    plan.check(a)
    out = 0.5 * a + fftconv.grad_div_potential(plan, a)
    return ComplexVectorField(f.grid, out) if isinstance(f, ComplexVectorField) else out


def lhs_electrostatic(H, plan0: KernelPlan, J):
    """``J - 2 H T_0 J``."""
    if plan0.omega != 0:
        raise ValueError("the electrostatic operator needs an omega = 0 plan")
    H, a = _arr(H), _arr(J)
    return a - 2.0 * apply_multiplier(H, op_T(plan0, a))


def lhs_helmholtz(H_inv, plan: KernelPlan, J, plan0: Optional[KernelPlan] = None,
                  two_pass: bool = False):
    """``J - 2 H_{eps^-1} T_omega J``.

    With ``two_pass`` the static part and the ``T_omega - T_0`` remainder are
    applied separately (needs ``plan0``); the result is algebraically the same.
    """
    H, a = _arr(H_inv), _arr(J)
    if not two_pass:
        return a - 2.0 * apply_multiplier(H, op_T(plan, a))
    if plan0 is None or plan0.omega != 0:
        raise ValueError("two-pass application needs an omega = 0 plan")
    t0 = op_T(plan0, a)
    dt = op_T(plan, a) - t0
    return a - 2.0 * apply_multiplier(H, t0) - 2.0 * apply_multiplier(H, dt)


def _maxwell_self(plan: KernelPlan, a):
    # (2 T_omega + 2 omega^2 V_omega) a
    w2 = plan.omega ** 2
    return a + 2.0 * fftconv.grad_div_potential(plan, a, shift=w2)


def lhs_maxwell(H_eps, plan: KernelPlan, J, H_mu=None, M=None):
    """Reduced (``M is None``) or full JM system applied to the rescaled currents."""
    He, a = _arr(H_eps), _arr(J)
    if M is None:
        if H_mu is not None:
            raise ValueError("full Maxwell mode needs both M and H_mu")
        return a - apply_multiplier(He, _maxwell_self(plan, a))
    if H_mu is None:
        raise ValueError("full Maxwell mode needs both M and H_mu")
    Hm, b = _arr(H_mu), _arr(M)
    w = plan.omega
    out_j = a - apply_multiplier(He, _maxwell_self(plan, a))
    out_m = b - apply_multiplier(Hm, _maxwell_self(plan, b))
    if w != 0:
        out_j -= 2j * w * apply_multiplier(He, fftconv.curl_potential(plan, b))
        out_m += 2j * w * apply_multiplier(Hm, fftconv.curl_potential(plan, a))
    return out_j, out_m


def rhs_build(kind: EquationKind, H_eps, incoming, points, H_mu=None):
    """Right-hand side(s) at node coordinates ``points = (x, y, z)``.

    ``2 H grad phi_in`` for the scalar problems, ``2 H_eps E_in`` (and
    ``2 H_mu H_in``) for Maxwell.  ``H_eps`` is the multiplier the equation
    uses (``H_{eps^-1}`` for Helmholtz).
    """
    kind = EquationKind(kind)
    incoming.validate(kind)
    He = _arr(H_eps)
    if kind in (EquationKind.ELECTROSTATIC, EquationKind.HELMHOLTZ):
        return 2.0 * apply_multiplier(He, incoming.grad_phi(*points))
    r_j = 2.0 * apply_multiplier(He, incoming.E(*points))
    if kind is EquationKind.MAXWELL_REDUCED:
        return r_j
    if H_mu is None:
        raise ValueError("full Maxwell right-hand side needs H_mu")
    return r_j, 2.0 * apply_multiplier(_arr(H_mu), incoming.H(*points))


@dataclass(eq=False)
class SystemOperator:
    """Linear operator on stacked, flattened currents (``J`` or ``(J, M)``)."""

    kind: EquationKind
    plan: KernelPlan
    H: np.ndarray
    H_mu: Optional[np.ndarray] = None
    matvecs: int = field(default=0, init=False)

    @property
    def omega(self) -> complex:
        return self.plan.omega

    @property
    def field_shape(self):
        return (3,) + self.plan.shape

    @property
    def n(self) -> int:
        return self.kind.n_fields * 3 * int(np.prod(self.plan.shape))

    @property
    def shape(self):
        return (self.n, self.n)

    dtype = np.dtype(complex)

    def apply_fields(self, J, M=None):
        if self.kind is EquationKind.ELECTROSTATIC:
            return lhs_electrostatic(self.H, self.plan, J)
        if self.kind is EquationKind.HELMHOLTZ:
            return lhs_helmholtz(self.H, self.plan, J)
        if self.kind is EquationKind.MAXWELL_REDUCED:
            return lhs_maxwell(self.H, self.plan, J)
        return lhs_maxwell(self.H, self.plan, J, self.H_mu, M)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        self.matvecs += 1
        x = np.asarray(x, dtype=complex)
        if self.kind is EquationKind.MAXWELL_FULL:
            J, M = x.reshape((2,) + self.field_shape)
            oj, om = self.apply_fields(J, M)
            return np.concatenate([oj.ravel(), om.ravel()])
        return self.apply_fields(x.reshape(self.field_shape)).ravel()

    def unstack(self, x: np.ndarray):
        if self.kind is EquationKind.MAXWELL_FULL:
            J, M = x.reshape((2,) + self.field_shape)
            return J, M
        return x.reshape(self.field_shape), None

    @staticmethod
    def stack(J, M=None) -> np.ndarray:
        if M is None:
            return np.asarray(J, dtype=complex).ravel()
        return np.concatenate([np.asarray(J, complex).ravel(), np.asarray(M, complex).ravel()])

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self, dtype=complex)


def static_contraction(H, plan0: KernelPlan):
    """The operator ``B = -2 H T_0`` and its adjoint, on raw arrays."""
    Ha = _arr(H)
    Hh = np.conj(np.swapaxes(Ha, 0, 1))

    def B(a):
        return -2.0 * apply_multiplier(Ha, op_T(plan0, a))

    def B_adj(a):
        # T_0 is self-adjoint: real even kernel, symmetric derivative symbols
        return -2.0 * op_T(plan0, apply_multiplier(Hh, a))

    return B, B_adj


def power_norm_estimate(B: Callable, B_adj: Callable, shape, steps: int = 20,
                        seed: int = 0) -> float:
    """Lower estimate of ``||B||_2`` from power iteration on ``B* B``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(steps):
        y = B_adj(B(x))
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        est = np.sqrt(nrm)
        x = y / nrm
    return float(est)
