"""Material tensors and their Cayley multipliers ``(A + I)^-1 (A - I)``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import ComplexVectorField, ScalarField, UniformGrid

ADMISSIBILITY_FLOOR = 1e-8
EDGE_DECAY = 2.0 ** -48
VARIANTS = ("identity", "iso_222", "iso_444", "diag_234", "dense_rot", "oscillatory")


def bump(x, y, z):
    """Smooth bump: product of ``exp(-((t - 0.5) / 0.25)**8)`` over the three axes."""
    return (np.exp(-(((np.asarray(x) - 0.5) / 0.25) ** 8))
            * np.exp(-(((np.asarray(y) - 0.5) / 0.25) ** 8))
            * np.exp(-(((np.asarray(z) - 0.5) / 0.25) ** 8)))


def bump_W(grid: UniformGrid) -> ScalarField:
    x, y, z = grid.mesh()
    return ScalarField(grid, bump(x, y, z) * np.ones(grid.shape))


def rot_x(theta):
    """Rotation about the x axis, shape ``(3, 3) + theta.shape``."""
    c, s = np.cos(theta), np.sin(theta)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.array([[o, z, z], [z, c, -s], [z, s, c]])


def rot_z(phi):
    c, s = np.cos(phi), np.sin(phi)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.array([[c, -s, z], [s, c, z], [z, z, o]])


def _symmetrize_upper(t: np.ndarray) -> np.ndarray:
    for i in range(3):
        for j in range(i + 1, 3):
            t[j, i] = t[i, j]
    return t


@dataclass(frozen=True)
class TensorField:
    """Sampled 3x3 material tensor, ``values[i, j, ix, iy, iz]``."""

    grid: UniformGrid
    values: np.ndarray
    name: str = "custom"
    support_mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.values.shape != (3, 3) + self.grid.shape:
            raise ValueError(f"tensor values must have shape {(3, 3) + self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tensor field contains non-finite entries")
        eye = np.eye(3).reshape(3, 3, 1, 1, 1)
        mask = np.any(self.values != eye, axis=(0, 1))
        object.__setattr__(self, "support_mask", mask)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values) or not np.any(self.values.imag)

    def at_nodes(self, mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Stack of 3x3 matrices, shape ``(N, 3, 3)``, for the nodes in ``mask``."""
        m = self.support_mask if mask is None else mask
        return np.moveaxis(self.values[:, :, m], -1, 0)

    def inverse(self) -> "TensorField":
        inv = np.broadcast_to(np.eye(3, dtype=self.values.dtype).reshape(3, 3, 1, 1, 1),
                              self.values.shape).copy()
        m = self.support_mask
        if m.any():
            inv[:, :, m] = np.moveaxis(np.linalg.inv(self.at_nodes()), 0, -1)
            if self.is_symmetric():
                _symmetrize_upper(inv)
        return TensorField(self.grid, inv, name=f"inv({self.name})")

    def is_symmetric(self) -> bool:
        return all(np.array_equal(self.values[i, j], self.values[j, i])
                   for i in range(3) for j in range(i + 1, 3))

    def min_hermitian_eig(self) -> float:
        m = self.support_mask
        if not m.any():
            return 1.0
        A = self.at_nodes()
        herm = 0.5 * (A + np.conj(np.swapaxes(A, 1, 2)))
        return float(np.linalg.eigvalsh(herm).min())

    def check_admissible(self, floor: float = ADMISSIBILITY_FLOOR) -> None:
        if self.support_mask.size and (self.support_mask[0].any() or self.support_mask[-1].any()
                                       or self.support_mask[:, 0].any() or self.support_mask[:, -1].any()
                                       or self.support_mask[:, :, 0].any() or self.support_mask[:, :, -1].any()):
            raise ValueError(f"{self.name}: contrast reaches the outermost node layer")
        lam = self.min_hermitian_eig()
        if lam < floor:
            raise ValueError(f"{self.name}: smallest Hermitian-part eigenvalue {lam:.3e} < {floor:g}")
        if not self.is_real:
            A = self.at_nodes()
            skew = (A - np.conj(np.swapaxes(A, 1, 2))) / 2j
            if np.linalg.eigvalsh(skew).min() < -1e-12:
                raise ValueError(f"{self.name}: imaginary part is not positive semi-definite")


def build_eps(variant: str, grid: UniformGrid, omega: Optional[float] = None) -> TensorField:
    """Permittivity builders used in the numerical experiments.

    ``iso_222`` (1+W)I, ``iso_444`` (1+3W)I, ``diag_234`` diag(1+W, 1+2W, 1+3W),
    ``dense_rot`` the diagonal tensor rotated by Rz(pi x) Rx(pi y), and
    ``oscillatory`` (1 + W (1 + 0.1 sin(wx) sin(wy) sin(wz))) I.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown material variant {variant!r}; choose from {VARIANTS}")
    x, y, z = grid.mesh()
    h = grid.h
    if variant != "identity" and bump(h / 2, 0.5, 0.5) > EDGE_DECAY:
        raise ValueError(f"grid n_side={grid.n_side} too coarse: bump does not decay at the edge")
    W = bump(x, y, z)
    # contrast below half an ulp of 1 is not representable in 1 + W
    W = np.where(1.0 + W == 1.0, 0.0, W)
    eye = np.eye(3).reshape(3, 3, 1, 1, 1)
    vals = np.zeros((3, 3) + grid.shape)

    if variant == "identity":
        pass
    elif variant in ("iso_222", "iso_444"):
        a = 1.0 if variant == "iso_222" else 3.0
        for i in range(3):
            vals[i, i] = a * W
    elif variant == "diag_234":
        for i in range(3):
            vals[i, i] = (i + 1) * W
    elif variant == "dense_rot":
        phi = np.pi * x * np.ones(grid.shape)
        theta = np.pi * y * np.ones(grid.shape)
        R = np.einsum("ij...,jk...->ik...", rot_z(phi), rot_x(theta))
        D = np.stack([W, 2 * W, 3 * W])
        for i in range(3):
            for j in range(i, 3):
                vals[i, j] = np.sum(R[i] * D * R[j], axis=0)
        _symmetrize_upper(vals)
    elif variant == "oscillatory":
        if omega is None:
            raise ValueError("the oscillatory permittivity needs omega")
        s = W * (1.0 + 0.1 * np.sin(omega * x) * np.sin(omega * y) * np.sin(omega * z))
        for i in range(3):
            vals[i, i] = s
    vals = vals + eye
    t = TensorField(grid, vals, name=variant)
    t.check_admissible()
    return t


def identity_tensor(grid: UniformGrid) -> TensorField:
    return build_eps("identity", grid)


@dataclass(frozen=True)
class MultiplierField:
    grid: UniformGrid
    values: np.ndarray
    tag: str = "H_eps"

    def max_norm(self) -> float:
        """Largest node-wise spectral norm."""
        A = np.moveaxis(self.values.reshape(3, 3, -1), -1, 0)
        nz = np.any(A != 0, axis=(1, 2))
        if not nz.any():
            return 0.0
        return float(np.linalg.norm(A[nz], ord=2, axis=(1, 2)).max())

    def window(self, sl) -> np.ndarray:
        return self.values[(slice(None), slice(None)) + tuple(sl)]


def cayley_multiplier(T: TensorField, mode: str = "direct",
                      tag: Optional[str] = None) -> MultiplierField:
    """Node-wise ``(A + I)^-1 (A - I)`` with ``A = eps`` or ``A = eps^-1``."""
    if mode not in ("direct", "inverse"):
        raise ValueError(f"mode must be 'direct' or 'inverse', got {mode!r}")
    mask = T.support_mask
    A = T.at_nodes()
    dtype = np.result_type(T.values.dtype, float)
    H = np.zeros((3, 3) + T.grid.shape, dtype=dtype)
    if mask.any():
        I = np.eye(3)
        if mode == "inverse":
            A = np.linalg.inv(A)
        lhs = A + I
        try:
            sol = np.linalg.solve(lhs, A - I)
        except np.linalg.LinAlgError:
            bad = np.argmin(np.abs(np.linalg.det(lhs)))
            node = tuple(int(c[bad]) for c in np.nonzero(mask))
            raise ValueError(f"A + I is singular at node {node}") from None
        H[:, :, mask] = np.moveaxis(sol, 0, -1)
    if tag is None:
        tag = "H_eps" if mode == "direct" else "H_eps_inv"
    return MultiplierField(T.grid, H, tag)


def apply_multiplier(H, f):
    """Node-wise 3x3 matrix-vector product.  Accepts fields or raw arrays."""
    if isinstance(H, MultiplierField):
        if isinstance(f, ComplexVectorField):
            if f.grid != H.grid:
                raise ValueError("multiplier and field live on different grids")
            return ComplexVectorField(f.grid, apply_multiplier(H.values, f.components))
        Hv = H.values
    else:
        Hv = H
    f = np.asarray(f)
    if Hv.shape[2:] != f.shape[1:]:
        raise ValueError(f"shape mismatch {Hv.shape} vs {f.shape}")
    out = Hv[:, 0] * f[0]
    out += Hv[:, 1] * f[1]
    out += Hv[:, 2] * f[2]
    return out
