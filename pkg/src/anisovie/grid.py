"""Uniform cell-centered grids on the unit box, sampled fields and probe sets.

Storage layout: a scalar field on an ``n``-point grid is an array of shape
``(n, n, n)`` indexed ``[ix, iy, iz]``; node ``(ix, iy, iz)`` sits at
``origin + (i + 1/2) h`` along each axis.  Flattened in C order, ``x`` varies
slowest.  Vector fields carry a leading component axis, ``(3, n, n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.interpolate import RegularGridInterpolator


@dataclass(frozen=True)
class UniformGrid:
    n_side: int
    pad_factor: int = 2
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if int(self.n_side) != self.n_side or self.n_side < 2:
            raise ValueError(f"n_side must be an integer >= 2, got {self.n_side!r}")
        if int(self.pad_factor) != self.pad_factor or self.pad_factor < 2:
            raise ValueError(
                f"pad_factor must be an integer >= 2 (smaller padding aliases the "
                f"convolution), got {self.pad_factor!r}")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def h(self) -> float:
        return 1.0 / self.n_side

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_side,) * 3

    @property
    def size(self) -> int:
        return self.n_side ** 3

    @property
    def padded_size(self) -> int:
        return sfft.next_fast_len(self.pad_factor * self.n_side)

    def axis(self, a: int = 0) -> np.ndarray:
        """Node coordinates along axis ``a``."""
        return self.origin[a] + (np.arange(self.n_side) + 0.5) * self.h

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.axis(0), self.axis(1), self.axis(2)

    def mesh(self, sparse: bool = True):
        """Coordinate arrays; broadcastable (sparse) or full ``(n, n, n)``."""
        return np.meshgrid(*self.axes(), indexing="ij", sparse=sparse)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        lo = np.asarray(self.origin)
        return np.all((p >= lo) & (p <= lo + 1.0), axis=1)


def make_grid(n_side: int, pad_factor: int = 2) -> UniformGrid:
    return UniformGrid(n_side=n_side, pad_factor=pad_factor)


@dataclass(frozen=True)
class ScalarField:
    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite entries")


@dataclass(frozen=True)
class ComplexVectorField:
    grid: UniformGrid
    components: np.ndarray

    def __post_init__(self):
        if self.components.shape != (3,) + self.grid.shape:
            raise ValueError(
                f"components shape {self.components.shape} != {(3,) + self.grid.shape}")
        if not np.all(np.isfinite(self.components)):
            raise ValueError("vector field contains non-finite entries")

    @classmethod
    def zeros(cls, grid: UniformGrid) -> "ComplexVectorField":
        return cls(grid, np.zeros((3,) + grid.shape, dtype=complex))

    def __getitem__(self, c: int) -> np.ndarray:
        return self.components[c]


def l2_norm(f, grid: Optional[UniformGrid] = None) -> float:
    """Discrete L2 norm ``sqrt(h^3 sum |f|^2)`` of a field or bare array."""
    if isinstance(f, (ComplexVectorField, ScalarField)):
        grid = f.grid
        data = f.components if isinstance(f, ComplexVectorField) else f.values
    else:
        if grid is None:
            raise ValueError("a grid is needed to normalise a bare array")
        data = np.asarray(f)
    return float(np.sqrt(grid.h ** 3 * np.vdot(data, data).real))


@dataclass(frozen=True)
class ProbeSet:
    """Evaluation points.  ``axes`` is set when the points form a tensor lattice."""

    points: np.ndarray
    axes: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        if p.ndim != 2 or p.shape[1] != 3 or len(p) == 0:
            raise ValueError("a probe set needs a nonempty (P, 3) array of points")
        if len(np.unique(p, axis=0)) != len(p):
            raise ValueError("probe points must be pairwise distinct")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def lattice(cls, count: int = 11, lo: float = 0.25, hi: float = 0.75) -> "ProbeSet":
        t = np.linspace(lo, hi, count)
        X, Y, Z = np.meshgrid(t, t, t, indexing="ij")
        return cls(np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1), axes=(t, t, t))

    @classmethod
    def ray(cls, center: Sequence[float], direction: Sequence[float],
            radii: Sequence[float]) -> "ProbeSet":
        d = np.asarray(direction, float)
        d = d / np.linalg.norm(d)
        return cls(np.asarray(center, float) + np.outer(radii, d))


def _trig_matrix(t: np.ndarray, n: int, h: float, origin: float) -> np.ndarray:
    # Evaluation rows of the band-limited interpolant for cell-centered samples;
    # the Nyquist mode (even n) is split as a cosine so real data stays real.
    freqs = sfft.fftfreq(n, d=1.0 / n)
    phase = 2j * np.pi * np.outer(t - origin - 0.5 * h, freqs)
    A = np.exp(phase)
    if n % 2 == 0:
        A[:, n // 2] = np.cos(phase[:, n // 2].imag)
    return A / n


def _spectral_sample(values: np.ndarray, grid: UniformGrid, probes: ProbeSet) -> np.ndarray:
    n, h = grid.n_side, grid.h
    spec = sfft.fftn(values)
    if probes.axes is not None:
        Ax, Ay, Az = (_trig_matrix(t, n, h, o) for t, o in zip(probes.axes, grid.origin))
        out = np.einsum("ia,jb,kc,abc->ijk", Ax, Ay, Az, spec, optimize=True)
        return out.ravel()
    p = probes.points
    Ax = _trig_matrix(p[:, 0], n, h, grid.origin[0])
    Ay = _trig_matrix(p[:, 1], n, h, grid.origin[1])
    Az = _trig_matrix(p[:, 2], n, h, grid.origin[2])
    out = np.empty(len(p), dtype=complex)
    chunk = max(1, int(2e7 // (n * n)))
    for s in range(0, len(p), chunk):
        sl = slice(s, s + chunk)
        t = np.einsum("abc,pc->pab", spec, Az[sl], optimize=True)
        t = np.einsum("pab,pb->pa", t, Ay[sl])
        out[sl] = np.einsum("pa,pa->p", t, Ax[sl])
    return out


def sample_at_probes(f, probes: ProbeSet, method: str = "spectral") -> np.ndarray:
    """Interpolate a scalar field at probe points inside the box.

    ``method='spectral'`` evaluates the trigonometric interpolant (exact for
    grid-resolved band-limited periodic data); ``'tricubic'`` is a local fallback.
    A vector field returns shape ``(3, P)``.
    """
    if isinstance(f, ComplexVectorField):
        return np.stack([sample_at_probes(ScalarField(f.grid, c), probes, method)
                         for c in f.components])
    grid = f.grid
    if not np.all(grid.contains(probes.points)):
        raise ValueError("probe outside the computational box; use far_field_eval instead")
    if method == "spectral":
        return _spectral_sample(np.asarray(f.values, dtype=complex), grid, probes)
    if method == "tricubic":
        # clamp to the node hull; cubic needs at least 4 nodes per axis
        ax = grid.axes()
        p = np.clip(probes.points, [a[0] for a in ax], [a[-1] for a in ax])
        v = np.asarray(f.values, dtype=complex)
        re = RegularGridInterpolator(ax, v.real, method="cubic")(p)
        im = RegularGridInterpolator(ax, v.imag, method="cubic")(p)
        return re + 1j * im
    raise ValueError(f"unknown interpolation method {method!r}")
