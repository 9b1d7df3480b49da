"""FFT convolution with radially truncated free-space Green's functions.

The Helmholtz kernel ``exp(i w r) / (4 pi r)`` is cut off at radius ``L``.  Its
Fourier transform is entire, so sampling it on a lattice fine enough to hold
the box plus the truncation radius, and discarding wavenumbers beyond the grid
Nyquist limit, gives a spectrally accurate discrete convolution.  The kernel
is precomputed once per (box shape, h, omega, L) on that oversampled lattice
and folded into a multiplier for a factor-two padded FFT at application time.

Derivatives of volume potentials are taken on the kernel, not the data: the
symbols ``i k_j g_hat`` and ``-k_i k_j g_hat`` are band-limited and sampled the
same way, giving kernels for ``d_j g`` and ``d_i d_j g``.  Their symbols are
bounded, so the discrete ``grad div V`` stays bounded on unresolved data too;
differentiating padded data spectrally instead produces spurious eigenvalues
that grow with ``n``.  Every kernel is even or odd along each axis, so only
one octant of each padded multiplier is stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft as sfft

from .grid import ComplexVectorField, ScalarField, UniformGrid

BOX_DIAMETER = math.sqrt(3.0)
DEFAULT_L = BOX_DIAMETER * (1.0 + 1e-9)

_workers: Optional[int] = None
_plan_cache: dict = {}


def set_workers(n: Optional[int]) -> None:
    """Cap the thread count used by the FFT backend (``None`` = library default)."""
    global _workers
    _workers = n


def clear_plan_cache() -> None:
    _plan_cache.clear()


# ---------------------------------------------------------------------------
# closed-form transform of the truncated kernel

def _sinc(t):
    t = np.asarray(t)
    out = np.ones(t.shape, dtype=np.result_type(t, float))
    small = np.abs(t) < 1e-3
    ts = t[~small]
    out[~small] = np.sin(ts) / ts
    t2 = t[small] ** 2
    out[small] = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
    return out


def _series_small(k, w, L):
    # (1/k) int_0^L e^{iwr} sin(kr) dr as a double power series in kL and wL
    out = np.zeros(k.shape, dtype=complex)
    kL2 = (k * L) ** 2
    for m in range(12):
        km = (-1) ** m * kL2 ** m / math.factorial(2 * m + 1)
        for n in range(24):
            out += km * (1j * w * L) ** n / math.factorial(n) / (2 * m + n + 2)
    return out * L * L


def truncated_green_hat(k, omega: complex = 0.0, L: float = DEFAULT_L) -> np.ndarray:
    """Fourier transform of ``exp(i omega r)/(4 pi r)`` restricted to ``r < L``.

    Depends on ``|k|`` only.  Removable singularities at ``k = 0`` and
    ``|k| = omega`` are evaluated through regularised forms.
    """
    k = np.abs(np.asarray(k, dtype=float))
    w = complex(omega)
    out = np.empty(k.shape, dtype=complex)
    if k.size == 0:
        return out

    small = (k * L <= 0.5) & (abs(w) * L <= 0.5)
    zero = ~small & (k == 0)
    near = ~small & ~zero & (np.abs(k - w) * L < 1.0)
    gen = ~(small | zero | near)

    if small.any():
        out[small] = _series_small(k[small], w, L)
    if zero.any():
        e = np.exp(1j * w * L)
        out[zero] = (e * (1 - 1j * w * L) - 1) / w ** 2
    if near.any():
        kk = k[near]

        def f(x):
            return 1j * L * np.exp(0.5j * x * L) * _sinc(0.5 * x * L)

        out[near] = -(f(w + kk) - f(w - kk)) / (2 * kk)
    if gen.any():
        kk = k[gen]
        kl = kk * L
        num = (2 * np.sin(0.5 * kl) ** 2 - np.expm1(1j * w * L) * np.cos(kl)
               + 1j * w * L * np.exp(1j * w * L) * _sinc(kl))
        out[gen] = num / (kk * kk - w * w)
    return out


# ---------------------------------------------------------------------------
# plan


def _even_fast(n: int) -> int:
    m = sfft.next_fast_len(n)
    while m % 2:
        m = sfft.next_fast_len(m + 1)
    return m


KERNELS = ("g", "d0", "d1", "d2", "dd00", "dd01", "dd02", "dd11", "dd12", "dd22")
_GROUPS = {"g": ("g",), "d": ("d0", "d1", "d2"),
           "dd": ("dd00", "dd01", "dd02", "dd11", "dd12", "dd22")}


def _parity(name: str) -> tuple:
    """1 marks an axis along which the kernel is odd."""
    par = [0, 0, 0]
    for c in name.lstrip("dg"):
        par[int(c)] ^= 1
    return tuple(par)


def dd_name(i: int, j: int) -> str:
    return f"dd{min(i, j)}{max(i, j)}"


def _half_transform(a: np.ndarray, axis: int, odd: bool, sign: int) -> np.ndarray:
    """Full-period DFT of an even/odd sequence stored on ``0..N/2`` along ``axis``.

    ``sign`` is the exponent sign; the output is stored on ``0..N/2`` as well.
    """
    if not odd:
        return sfft.dct(a, type=1, axis=axis, workers=_workers)
    n = a.shape[axis]
    inner = np.take(a, np.arange(1, n - 1), axis=axis)
    t = sfft.dst(inner, type=1, axis=axis, workers=_workers) * (1j * sign)
    pad = [(0, 0)] * a.ndim
    pad[axis] = (1, 1)
    return np.pad(t, pad)


@dataclass(eq=False)
class KernelPlan:
    """Precomputed kernels for convolving data on a box of ``shape`` nodes.

    Multipliers live on the padded lattice ``padded`` and are stored as octants
    ``[0..M/2]^3`` with the parity of their kernel.  ``k`` holds per-axis
    wavenumbers (Nyquist entry zeroed) for differentiating compactly supported
    data directly, which the diagnostics use.
    """

    shape: tuple[int, int, int]
    h: float
    omega: complex
    L: float
    padded: tuple[int, int, int]
    fine: tuple[int, int, int]
    k: tuple[np.ndarray, np.ndarray, np.ndarray]
    octants: dict = field(default_factory=dict, repr=False)

    @property
    def kb(self):
        """Wavenumbers reshaped for broadcasting against padded arrays."""
        kx, ky, kz = self.k
        return kx[:, None, None], ky[None, :, None], kz[None, None, :]

    def check(self, a: np.ndarray) -> None:
        if a.shape[-3:] != self.shape:
            raise ValueError(f"field shape {a.shape[-3:]} does not match plan shape {self.shape}")

    # pruned transforms: the zero padding is never transformed
    def forward(self, a: np.ndarray) -> np.ndarray:
        m1, m2, m3 = self.shape
        M1, M2, M3 = self.padded
        w = _workers
        b = np.zeros((m1, m2, M3), dtype=complex)
        b[:, :, :m3] = a
        b = sfft.fft(b, axis=2, overwrite_x=True, workers=w)
        c = np.zeros((m1, M2, M3), dtype=complex)
        c[:, :m2] = b
        del b
        c = sfft.fft(c, axis=1, overwrite_x=True, workers=w)
        d = np.zeros((M1, M2, M3), dtype=complex)
        d[:m1] = c
        del c
        return sfft.fft(d, axis=0, overwrite_x=True, workers=w)

    def forward_yz(self, a: np.ndarray) -> np.ndarray:
        """Padded transform along axes 2 and 1 only, shape ``(m1, M2, M3)``."""
        m1, m2, m3 = self.shape
        _, M2, M3 = self.padded
        b = np.zeros((m1, m2, M3), dtype=complex)
        b[:, :, :m3] = a
        b = sfft.fft(b, axis=2, overwrite_x=True, workers=_workers)
        c = np.zeros((m1, M2, M3), dtype=complex)
        c[:, :m2] = b
        del b
        return sfft.fft(c, axis=1, overwrite_x=True, workers=_workers)

    def inverse(self, s: np.ndarray) -> np.ndarray:
        m1, m2, m3 = self.shape
        w = _workers
        s = sfft.ifft(s, axis=0, overwrite_x=True, workers=w)[:m1]
        s = sfft.ifft(s, axis=1, overwrite_x=True, workers=w)[:, :m2]
        return sfft.ifft(s, axis=2, overwrite_x=True, workers=w)[:, :, :m3].copy()

    # kernels
    def octant(self, name: str) -> np.ndarray:
        if name not in self.octants:
            group = "g" if name == "g" else ("d" if len(name) == 2 else "dd")
            if name not in KERNELS:
                raise ValueError(f"unknown kernel {name!r}")
            self.octants.update(_build_octants(self, _GROUPS[group]))
        return self.octants[name]

    def shifted_octant(self, name: str, shift: complex) -> np.ndarray:
        """Octant of ``multiplier[name] + shift * multiplier['g']`` (even kernels only)."""
        key = (name, complex(shift))
        if key not in self.octants:
            if any(_parity(name)):
                raise ValueError("only even kernels can absorb a scalar shift")
            self.octants[key] = self.octant(name) + shift * self.octant("g")
        return self.octants[key]

    def kernel_samples(self, name: str) -> np.ndarray:
        """Real-space kernel (times ``h^3``) at offsets ``0..m-1`` per axis."""
        return _kernel_samples(self, (name,))[name]

    def full_multiplier(self, name: str = "g") -> np.ndarray:
        """The padded multiplier expanded to the whole lattice (diagnostics)."""
        o = self.octant(name)
        par = _parity(name)
        idx, sgn = [], []
        for M, odd in zip(self.padded, par):
            i = np.arange(M)
            idx.append(np.minimum(i, M - i))
            sgn.append(np.where((i > M // 2) & bool(odd), -1.0, 1.0))
        full = o[np.ix_(*idx)]
        return full * (sgn[0][:, None, None] * sgn[1][None, :, None] * sgn[2][None, None, :])

    @property
    def multiplier(self) -> np.ndarray:
        return self.full_multiplier("g")


def _kernel_samples(plan: KernelPlan, names) -> dict:
    N = plan.fine
    half = [n // 2 + 1 for n in N]
    ks = [2 * np.pi * np.arange(hf) / (n * plan.h) for hf, n in zip(half, N)]
    ghat = np.empty(half, dtype=complex)
    k2yz = ks[1][:, None] ** 2 + ks[2][None, :] ** 2
    for i in range(half[0]):
        ghat[i] = truncated_green_hat(np.sqrt(ks[0][i] ** 2 + k2yz), plan.omega, plan.L)
    kb = (ks[0][:, None, None], ks[1][None, :, None], ks[2][None, None, :])
    out = {}
    m = plan.shape
    for name in names:
        if name == "g":
            sym = ghat
        elif name.startswith("dd"):
            i, j = int(name[2]), int(name[3])
            sym = -(kb[i] * kb[j]) * ghat
        else:
            sym = 1j * kb[int(name[1])] * ghat
        par = _parity(name)
        K = sym
        for ax in range(3):
            K = _half_transform(K, ax, par[ax], +1)
        K = K[: m[0], : m[1], : m[2]] / (N[0] * N[1] * N[2])
        out[name] = K
    return out


def _build_octants(plan: KernelPlan, names) -> dict:
    real_ok = complex(plan.omega) == 0
    out = {}
    for name, K in _kernel_samples(plan, names).items():
        par = _parity(name)
        Kc = np.zeros(tuple(M // 2 + 1 for M in plan.padded), dtype=complex)
        Kc[: plan.shape[0], : plan.shape[1], : plan.shape[2]] = K
        for ax in range(3):
            Kc = _half_transform(Kc, ax, par[ax], -1)
        if real_ok and sum(par) % 2 == 0:
            Kc = np.ascontiguousarray(Kc.real)
        out[name] = Kc
    return out


def build_kernel_plan(grid_or_shape, omega: complex = 0.0, L: float = DEFAULT_L,
                      h: Optional[float] = None, cache: bool = True) -> KernelPlan:
    """Plan for a grid (whole box) or an explicit node-box ``shape`` with spacing ``h``.

    Kernels are built on first use.
    """
    if isinstance(grid_or_shape, UniformGrid):
        shape, h = grid_or_shape.shape, grid_or_shape.h
    else:
        shape = tuple(int(s) for s in grid_or_shape)
        if h is None:
            raise ValueError("spacing h is required with an explicit shape")
    if L < BOX_DIAMETER:
        raise ValueError(f"truncation radius L={L} is below the box diameter {BOX_DIAMETER:.6f}")
    omega = complex(omega)
    if omega.imag < 0:
        raise ValueError("omega must have a nonnegative imaginary part")
    key = (shape, float(h), omega, float(L))
    if cache and key in _plan_cache:
        _plan_cache[key] = _plan_cache.pop(key)
        return _plan_cache[key]

    # the oversampled lattice must hold the box plus the truncation radius
    fine = tuple(_even_fast(int(math.ceil(m + L / h)) + 2) for m in shape)
    padded = tuple(_even_fast(2 * m) for m in shape)
    k = []
    for M in padded:
        kk = 2 * np.pi * sfft.fftfreq(M, d=h)
        kk[M // 2] = 0.0
        k.append(kk)
    plan = KernelPlan(shape, float(h), omega, float(L), padded, fine, tuple(k))
    if cache:
        while len(_plan_cache) >= _CACHE_SIZE:
            _plan_cache.pop(next(iter(_plan_cache)))
        _plan_cache[key] = plan
    return plan


_CACHE_SIZE = 3


# ---------------------------------------------------------------------------
# application


def _blocks(M: int):
    # (destination, octant source, mirrored) per half of a padded axis
    h = M // 2
    return ((slice(0, h + 1), slice(0, h + 1), False),
            (slice(h + 1, M), slice(h - 1, 0, -1), True))


def _slabs(M: int, step: int):
    """Slabs of a padded axis that do not straddle the mirror point, with their octant source."""
    h = M // 2
    for lo, hi in ((0, h + 1), (h + 1, M)):
        for a in range(lo, hi, step):
            b = min(a + step, hi)
            if lo == 0:
                yield slice(a, b), (slice(0, b - a), slice(a, b), False)
            else:
                yield slice(a, b), (slice(0, b - a), slice(M - a, M - b, -1), True)


def _accumulate(plan: KernelPlan, out: Optional[np.ndarray], terms, zslab=None) -> np.ndarray:
    """``out (+)= sum_t sign_t * multiplier[name_t] * F_t`` from the stored octants.

    ``terms`` holds ``(octant, parity, F, sign)`` with ``sign`` in ``{+1, -1}``.
    With ``zslab = (dest, source, mirrored)`` the ``F_t`` hold only that range
    of axis-2 wavenumbers.
    """
    first = out is None
    B = [_blocks(M) for M in plan.padded]
    shape = plan.padded
    if zslab is not None:
        B[2] = (zslab,)
        shape = shape[:2] + (zslab[0].stop,)
    if first:
        out = np.empty(shape, dtype=complex)
    for dx, sx, mx in B[0]:
        for dy, sy, my in B[1]:
            for dz, sz, mz in B[2]:
                dst = out[dx, dy, dz]
                tmp = None
                for n, (o, par, F, sign) in enumerate(terms):
                    neg = bool((mx and par[0]) ^ (my and par[1]) ^ (mz and par[2])) ^ (sign < 0)
                    src = o[sx, sy, sz]
                    if n == 0 and first:
                        np.multiply(src, F[dx, dy, dz], out=dst)
                        if neg:
                            np.negative(dst, out=dst)
                        continue
                    if tmp is None:
                        tmp = np.empty(dst.shape, dtype=complex)
                    np.multiply(src, F[dx, dy, dz], out=tmp)
                    (np.subtract if neg else np.add)(dst, tmp, out=dst)
    return out


def _term(plan: KernelPlan, name: str, F: np.ndarray, sign: int = 1, shift: complex = 0.0):
    if shift != 0:
        return (plan.shifted_octant(name, shift), _parity(name), F, sign)
    return (plan.octant(name), _parity(name), F, sign)


def _data(f):
    if isinstance(f, ComplexVectorField):
        return f.components, f.grid
    if isinstance(f, ScalarField):
        return f.values, f.grid
    return np.asarray(f), None


def _wrap(a, grid):
    if grid is None:
        return a
    return ComplexVectorField(grid, a) if a.ndim == 4 else ScalarField(grid, a)


def convolve(plan: KernelPlan, f):
    """Volume potential ``V_omega f`` on the plan's box (scalar or vector ``f``)."""
    a, grid = _data(f)
    plan.check(a)

    def one(c):
        return plan.inverse(_accumulate(plan, None, [_term(plan, "g", plan.forward(c))]))

    out = one(a) if a.ndim == 3 else np.stack([one(c) for c in a])
    return _wrap(out, grid)


_SLAB = 1 << 19


def grad_div_potential(plan: KernelPlan, a: np.ndarray, shift: complex = 0.0) -> np.ndarray:
    """``(grad div + shift) V a`` for a vector array ``a`` (shape ``(3,) + plan.shape``).

    The last forward and first inverse transform (axis 0) run over slabs of
    the axis-2 wavenumbers, and each slab of the result overwrites the slab
    of the half-transformed input it came from, so only three arrays of size
    ``m1 * M2 * M3`` are alive instead of four fully padded ones.
    """
    m1, m2, m3 = plan.shape
    M1, M2, M3 = plan.padded
    w = _workers
    C = [plan.forward_yz(c) for c in a]
    for zs, zsrc in _slabs(M3, max(1, _SLAB // (M1 * M2))):
        F = []
        for c in C:
            d = np.zeros((M1, M2, zs.stop - zs.start), dtype=complex)
            d[:m1] = c[:, :, zs]
            F.append(sfft.fft(d, axis=0, overwrite_x=True, workers=w))
        for i in range(3):
            terms = [_term(plan, dd_name(i, j), F[j], shift=shift if i == j else 0.0) for j in range(3)]
            acc = _accumulate(plan, None, terms, zsrc)
            C[i][:, :, zs] = sfft.ifft(acc, axis=0, overwrite_x=True, workers=w)[:m1]
    out = np.empty(a.shape, dtype=complex)
    for i in range(3):
        c = sfft.ifft(C[i], axis=1, overwrite_x=True, workers=w)[:, :m2]
        C[i] = None
        out[i] = sfft.ifft(c, axis=2, overwrite_x=True, workers=w)[:, :, :m3]
    return out


def curl_potential(plan: KernelPlan, a: np.ndarray) -> np.ndarray:
    """``curl V a``."""
    F = [plan.forward(c) for c in a]
    out = np.empty(a.shape, dtype=complex)
    for i in range(3):
        j, l = (i + 1) % 3, (i + 2) % 3
        terms = [_term(plan, f"d{j}", F[l]), _term(plan, f"d{l}", F[j], -1)]
        out[i] = plan.inverse(_accumulate(plan, None, terms))
    return out


def div_potential(plan: KernelPlan, a: np.ndarray) -> np.ndarray:
    """``div V a`` (scalar)."""
    terms = [_term(plan, f"d{j}", plan.forward(a[j])) for j in range(3)]
    return plan.inverse(_accumulate(plan, None, terms))


def grad_potential(plan: KernelPlan, phi: np.ndarray) -> np.ndarray:
    """``grad V phi`` for a scalar array."""
    F = plan.forward(phi)
    return np.stack([plan.inverse(_accumulate(plan, None, [_term(plan, f"d{i}", F)]))
                     for i in range(3)])


SPECTRAL_OPS = ("grad_of_scalar", "div", "curl", "grad_div")


def spectral_derivative(plan: KernelPlan, f, op: str):
    """Derivative of the volume potential of ``f`` through the derivative kernels."""
    a, grid = _data(f)
    plan.check(a)
    if op == "grad_of_scalar":
        if a.ndim != 3:
            raise ValueError("grad_of_scalar needs a scalar field")
        out = grad_potential(plan, a)
    elif op in ("div", "curl", "grad_div"):
        if a.ndim != 4:
            raise ValueError(f"{op} needs a vector field")
        out = {"div": div_potential, "curl": curl_potential,
               "grad_div": grad_div_potential}[op](plan, a)
    else:
        raise ValueError(f"unsupported derivative {op!r}; choose from {SPECTRAL_OPS}")
    return _wrap(out, grid)


def div_spectrum(plan: KernelPlan, a: np.ndarray) -> np.ndarray:
    """``sum_j k_j F_j`` of compactly supported data; the divergence spectrum is ``i`` times this."""
    kb = plan.kb
    s = plan.forward(a[0])
    s *= kb[0]
    for j in (1, 2):
        t = plan.forward(a[j])
        t *= kb[j]
        s += t
        del t
    return s


def periodic_derivative(plan: KernelPlan, a: np.ndarray, op: str) -> np.ndarray:
    """Plain spectral derivative (no kernel) of compactly supported data on the plan box."""
    kb = plan.kb
    if op == "div":
        return plan.inverse(1j * div_spectrum(plan, a))
    if op == "grad_of_scalar":
        S = plan.forward(a)
        return np.stack([plan.inverse(1j * k * S) for k in kb])
    if op == "laplacian":
        k2 = kb[0] ** 2 + kb[1] ** 2 + kb[2] ** 2
        if a.ndim == 3:
            return plan.inverse(-k2 * plan.forward(a))
        return np.stack([plan.inverse(-k2 * plan.forward(c)) for c in a])
    raise ValueError(f"unsupported derivative {op!r}")


def window_plan(grid: UniformGrid, window: Sequence[slice], omega: complex = 0.0,
                L: float = DEFAULT_L) -> KernelPlan:
    shape = tuple(s.stop - s.start for s in window)
    return build_kernel_plan(shape, omega, L, h=grid.h)
