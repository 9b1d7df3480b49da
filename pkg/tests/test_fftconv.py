import itertools
import warnings

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import IntegrationWarning, quad
from scipy.special import erf

from anisovie import fftconv
from anisovie.fftconv import (DEFAULT_L, KERNELS, build_kernel_plan, truncated_green_hat,
                              window_plan)
from anisovie.grid import ComplexVectorField, ScalarField, make_grid
from anisovie.operators import op_T

from conftest import gaussian


def radial_oracle(k, w, L=DEFAULT_L):
    """(1/k) int_0^L e^{iwr} sin(kr) dr by adaptive quadrature (QAWO for k > 0)."""
    kw = dict(epsabs=1e-300, epsrel=1e-14, limit=400)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        if k == 0:
            re = quad(lambda r: r * np.cos(w * r), 0, L, **kw)[0]
            im = quad(lambda r: r * np.sin(w * r), 0, L, **kw)[0]
            return re + 1j * im
        re = quad(lambda r: np.cos(w * r), 0, L, weight="sin", wvar=k, **kw)[0]
        im = quad(lambda r: np.sin(w * r), 0, L, weight="sin", wvar=k, **kw)[0]
        return (re + 1j * im) / k


def integrand_scale(k, L=DEFAULT_L):
    """int_0^L |sin(kr)/k| dr: the size of the cancelling integrand.

    Errors are measured against this, since the symbol has zeros (for instance
    at kL = 2 pi n when omega = 0) where pointwise relative error is meaningless.
    """
    x, wt = np.polynomial.legendre.leggauss(20)
    e = np.linspace(0, L, int(np.ceil(k * L / np.pi)) + 5)
    a, b = e[:-1, None], e[1:, None]
    r = 0.5 * (b - a) * x + 0.5 * (a + b)
    return np.sum(0.5 * (b - a) * wt * r * np.abs(np.sinc(k * r / np.pi)))


def closed_form_mp(k, w, L=DEFAULT_L):
    mp.mp.dps = 30
    L, kk, ww = mp.mpf(L), mp.mpf(float(k)), mp.mpf(float(w))
    if k == 0:
        return complex(L ** 2 / 2 if w == 0 else (mp.exp(1j * ww * L) * (1 - 1j * ww * L) - 1) / ww ** 2)

    def f(a):
        return (mp.exp(1j * a * L) - 1) / (1j * a) if a != 0 else L
    return complex((f(ww + kk) - f(ww - kk)) / (2j * kk))


@pytest.mark.parametrize("w", [0.0, 2 * np.pi, 10 * np.pi])
def test_symbol_matches_radial_quadrature(w):
    rng = np.random.default_rng(7)
    ks = rng.uniform(0, 400, 1000)
    ks[:4] = [0.0, 1e-7, w, w + 1e-6]
    got = truncated_green_hat(ks, w)
    scale = np.array([integrand_scale(k) for k in ks])
    ref = np.array([radial_oracle(k, w) for k in ks])
    assert np.max(np.abs(got - ref) / scale) < 1e-12
    exact = np.array([closed_form_mp(k, w) for k in ks])
    assert np.max(np.abs(got - exact) / scale) < 1e-13
    # pointwise away from the symbol's zeros
    away = np.abs(exact) > 1e-3 * scale
    assert np.max(np.abs(got - exact)[away] / np.abs(exact[away])) < 1e-12


def test_symbol_closed_forms():
    L = DEFAULT_L
    assert truncated_green_hat(0.0, 0.0) == pytest.approx(L ** 2 / 2, rel=1e-15)
    # static symbol: (1 - cos kL) / k^2
    k = np.array([0.3, 5.0, 123.4])
    np.testing.assert_allclose(truncated_green_hat(k, 0.0), (1 - np.cos(k * L)) / k ** 2, rtol=1e-13)
    # continuous across the regime switches
    for w in (0.1, 3.0, 40.0):
        for k0 in (w, 0.5 / L, 1.0 / L + w):
            a, b = truncated_green_hat(np.array([k0 * (1 - 1e-9), k0 * (1 + 1e-9)]), w)
            assert abs(a - b) < 1e-7 * abs(a)


def _full_symbol(plan, name):
    # brute-force kernel samples: inverse DFT over the whole fine lattice; odd
    # factors k_i drop their (non-antisymmetric) Nyquist entry
    k = [2 * np.pi * np.fft.fftfreq(n, d=plan.h) for n in plan.fine]
    ko = []
    for kk in k:
        kk = kk.copy()
        kk[len(kk) // 2] = 0.0
        ko.append(kk)
    K = np.meshgrid(*k, indexing="ij")
    Ko = np.meshgrid(*ko, indexing="ij")
    gh = truncated_green_hat(np.sqrt(K[0] ** 2 + K[1] ** 2 + K[2] ** 2), plan.omega, plan.L)
    if name == "g":
        sym = gh
    elif name.startswith("dd"):
        i, j = int(name[2]), int(name[3])
        sym = -(K[i] * K[j] if i == j else Ko[i] * Ko[j]) * gh
    else:
        sym = 1j * Ko[int(name[1])] * gh
    m = plan.shape
    return np.fft.ifftn(sym)[: m[0], : m[1], : m[2]]


@pytest.mark.parametrize("w", [0.0, 7.0])
def test_kernel_samples_match_brute_force_dft(w):
    plan = build_kernel_plan((4, 5, 3), w, h=0.25, cache=False)
    for name in KERNELS:
        ref = _full_symbol(plan, name)
        assert np.abs(plan.kernel_samples(name) - ref).max() < 1e-14 * np.abs(ref).max()


@pytest.mark.parametrize("name", ["g", "d1", "dd02", "dd22"])
def test_octant_application_matches_direct_sum(name, rng):
    m = (5, 4, 6)
    plan = build_kernel_plan(m, 3.0, h=0.2, cache=False)
    f = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    Ks = plan.kernel_samples(name)
    par = fftconv._parity(name)
    ref = np.zeros(m, dtype=complex)
    for i in itertools.product(*map(range, m)):
        acc = 0j
        for j in itertools.product(*map(range, m)):
            d = np.subtract(i, j)
            s = -1 if sum(par[a] for a in range(3) if d[a] < 0) % 2 else 1
            acc += s * Ks[abs(d[0]), abs(d[1]), abs(d[2])] * f[j]
        ref[i] = acc
    got = plan.inverse(fftconv._accumulate(plan, None, [fftconv._term(plan, name, plan.forward(f))]))
    assert np.abs(got - ref).max() < 1e-14 * np.abs(ref).max()


def test_laplace_potential_of_gaussian_matches_erf():
    g = make_grid(48)
    a = 0.06
    psi, _ = gaussian(g, a)
    x, y, z = g.mesh()
    r = np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2 + (z - 0.5) ** 2) * np.ones(g.shape)
    exact = np.pi ** 1.5 * a ** 3 / (4 * np.pi * r) * erf(r / a)
    V = fftconv.convolve(build_kernel_plan(g, 0.0), ScalarField(g, psi + 0j)).values
    assert np.abs(V.imag).max() < 1e-15
    assert np.abs(V.real - exact).max() < 1e-9 * exact.max()


def test_static_projection_identities():
    # 2 T_0 is -1 on gradients and +1 on curls (frozen at n=40, a=0.07)
    g = make_grid(40)
    _, gp = gaussian(g, 0.07)
    gp = gp + 0j
    cp = np.stack([gp[1], -gp[0], np.zeros_like(gp[0])])
    plan = build_kernel_plan(g, 0.0)
    assert np.linalg.norm(2 * op_T(plan, gp) + gp) < 1e-8 * np.linalg.norm(gp)
    assert np.linalg.norm(2 * op_T(plan, cp) - cp) < 1e-8 * np.linalg.norm(cp)
    assert np.linalg.norm(fftconv.curl_potential(plan, gp)) < 1e-10 * np.linalg.norm(gp)


def test_forward_inverse_round_trip(rng):
    plan = build_kernel_plan((6, 7, 5), 0.0, h=0.1, cache=False)
    a = rng.standard_normal(plan.shape) + 1j * rng.standard_normal(plan.shape)
    np.testing.assert_allclose(plan.inverse(plan.forward(a)), a, atol=1e-14)
    assert plan.padded == (12, 14, 10)


def test_plan_cache_is_lru():
    fftconv.clear_plan_cache()
    p1 = build_kernel_plan((4, 4, 4), 0.0, h=0.1)
    assert build_kernel_plan((4, 4, 4), 0.0, h=0.1) is p1
    for m in (5, 6, 7):
        build_kernel_plan((m, m, m), 0.0, h=0.1)
    assert build_kernel_plan((4, 4, 4), 0.0, h=0.1) is not p1


def test_plan_validation():
    with pytest.raises(ValueError, match="truncation"):
        build_kernel_plan(make_grid(8), 0.0, L=1.0)
    with pytest.raises(ValueError, match="spacing"):
        build_kernel_plan((4, 4, 4))
    with pytest.raises(ValueError, match="imaginary"):
        build_kernel_plan(make_grid(8), 1 - 1j)
    plan = build_kernel_plan(make_grid(8), 1.0)
    with pytest.raises(ValueError, match="shape"):
        fftconv.convolve(plan, np.zeros((7, 8, 8)))
    with pytest.raises(ValueError, match="even kernels"):
        plan.shifted_octant("d0", 1.0)
    with pytest.raises(ValueError, match="unsupported"):
        fftconv.spectral_derivative(plan, np.zeros((3, 8, 8, 8)), "laplace")


def test_static_octants_are_real():
    plan = build_kernel_plan((6, 6, 6), 0.0, h=0.1, cache=False)
    assert plan.octant("g").dtype == float and plan.octant("dd01").dtype == float
    assert plan.octant("d0").dtype == complex


def test_spectral_derivative_wrappers(grid24, rng):
    plan = build_kernel_plan(grid24, 2.0)
    a = rng.standard_normal((3,) + grid24.shape) + 0j
    out = fftconv.spectral_derivative(plan, ComplexVectorField(grid24, a), "div")
    assert isinstance(out, ScalarField)
    np.testing.assert_allclose(out.values, fftconv.div_potential(plan, a))
    c = fftconv.spectral_derivative(plan, ComplexVectorField(grid24, a), "curl")
    np.testing.assert_allclose(c.components, fftconv.curl_potential(plan, a))
    s = fftconv.spectral_derivative(plan, ScalarField(grid24, a[0]), "grad_of_scalar")
    np.testing.assert_allclose(s.components, fftconv.grad_potential(plan, a[0]))
    with pytest.raises(ValueError, match="scalar"):
        fftconv.spectral_derivative(plan, a, "grad_of_scalar")


def test_window_plan_shape():
    g = make_grid(20)
    plan = window_plan(g, (slice(2, 9), slice(0, 20), slice(5, 6)), 1.0)
    assert plan.shape == (7, 20, 1) and plan.h == g.h


@given(seed=st.integers(0, 2 ** 16), w=st.sampled_from([0.0, 1.0, 9.5]))
def test_T_is_complex_symmetric(seed, w):
    # the kernels are even/odd real-space functions, so <T a, b> = <a, T b> (bilinear)
    plan = build_kernel_plan((6, 5, 4), w, h=1 / 12)
    r = np.random.default_rng(seed)
    a = r.standard_normal((3,) + plan.shape) + 1j * r.standard_normal((3,) + plan.shape)
    b = r.standard_normal((3,) + plan.shape) + 1j * r.standard_normal((3,) + plan.shape)
    lhs = np.sum(op_T(plan, a) * b)
    rhs = np.sum(a * op_T(plan, b))
    assert abs(lhs - rhs) < 1e-12 * np.linalg.norm(a) * np.linalg.norm(b)


@given(seed=st.integers(0, 2 ** 16))
def test_convolution_is_translation_covariant(seed):
    plan = build_kernel_plan((10, 10, 10), 3.0, h=0.1)
    r = np.random.default_rng(seed)
    f = np.zeros(plan.shape, dtype=complex)
    f[1:5, 2:6, 0:4] = r.standard_normal((4, 4, 4))
    shifted = np.roll(f, (3, 1, 4), axis=(0, 1, 2))
    V = fftconv.convolve(plan, f)
    Vs = fftconv.convolve(plan, shifted)
    np.testing.assert_allclose(Vs[3:, 1:, 4:], V[:-3, :-1, :-4], atol=1e-13)
