import numpy as np
import pytest
from hypothesis import given, strategies as st

from anisovie.grid import ProbeSet, make_grid
from anisovie.krylov import SolveOptions
from anisovie.media import build_eps, identity_tensor
from anisovie.operators import EquationKind
from anisovie.scattering import (IncomingField, ProblemTemplate, ScatteringProblem, StudyRow,
                                 convergence_study, far_field_eval, format_table, load_solution,
                                 pde_residual, relative_errors, rows_to_csv, solve_problem,
                                 support_window)

ALL_KINDS = list(EquationKind)


def _incoming(kind, w, amp=1.0):
    if kind is EquationKind.ELECTROSTATIC:
        return IncomingField.uniform_gradient((1, 0, 0), amp)
    return IncomingField.plane_wave(w, (0.6, 0.8, 0.0), (0.0, 0.0, 1.0), amp)


def _problem(kind, n=24, variant="iso_222", w=2 * np.pi, amp=1.0, tol=1e-13):
    kind = EquationKind(kind)
    g = make_grid(n)
    w = 0.0 if kind is EquationKind.ELECTROSTATIC else w
    eps = build_eps(variant, g, omega=w) if variant != "identity" else identity_tensor(g)
    return ScatteringProblem(kind, g, eps, w, _incoming(kind, w, amp), SolveOptions(tolerance=tol))


# incoming data ---------------------------------------------------------------

def _num_laplacian(f, p, d=1e-3):
    out = -6 * f(*p)
    for i in range(3):
        for s in (1, -1):
            q = list(p)
            q[i] = q[i] + s * d
            out = out + f(*q)
    return out / d ** 2


def test_incoming_fields_solve_free_space_equations():
    p = (np.array([0.3, 0.7]), np.array([0.2, 0.5]), np.array([0.9, 0.1]))
    hp = IncomingField.harmonic_poly(2, {(2, 0, 0): 1.0, (0, 2, 0): -1.0, (0, 1, 1): 3.0})
    assert np.abs(_num_laplacian(hp.phi, p)).max() < 1e-6
    w = 5.0
    pw = IncomingField.plane_wave(w, (0.0, 0.6, 0.8), (1.0, 0.0, 0.0))
    lap = _num_laplacian(pw.phi, p)
    assert np.abs(lap + w ** 2 * pw.phi(*p)).max() < 1e-4 * np.abs(w ** 2 * pw.phi(*p)).max()
    np.testing.assert_allclose(pw.H(*p), np.cross(pw.d, pw.p)[:, None] * pw.E(*p)[0][None])


def test_incoming_gradients_are_analytic():
    p = (np.array([0.3]), np.array([0.2]), np.array([0.9]))
    d = 1e-6
    for f in (IncomingField.harmonic_poly(3, {(1, 1, 1): 2.0, (3, 0, 0): 1.0, (1, 2, 0): -3.0}),
              IncomingField.plane_wave(3.0, (0, 0, 1)),
              IncomingField.uniform_gradient((0.0, 0.6, 0.8), 2.0)):
        g = f.grad_phi(*p)
        for i in range(3):
            q1, q0 = list(p), list(p)
            q1[i] = q1[i] + d
            q0[i] = q0[i] - d
            assert abs((f.phi(*q1) - f.phi(*q0))[0] / (2 * d) - g[i][0]) < 1e-6


def test_incoming_validation():
    with pytest.raises(ValueError, match="harmonic"):
        IncomingField.harmonic_poly(2, {(2, 0, 0): 1.0}).validate("electrostatic")
    with pytest.raises(ValueError, match="unit"):
        IncomingField.plane_wave(1.0, (1, 1, 0)).validate("helmholtz")
    with pytest.raises(ValueError, match="orthogonal"):
        IncomingField.plane_wave(1.0, (1, 0, 0), (1, 0, 0)).validate("maxwell_reduced")
    with pytest.raises(ValueError, match="plane-wave"):
        IncomingField.uniform_gradient().validate("helmholtz")
    with pytest.raises(ValueError, match="harmonic"):
        IncomingField.plane_wave(1.0).validate("electrostatic")
    with pytest.raises(ValueError, match="degree"):
        IncomingField.harmonic_poly(1, {(2, 0, 0): 1.0})
    with pytest.raises(ValueError, match="unknown"):
        IncomingField("spherical")


def test_problem_invariants():
    g = make_grid(24)
    eps = build_eps("iso_222", g)
    with pytest.raises(ValueError, match="omega"):
        ScatteringProblem("electrostatic", g, eps, 5.0, IncomingField.uniform_gradient())
    with pytest.raises(ValueError, match="omega"):
        ScatteringProblem("helmholtz", g, eps, 0.0, IncomingField.plane_wave(1.0))
    with pytest.raises(ValueError, match="frequency"):
        ScatteringProblem("helmholtz", g, eps, 2.0, IncomingField.plane_wave(1.0))
    with pytest.raises(ValueError, match="mu"):
        ScatteringProblem("helmholtz", g, eps, 1.0, IncomingField.plane_wave(1.0), mu=eps)
    full = ScatteringProblem("maxwell_full", g, eps, 1.0, IncomingField.plane_wave(1.0))
    assert not full.mu.support_mask.any() and full.n_unknowns == 6 * g.size


def test_fingerprint_tracks_inputs():
    a, b = _problem("helmholtz"), _problem("helmholtz")
    assert a.fingerprint() == b.fingerprint() and len(a.fingerprint()) == 16
    assert _problem("helmholtz", tol=1e-10).fingerprint() != a.fingerprint()
    assert _problem("helmholtz", variant="iso_444").fingerprint() != a.fingerprint()


def test_support_window():
    m = np.zeros((6, 6, 6), bool)
    assert support_window(m) is None
    m[1, 2, 3] = m[4, 2, 5] = True
    assert support_window(m) == (slice(1, 5), slice(2, 3), slice(3, 6))


# solves -----------------------------------------------------------------------

@pytest.mark.parametrize("kind", ALL_KINDS)
def test_currents_live_on_the_support(kind):
    p = _problem(kind)
    s = solve_problem(p)
    assert s.converged and s.trace.true_residual < 1.5e-13
    assert not np.any(s.J[:, ~p.eps.support_mask])
    assert set(s.available()) >= {"J"}
    if kind is EquationKind.MAXWELL_FULL:
        # mu = I: no magnetic current
        assert s.M is not None and not np.any(s.M)


@pytest.mark.invariant
@given(kind=st.sampled_from(ALL_KINDS))
def test_zero_contrast_gives_zero_fields(kind):
    s = solve_problem(_problem(kind, n=12, variant="identity"))
    assert s.converged and s.trace.matvecs == 0
    assert not np.any(s.J) and all(not np.any(v) for v in s.fields.values())
    assert pde_residual(s, _problem(kind, n=12, variant="identity"))[0] == 0.0


@pytest.mark.invariant
@given(kind=st.sampled_from(ALL_KINDS),
       amp=st.complex_numbers(min_magnitude=0.1, max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_linearity_in_incoming_amplitude(kind, amp):
    s1 = solve_problem(_problem(kind, n=16))
    s2 = solve_problem(_problem(kind, n=16, amp=amp))
    scale = np.abs(s1.J).max()
    assert np.abs(s2.J - amp * s1.J).max() <= 1e-11 * abs(amp) * scale
    for name in s1.fields:
        f1, f2 = s1.fields[name], s2.fields[name]
        assert np.abs(f2 - amp * f1).max() <= 1e-11 * abs(amp) * np.abs(f1).max()


@pytest.mark.invariant
@given(kind=st.sampled_from(ALL_KINDS))
def test_solves_are_deterministic(kind):
    a = solve_problem(_problem(kind, n=16))
    b = solve_problem(_problem(kind, n=16))
    assert a.J.tobytes() == b.J.tobytes() and a.trace.matvecs == b.trace.matvecs
    assert a.fingerprint == b.fingerprint


@pytest.mark.invariant
def test_doubling_amplitude_doubles_everything():
    s1 = solve_problem(_problem("maxwell_full", n=16))
    s2 = solve_problem(_problem("maxwell_full", n=16, amp=2.0))
    np.testing.assert_allclose(s2.J, 2 * s1.J, atol=1e-12 * np.abs(s1.J).max())
    np.testing.assert_allclose(s2.fields["E_sc"], 2 * s1.fields["E_sc"], atol=1e-12)


def test_save_and_load_round_trip(tmp_path):
    s = solve_problem(_problem("maxwell_full", n=12))
    d = s.save(tmp_path / "sol")
    t = load_solution(d)
    assert t.J.tobytes() == s.J.tobytes() and t.M.tobytes() == s.M.tobytes()
    assert t.fields["E_sc"].tobytes() == s.fields["E_sc"].tobytes()
    assert t.trace.matvecs == s.trace.matvecs
    # text files carry 16 significant digits
    np.testing.assert_allclose(t.trace.residuals, s.trace.residuals, rtol=1e-15)
    assert t.fingerprint == s.fingerprint and t.canonical == s.canonical
    summary = (d / "summary.txt").read_text()
    assert "N_matvec = " in summary and "converged = true" in summary
    with pytest.raises(KeyError, match="available: J, M, E_sc, H_sc"):
        t.get("phi_sc")
    with pytest.raises(FileNotFoundError):
        load_solution(tmp_path)


# diagnostics --------------------------------------------------------------------

def test_residual_of_unconverged_solve_is_larger():
    good = _problem("maxwell_reduced", n=32)
    r_good = max(pde_residual(solve_problem(good), good))
    g = make_grid(32)
    w = 2 * np.pi
    bad = ScatteringProblem("maxwell_reduced", g, build_eps("iso_222", g), w, _incoming(
        EquationKind.MAXWELL_REDUCED, w), SolveOptions(max_matvecs=3))
    s = solve_problem(bad)
    assert not s.converged and "E_sc" in s.fields
    assert max(pde_residual(s, bad)) > 2 * r_good


def test_residual_decreases_with_resolution():
    r = [pde_residual(solve_problem(_problem("helmholtz", n=n)), _problem("helmholtz", n=n))[0]
         for n in (24, 32, 40)]
    assert r[0] > r[1] > r[2]


def test_far_field_checks_targets():
    s = solve_problem(_problem("electrostatic", n=16))
    with pytest.raises(ValueError, match="outside"):
        far_field_eval(s, ProbeSet(np.array([[1.05, 0.5, 0.5]])))
    z = solve_problem(_problem("maxwell_reduced", n=12, variant="identity"))
    E, H = far_field_eval(z, ProbeSet(np.array([[3.0, 0.5, 0.5]])))
    assert not np.any(E) and not np.any(H)


def test_far_field_matches_grid_fields_just_outside():
    # compare the quadrature with the FFT-recovered field at a grid node outside the support
    p = _problem("helmholtz", n=32)
    s = solve_problem(p)
    target = ProbeSet(np.array([[0.5, 0.5, 1.2]]))
    ff = far_field_eval(s, target)
    # the same sum taken by brute force
    ax = p.grid.axes()
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    R = np.stack([0.5 - X, 0.5 - Y, 1.2 - Z])
    r = np.linalg.norm(R, axis=0)
    G = np.exp(1j * p.omega * r) / (4 * np.pi * r)
    g1 = G * (1j * p.omega - 1 / r)
    ref = p.grid.h ** 3 * np.sum(g1 * np.sum(R / r * s.J, axis=0))
    assert abs(ff[0] - ref) < 1e-12 * abs(ref)


def test_electrostatic_far_field_decay():
    s = solve_problem(_problem("electrostatic", n=24))
    radii = np.array([5.0, 10.0, 20.0])
    vals = far_field_eval(s, ProbeSet.ray((0.5, 0.5, 0.5), (1.0, 0.2, 0.1), radii))
    ratios = np.abs(vals[:-1] / vals[1:])
    np.testing.assert_allclose(ratios, 4.0, rtol=0.1)


def test_maxwell_radiation_trend():
    s = solve_problem(_problem("maxwell_reduced", n=24))
    x = np.array([0.5, 0.5, 0.5]) + 10.0 * np.array([0.0, 0.6, 0.8])
    E, H = far_field_eval(s, ProbeSet(x[None]))
    xh = (x - 0.5) / np.linalg.norm(x - 0.5)
    assert np.linalg.norm(np.cross(H[:, 0], xh) - E[:, 0]) < 0.2 * np.linalg.norm(E[:, 0])


# studies --------------------------------------------------------------------------

def test_self_comparison_has_zero_error():
    t = ProblemTemplate(EquationKind.HELMHOLTZ, "iso_222", 1.0)
    rows, ref = convergence_study(t, [16], 16)
    assert rows[0].e2 == 0.0 and rows[0].einf == 0.0 and rows[0].n_tot == 3 * 16 ** 3
    with pytest.raises(ValueError, match="reference"):
        convergence_study(t, [20], 16)


def test_relative_errors():
    ref = np.array([3.0, 4.0])
    assert relative_errors(ref, ref) == (0.0, 0.0)
    e2, einf = relative_errors(np.array([3.0, 4.5]), ref)
    assert e2 == pytest.approx(0.1) and einf == pytest.approx(0.125)
    assert relative_errors(np.zeros(2), np.zeros(2)) == (0.0, 0.0)


def test_table_formats(tmp_path):
    rows = [StudyRow(1.0, 1029000, 70, 1.5e-7, 1.1e-6, 27, 8.1, True),
            StudyRow(1.0, 5184000, 120, 1.1e-11, 6.0e-11, 27, 33.3, False)]
    txt = format_table(rows)
    assert txt.splitlines()[0].split() == list(StudyRow.HEADER)
    assert "27*" in txt.splitlines()[2]
    rows_to_csv(rows, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "Size,N_tot,n_side,E2,Einf,N_matvec,Time"
    assert lines[1].split(",")[3] == "1.500000000000000e-07"
