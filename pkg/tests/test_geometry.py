import numpy as np
import pytest
import sympy as sp
from numpy.polynomial import legendre

from kahlerflow import geometry as geo


@pytest.mark.parametrize("manifold,V", [("CP1", 2.0), ("CP2", 9.0)])
def test_reference_volume(manifold, V):
    ref = geo.build_reference(manifold, 512)
    assert abs(ref.volume - V) < 1e-8
    assert abs(geo.integrate(1.0, ref) - V) < 1e-8


@pytest.mark.parametrize("manifold", ["CP1", "CP2"])
def test_reference_curvature_and_h(manifold):
    ref = geo.build_reference(manifold, 512)
    cf = geo.curvature(ref)
    assert np.abs(cf.R - ref.n).max() < 1e-8
    assert np.abs(geo.h_potential(ref)).max() < 1e-10


def test_reference_bisectional_components():
    ref = geo.build_reference("CP2", 256)
    A, B, C = geo.curvature(ref).bisectional
    # scaled Fubini-Study: holomorphic sectional 2/3 and mixed 1/3 of the Ric = omega metric
    assert np.allclose(A, 2 / 3, atol=1e-10) and np.allclose(C, 2 / 3, atol=1e-10)
    assert np.allclose(B, 1 / 3, atol=1e-10)
    cp1 = geo.curvature(geo.build_reference("CP1", 256)).bisectional[0]
    assert np.ptp(cp1) < 1e-8


def test_configuration_errors():
    with pytest.raises(geo.ConfigurationError):
        geo.build_reference("CP3", 256)
    with pytest.raises(geo.ConfigurationError):
        geo.build_reference("CP1", 16)
    with pytest.raises(geo.ConfigurationError):
        geo.build_reference("CP1", 128, L=5)


def test_metric_from_potential_identities():
    ref = geo.build_reference("CP1", 256)
    st = geo.metric_from_potential(ref, np.zeros(256))
    assert np.array_equal(st.phi, ref.phi)
    shifted = geo.metric_from_potential(ref, np.full(256, 3.0))
    assert np.abs(shifted.q).max() < 1e-13 and np.abs(shifted.p).max() < 1e-13
    tanh = geo.metric_from_potential(ref, 0.1 * np.tanh(ref.grid.s))
    assert abs(tanh.volume - 2.0) < 1e-8


def test_positivity_error_reports_index():
    ref = geo.build_reference("CP1", 128)
    phi = -3.0 * legendre.legval(ref.grid.xi, [0, 0, 1])
    with pytest.raises(geo.PositivityError) as exc:
        geo.metric_from_potential(ref, phi)
    idx = exc.value.index
    st = geo.ReducedMetricState(ref.grid, phi)
    assert idx == int(np.flatnonzero(1 + st.q <= 0)[0])
    assert f"index {idx}" in str(exc.value)


@pytest.mark.parametrize("k", range(6))
def test_radial_operator_on_legendre(k):
    # (rho f')' with rho = (1 - xi^2)/2 is -k(k+1)/2 on P_k
    g = geo.ReducedGrid("CP1", 128)
    P = legendre.legval(g.xi, np.eye(k + 1)[k])
    assert np.abs(g.div_rho_grad(P) + k * (k + 1) / 2 * P).max() < 1e-11
    assert np.abs(g.rad_operator @ P + k * (k + 1) / 2 * P).max() < 1e-9


def test_radial_operator_null_space_is_constants():
    g = geo.ReducedGrid("CP1", 96)
    ev = np.sort(np.abs(np.linalg.eigvals(g.rad_operator)))
    assert ev[0] < 1e-8 and ev[1] > 0.5


def _symbolic_curvature(n, phi_expr, xi):
    """R, r_rad, r_tan and (A, B, C) from u(s) by direct differentiation."""
    s = sp.symbols("s", real=True)
    u = (n + 1) * sp.log(1 + sp.exp(s)) + phi_expr.subs(xi, sp.tanh(s / 2))
    u1, u2 = sp.diff(u, s), sp.diff(u, s, 2)
    # Ricci potential in s: -log det + n s
    P = -sp.log(u1 ** (n - 1) * u2) + n * s
    r_rad = sp.diff(P, s, 2) / u2
    r_tan = sp.diff(P, s) / u1
    # F(x) = u'' as a function of x = u'
    dF = sp.diff(u2, s) / u2
    A = -sp.diff(dF, s) / u2
    B = -sp.diff(u2 / u1, s) / u2
    C = 2 * (1 - u2 / u1) / u1
    return s, dict(r_rad=r_rad, r_tan=r_tan, A=A, B=B, C=C)


@pytest.mark.parametrize("manifold", ["CP1", "CP2"])
def test_curvature_matches_symbolic_oracle(manifold):
    xi = sp.symbols("xi", real=True)
    phi_expr = sp.Rational(1, 10) * (xi**2 + xi**3 / 2) - sp.Rational(1, 20) * xi**4
    ref = geo.build_reference(manifold, 64)
    n = ref.n
    phi = sp.lambdify(xi, phi_expr, "numpy")(ref.grid.xi)
    st = geo.metric_from_potential(ref, phi)
    cf = geo.curvature(st)
    s, ex = _symbolic_curvature(n, phi_expr, xi)
    fns = {k: sp.lambdify(s, v, "mpmath") for k, v in ex.items()}
    import mpmath

    mpmath.mp.dps = 40
    # stay off the last nodes where exp(|s|) overflows mpmath's lambdified tanh precision
    sel = np.flatnonzero(np.abs(ref.grid.s) < 20)
    got = {k: np.array([float(fns[k](mpmath.mpf(float(ref.grid.s[i])))) for i in sel]) for k in fns}
    assert np.abs(cf.r_rad[sel] - got["r_rad"]).max() < 1e-9
    if n == 1:
        assert np.abs(cf.R[sel] - got["r_rad"]).max() < 1e-9
        return
    assert np.abs(cf.r_tan[sel] - got["r_tan"]).max() < 1e-9
    A, B, C = cf.bisectional
    assert np.abs(A[sel] - got["A"]).max() < 1e-9
    assert np.abs(B[sel] - got["B"]).max() < 1e-9
    assert np.abs(C[sel] - got["C"]).max() < 1e-9
    # the reduction itself: r_rad = A + B, r_tan = B + C
    d1 = sp.lambdify(s, ex["r_rad"] - ex["A"] - ex["B"], "mpmath")
    d2 = sp.lambdify(s, ex["r_tan"] - ex["B"] - ex["C"], "mpmath")
    for i in sel[::4]:
        x = mpmath.mpf(float(ref.grid.s[i]))
        assert abs(d1(x)) < 1e-30 and abs(d2(x)) < 1e-30


@pytest.mark.parametrize("manifold", ["CP1", "CP2"])
def test_total_scalar_curvature_is_topological(manifold, rng):
    ref = geo.build_reference(manifold, 256)
    phi = geo.random_potential(ref.grid, rng, 0.3)
    st = geo.metric_from_potential(ref, phi)
    R = geo.curvature(st).R
    assert abs(geo.integrate(R, st) - ref.n * st.volume) < 1e-6
    assert abs(geo.average_scalar_curvature(st) - ref.n) < 1e-8


@pytest.mark.parametrize("manifold", ["CP1", "CP2"])
def test_ricci_potential_perturbed(manifold, rng):
    ref = geo.build_reference(manifold, 1024)
    st = geo.metric_from_potential(ref, geo.random_potential(ref.grid, rng, 0.3))
    h = geo.h_potential(st)
    assert abs(geo.integrate(np.expm1(h), st)) < 1e-8
    assert geo.h_residual(st, h) < 1e-6


def test_cp1_spectrum_and_lower_bound():
    ref = geo.build_reference("CP1", 1024)
    ev = geo.laplacian_spectrum(ref, 3)
    assert np.abs(ev - [1, 3, 6]).max() < 1e-3
    assert ev[0] >= 1 - 1e-6
    sp_ = geo.laplacian_spectrum(ref, 3, return_vectors=True)
    # the constant mode is dropped: returned eigenvectors are mean-free
    assert np.abs(ref.weights @ sp_.eigenvectors).max() < 1e-8


def test_spectrum_count_validated():
    with pytest.raises(geo.ConfigurationError):
        geo.laplacian_spectrum(geo.build_reference("CP1", 64), 40)


@pytest.mark.parametrize("n_points", [64, 256, 1024])
def test_curvature_grid_convergence(n_points):
    # a coarse grid resolves this polynomial potential to roundoff already
    ref_c = geo.build_reference("CP2", 64)
    ref = geo.build_reference("CP2", n_points)
    f = lambda x: 0.1 * legendre.legval(x, [0, 0.5, 1, 0.3])
    Rc = geo.curvature(geo.state_from_function(ref_c, f)).R
    R = geo.curvature(geo.state_from_function(ref, f)).R
    xs = np.linspace(-0.99, 0.99, 41)
    assert np.abs(ref.grid.interpolate(R, xs) - ref_c.grid.interpolate(Rc, xs)).max() < 1e-9
