import numpy as np
import pytest

from kahlerflow import functionals as fn
from kahlerflow import geometry as geo
from kahlerflow import invariants as inv

MANIFOLDS = ["CP1", "CP2"]


def _states(m, rng, count, n_points=256):
    ref = geo.build_reference(m, n_points)
    return ref, [geo.metric_from_potential(ref, geo.random_potential(ref.grid, rng, 0.3)) for _ in range(count)]


def test_reference_cp1_moment_map():
    ref = geo.build_reference("CP1", 256)
    d = inv.holomorphic_potential(ref)
    expect = ref.grid.du_ref - float(ref.weights @ ref.grid.du_ref) / ref.volume
    assert np.abs(d.theta_samples - expect).max() < 1e-12
    assert inv.contraction_residual(ref, d) < 1e-8
    assert d.normalization == "mean-zero"


@pytest.mark.parametrize("m", MANIFOLDS)
def test_potential_residuals_on_perturbed_state(m, rng):
    _, states = _states(m, rng, 2)
    for st in states:
        d = inv.holomorphic_potential(st)
        assert abs(st.weights @ d.theta_samples) < 1e-12
        assert inv.contraction_residual(st, d) < 1e-6
        assert inv.lie_derivative_residual(st, d) < 1e-6
        assert inv.ricci_contraction_residual(st, d) < 1e-6


def test_unsupported_field():
    with pytest.raises(ValueError):
        inv.futaki(geo.build_reference("CP1", 64), field="rotation")


@pytest.mark.parametrize("m", MANIFOLDS)
def test_vanishing_on_kahler_einstein(m):
    ref = geo.build_reference(m, 256)
    assert abs(inv.futaki(ref)) < 1e-8
    for k in range(ref.n + 1):
        assert abs(inv.im_k(ref, k=k)) < 1e-8
        lap = ref.laplacian(inv.holomorphic_potential(ref).theta_samples)
        assert abs((k + 1) * geo.integrate(lap, ref)) < 1e-8


@pytest.mark.parametrize("m", MANIFOLDS)
def test_metric_independence(m, rng):
    _, states = _states(m, rng, 5, 1024)
    fut = [inv.futaki(st) for st in states]
    assert np.ptp(fut) < 1e-6
    for k in range(states[0].n + 1):
        vals = [inv.im_k(st, k=k) for st in states]
        assert np.std(vals) < 1e-5 * (1 + abs(np.mean(vals)))


@pytest.mark.parametrize("m", MANIFOLDS)
def test_im0_and_futaki(m, rng):
    _, states = _states(m, rng, 3)
    for st in states:
        f = inv.futaki(st)
        i0 = inv.im_k(st, k=0)
        assert abs(i0 - st.n * f) < 1e-8
        assert abs(i0 - f) < 1e-8


@pytest.mark.parametrize("m", MANIFOLDS)
def test_shift_invariance(m, rng):
    _, states = _states(m, rng, 1)
    st = states[0]
    th = inv.holomorphic_potential(st).theta_samples
    for k in range(st.n + 1):
        assert abs(inv.im_k(st, k=k, theta=th) - inv.im_k(st, k=k, theta=th + 3.0)) < 1e-10


@pytest.mark.parametrize("m", MANIFOLDS)
def test_i_pq(m, rng):
    ref, states = _states(m, rng, 2)
    assert abs(inv.i_pq(ref, p=1.0, q=0.0)) < 1e-12
    for st in [ref] + states:
        for p, q in ((1.0, 2.0), (0.5, -1.0), (2.0, 3.0)):
            assert abs(inv.i_pq(st, p=p, q=q) - inv.i_pq_expanded(st, p, q)) < 1e-8


@pytest.mark.parametrize("m", MANIFOLDS)
def test_vandermonde_reconstruction(m, rng):
    _, states = _states(m, rng, 2)
    for st in states:
        assert inv.decomposition_check(st) < 1e-6
        theta = rng.normal(size=st.grid.n_points)
        theta = st.grid.values(np.r_[st.grid.coeffs(theta)[:6], np.zeros(st.grid.n_points - 6)])
        assert inv.decomposition_check(st, theta=theta) < 1e-6


@pytest.mark.parametrize("m", MANIFOLDS)
def test_orbit_derivative(m, rng):
    ref, states = _states(m, rng, 1, 256)
    st = states[0]
    base = st.phi
    da = 1e-3
    for k in range(ref.n + 1):
        v = [fn.e_k(ref, inv.dilate_potential(st, a * da) - ref.phi, k) for a in (-2, -1, 1, 2)]
        fd = (v[0] - 8 * v[1] + 8 * v[2] - v[3]) / (12 * da)
        assert abs(fd - inv.im_k(st, k=k) / st.volume) < 1e-4
    assert np.array_equal(st.phi, base)


def test_dilation_of_reference_matches_closed_form():
    ref = geo.build_reference("CP2", 128)
    a = 0.4
    moved = inv.dilate_potential(ref, a)
    assert np.abs(moved - inv.reference_dilation_potential(ref.grid, a)).max() < 1e-14
    # composing two dilations adds the parameters
    two = inv.dilate_potential(inv.dilate_state(ref, 0.3), 0.1)
    assert np.abs(two - moved).max() < 1e-10
