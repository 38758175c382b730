import math

import numpy as np
import pytest

from kahlerflow import flow as fl
from kahlerflow import geometry as geo
from kahlerflow import invariants as inv


def test_trace_columns():
    assert fl.trace_columns(1) == ["t", "c", "eps", "mu", "mu_1", "mu_2", "R_max", "R_min", "min_bisec",
                                   "J", "F", "nu", "E_0", "E_1", "I", "ImJ", "harnack_margin", "rr2_accum"]
    assert "E_2" in fl.trace_columns(2)


@pytest.mark.parametrize("field,value,key", [
    ("dt", -0.1, "dt"), ("t_end", 0.0, "t_end"), ("manifold", "CP3", "manifold"),
    ("n_points", 10, "n_points"), ("integrator", "euler", "integrator"), ("init_family", "x", "init.family"),
    ("L", 4.0, "L"), ("normalize_c", "other", "normalize_c"),
])
def test_config_validation_names_key(field, value, key):
    cfg = fl.FlowConfig(**{field: value})
    with pytest.raises(geo.ConfigurationError, match=f"^{key}"):
        cfg.validate()


@pytest.mark.parametrize("m", ["CP1", "CP2"])
@pytest.mark.parametrize("family", ["bump", "mode", "random"])
def test_initial_amplitude_is_metric_deformation(m, family):
    cfg = fl.FlowConfig(manifold=m, n_points=128, init_family=family, init_amplitude=0.2)
    g = geo.ReducedGrid(m, 128)
    phi = fl.initial_potential(cfg, g)
    assert abs(fl.metric_amplitude(g, phi) - 0.2) < 1e-12
    assert abs(g.ref_measure @ phi) < 1e-12


def test_flow_step_fixed_point():
    ref = geo.build_reference("CP1", 128)
    st = ref
    for _ in range(5):
        st = fl.flow_step(st, 0.1, initial=ref)
        assert np.abs(st.phi).max() < 1e-10


def test_flow_step_errors():
    ref = geo.build_reference("CP1", 64)
    with pytest.raises(geo.ConfigurationError):
        fl.flow_step(ref, -1.0)
    with pytest.raises(geo.ConfigurationError):
        fl.flow_step(ref, 0.1, integrator="euler")


def test_integrators_agree():
    ref = geo.build_reference("CP1", 96)
    phi = fl.initial_potential(fl.FlowConfig(n_points=96), ref.grid)
    st = geo.metric_from_potential(ref, phi)
    a = fl.flow_step(st, 0.2, "semi-implicit", initial=st)
    b = fl.flow_step(st, 0.2, "rk4", initial=st)
    assert np.abs(a.phi - b.phi).max() < 1e-8


def test_stationary_run():
    cfg = fl.FlowConfig(manifold="CP2", n_points=64, t_end=10.0, dt=0.1, init_family="zero")
    tr = fl.run_flow(cfg)
    assert np.abs(tr.phi).max() < 1e-10
    assert np.abs(tr.columns["c"]).max() == 0.0 and tr.c_shift == 0.0
    assert fl.accumulate_energy_identity(tr, 1) == (0.0, 0.0)


def test_phidot_envelope(short_cp1_trace):
    tr = short_cp1_trace
    dphi = np.gradient(tr.phi, tr.times, axis=0)
    norm = np.abs(dphi).max(axis=1)
    assert np.all(norm <= norm[0] * np.exp(tr.times) * 1.05 + 1e-12)


def test_short_run_monitors(short_cp1_trace):
    tr = short_cp1_trace
    assert sum(fl.monotonicity_violations(tr).values()) == 0
    worst, checked = fl.energy_derivative_check(tr)
    assert worst.max() < 1e-3 and checked.min() > 100
    for k in range(tr.n + 1):
        lhs, rhs = fl.accumulate_energy_identity(tr, k)
        assert lhs <= rhs + 1e-6
    assert tr.columns["c"].min() > -1e-10
    assert tr.sandwich_ok.all() and tr.bisectional_positive.all()
    assert fl.rmax_doubling_violations(tr) == 0
    assert abs(tr.stats["c_identity_residual"]) < 1e-3
    # dE_1/dt <= -(2/V) int (R - r)^2 along the flow
    V = tr.initial.volume
    assert np.all(tr.dEdt[:, 1] <= -2.0 / V * tr.rr2_integrand + 1e-8)


def test_trace_state_roundtrip(short_cp1_trace):
    tr = short_cp1_trace
    st = tr.state_at(len(tr.times) - 1)
    R = geo.curvature(st).R
    assert np.abs(R - tr.R_fields[-1]).max() < 1e-8
    names, data = tr.rows()
    assert names == fl.trace_columns(1) and data.shape == (len(tr.times), len(names))


def test_harnack_margin_degenerate():
    assert fl.harnack_margin(1.3, 1.3, 0.5, 0.5, 0.0) == 0.0
    with pytest.raises(geo.ConfigurationError):
        fl.harnack_margin(1.0, 1.0, 0.0, 1.0, 0.0)


@pytest.mark.parametrize("m", ["CP1", "CP2"])
def test_radial_distance_on_reference(m):
    # u_ref'' ds^2 = (n+1) dtheta^2 with xi = -cos(theta)
    ref = geo.build_reference(m, 128)
    sig = fl.radial_distance_coordinate(ref)
    th = np.arccos(-ref.grid.xi)
    assert np.abs(sig - np.sqrt(ref.n + 1) * th).max() < 1e-12


def test_harnack_pairs(short_cp1_trace):
    worst, viol, rec = fl.harnack_check(short_cp1_trace, 30, levels=2)
    assert viol == 0 and len(rec) == 30
    assert all(r["delta"] >= 0 for r in rec)


def test_evolution_residual_time_fd():
    cfg = fl.FlowConfig(manifold="CP1", n_points=1024, t_end=1.5, dt=0.005, monitors="basic")
    tr = fl.run_flow(cfg)
    res = fl.evolution_residual_time_fd(tr)
    assert res[tr.times[2:-2] >= 0.1].max() < 1e-3


def test_fit_decay_rate_errors():
    cfg = fl.FlowConfig(manifold="CP1", n_points=64, t_end=1.0, dt=0.1, init_family="zero")
    tr = fl.run_flow(cfg)
    with pytest.raises(geo.NumericalError):
        fl.fit_decay_rate(tr)


def test_automorphism_identity():
    ref = geo.build_reference("CP1", 128)
    res = fl.normalize_by_automorphism(ref)
    assert abs(res.lam - 1.0) < 1e-8 and abs(res.residual) < 1e-8


@pytest.mark.parametrize("m", ["CP1", "CP2"])
def test_automorphism_recovers_dilation(m):
    ref = geo.build_reference(m, 128)
    a0 = -0.8
    st = geo.ReducedMetricState(ref.grid, inv.reference_dilation_potential(ref.grid, a0))
    res = fl.normalize_by_automorphism(st)
    assert abs(res.lam - math.exp(a0 / 2)) < 1e-6
    assert abs(res.psi) < 1e-10
    assert np.abs(res.normalized_phi).max() < 1e-8


def test_automorphism_first_order_condition(rng):
    ref = geo.build_reference("CP1", 128)
    st = geo.metric_from_potential(ref, geo.random_potential(ref.grid, rng, 0.3, parity="odd"))
    res = fl.normalize_by_automorphism(st)
    assert abs(res.residual) < 1e-8
    assert abs(res.dpsi_da) < 1e-8


@pytest.mark.parametrize("m", ["CP1", "CP2"])
def test_k1_integrand_mixed_form_matches_squares(m, rng):
    ref = geo.build_reference(m, 256)
    for _ in range(3):
        st = geo.metric_from_potential(ref, geo.random_potential(ref.grid, rng, 0.3))
        R = geo.curvature(st).R
        diff = R - geo.average_scalar_curvature(st)
        mixed = fl.energy_integrand_mixed(st, st.ricci, diff, 1)
        squares = 2.0 / (st.n * st.volume) * float(st.weights @ diff ** 2)
        assert abs(mixed - squares) < 1e-9 * (1 + squares)
