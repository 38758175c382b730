"""Holomorphy potentials of the dilation field, Futaki invariant and the
invariants Im_k built from Ricci powers.

The only holomorphic field compatible with the radial ansatz is the
dilation X = sum z_i d/dz_i.  For omega = i ddbar u(s) one has
i_X omega = i dbar u'(s), so theta_X = u'(s) + const, and X acts on radial
functions by f -> df/ds.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .algebra import vandermonde_inverse
from .geometry import ReducedMetricState, h_potential, mixed_power_density

DILATION = "dilation"


@dataclass(frozen=True, eq=False)
class HolomorphicFieldDesc:
    manifold: str
    field: str
    theta_samples: np.ndarray
    normalization: str = "mean-zero"


def _check_field(field):
    if field != DILATION:
        raise ValueError(f"unsupported holomorphic field {field!r}; only 'dilation' is symmetric")


def holomorphic_potential(state: ReducedMetricState, field: str = DILATION) -> HolomorphicFieldDesc:
    _check_field(field)
    theta = state.du.copy()
    theta -= float(state.weights @ theta) / state.volume
    return HolomorphicFieldDesc(state.manifold, field, theta)


def apply_field(state: ReducedMetricState, f) -> np.ndarray:
    """X(f) = df/ds for radial f."""
    return state.d_ds(f)


def contraction_residual(state: ReducedMetricState, desc: HolomorphicFieldDesc) -> float:
    """i_X omega - i dbar theta: the dbar-coefficients are u'' and dtheta/ds."""
    return float(np.abs(state.d_ds(desc.theta_samples) - state.ddu).max() / state.ddu.max())


def lie_derivative_residual(state: ReducedMetricState, desc: HolomorphicFieldDesc, da: float = 1e-4) -> float:
    """L_X omega - i ddbar theta, with L_X omega from pulled-back metrics."""
    fwd = dilate_state(state, da)
    bwd = dilate_state(state, -da)
    lie = (fwd.omega - bwd.omega).scale(1.0 / (2 * da))
    dd = state.ddbar(desc.theta_samples)
    return float(max(np.abs(lie.rad - dd.rad).max(), np.abs(lie.tan - dd.tan).max() if state.n > 1 else 0.0))


def ricci_contraction_residual(state: ReducedMetricState, desc: HolomorphicFieldDesc) -> float:
    """i dbar Lap(theta) + i_X Ric, as the spread of Lap(theta) + dP/ds.

    Ric = i ddbar P with P = u_ref - log(omega_phi^n/omega_ref^n), so
    i_X Ric = i dbar P'(s) and the sum must be constant.
    """
    # u_ref is singular at the far pole; its s-derivative is used in closed form
    dP = state.grid.du_ref - state.d_ds(state.log_vol_ratio)
    g = state.laplacian(desc.theta_samples) + dP
    return float(np.ptp(g))


# ---------------------------------------------------------------------------
# dilations z -> lambda z act by s -> s + a with a = 2 log(lambda)

def dilated_xi(xi, a: float, grid=None):
    if grid is not None:
        op, om = grid.one_plus, grid.one_minus
    else:
        op, om = 1.0 + xi, 1.0 - xi
    ea = np.exp(a)
    return (ea * op - om) / (ea * op + om)


def reference_dilation_potential(grid, a: float) -> np.ndarray:
    """u_ref(s + a) - u_ref(s)."""
    return (grid.n + 1) * np.log(0.5 * (grid.one_minus + np.exp(a) * grid.one_plus))


def dilate_potential(state: ReducedMetricState, a: float) -> np.ndarray:
    """Total potential (relative to u_ref) of the pullback of ``state``."""
    g = state.grid
    shifted = g.interpolate(state.phi, dilated_xi(g.xi, a, g))
    return reference_dilation_potential(g, a) + shifted


def dilate_state(state: ReducedMetricState, a: float) -> ReducedMetricState:
    return ReducedMetricState(state.grid, dilate_potential(state, a))


# ---------------------------------------------------------------------------

def futaki(state: ReducedMetricState, field: str = DILATION) -> float:
    """int X(h) omega^n."""
    _check_field(field)
    h = h_potential(state)
    return float(state.weights @ apply_field(state, h))


def _theta(state, theta):
    if theta is None:
        return holomorphic_potential(state).theta_samples
    if isinstance(theta, HolomorphicFieldDesc):
        return theta.theta_samples
    return np.asarray(theta, dtype=float)


def im_k(state: ReducedMetricState, field: str = DILATION, k: int = 0, theta=None) -> float:
    """(n-k) int theta omega^n + int((k+1) Lap(theta) Ric^k w^(n-k) - (n-k) theta Ric^(k+1) w^(n-k-1))."""
    _check_field(field)
    n = state.n
    if not 0 <= k <= n:
        raise ValueError("k out of range")
    th = _theta(state, theta)
    mu0 = state.grid.ref_measure
    ric, w = state.ricci, state.omega
    lap = state.laplacian(th)
    val = (n - k) * float(state.weights @ th)
    val += (k + 1) * float(mu0 @ (lap * mixed_power_density([(ric, k), (w, n - k)], n)))
    if k < n:
        val -= (n - k) * float(mu0 @ (th * mixed_power_density([(ric, k + 1), (w, n - k - 1)], n)))
    return val


def i_pq(state: ReducedMetricState, field: str = DILATION, p: float = 1.0, q: float = 0.0, theta=None) -> float:
    """int (-p theta + q Lap theta) (q Ric + p omega)^n."""
    _check_field(field)
    th = _theta(state, theta)
    n = state.n
    form = state.ricci.scale(q) + state.omega.scale(p)
    dens = mixed_power_density([(form, n)], n)
    f = -p * th + q * state.laplacian(th)
    return float(state.grid.ref_measure @ (f * dens))


def i_pq_expanded(state: ReducedMetricState, p: float, q: float, theta=None) -> float:
    """Same integral through the binomial expansion of (q Ric + p omega)^n."""
    th = _theta(state, theta)
    n = state.n
    f = -p * th + q * state.laplacian(th)
    mu0 = state.grid.ref_measure
    total = 0.0
    for k in range(n + 1):
        dens = mixed_power_density([(state.ricci, k), (state.omega, n - k)], n)
        total += comb(n, k) * q**k * p ** (n - k) * float(mu0 @ (f * dens))
    return total


def im_from_i_pq(state: ReducedMetricState, theta=None) -> np.ndarray:
    """Im_{k-1}, k = 1..n+1, reconstructed from I_{1,i} with the Vandermonde inverse.

    Im_{k-1} = -((n-k+1+ups_k)/(n+1)) int(-theta + omega)^{n+1}
               + (1/C(n+1,k)) sum_i c_ik int(-theta + omega + i(Lap theta + Ric))^{n+1}
    where int(-theta + omega)^{n+1} = -(n+1) int theta omega^n and the second
    integral equals (n+1) I_{1,i}.
    """
    th = _theta(state, theta)
    n = state.n
    c, ups = vandermonde_inverse(n)
    top0 = -(n + 1) * float(state.weights @ th)
    tops = [(n + 1) * i_pq(state, DILATION, 1.0, float(i), th) for i in range(1, n + 2)]
    out = []
    for k in range(1, n + 2):
        val = -(n - k + 1 + ups[k - 1]) / (n + 1) * top0
        val += sum(c[i - 1, k - 1] * tops[i - 1] for i in range(1, n + 2)) / comb(n + 1, k)
        out.append(val)
    return np.array(out)


def decomposition_check(state: ReducedMetricState, field: str = DILATION, theta=None) -> float:
    """max_k |Im_k direct - Im_k reconstructed|."""
    _check_field(field)
    th = _theta(state, theta)
    direct = np.array([im_k(state, field, k, th) for k in range(state.n + 1)])
    return float(np.abs(direct - im_from_i_pq(state, th)).max())
