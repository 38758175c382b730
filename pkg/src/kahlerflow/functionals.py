"""Energy functionals on the space of Kahler potentials.

Every functional takes a base state ``ref`` (the metric omega, possibly not
Kahler-Einstein) and a potential ``phi`` with omega_phi = omega + i ddbar phi.
All forms are expressed in the common frame of the underlying grid, so mixed
wedge products are pointwise mixed determinants.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .algebra import sigma_fields
from .geometry import (
    Form11,
    ReducedMetricState,
    curvature,
    h_potential,
    metric_from_potential,
    mixed_power_density,
    wedge,
)


class _Pair:
    """omega (ref) and omega_phi on a common grid, with cached pieces."""

    def __init__(self, ref: ReducedMetricState, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != ref.phi.shape:
            raise ValueError("grid mismatch between reference and phi")
        self.ref = ref
        self.phi = phi
        self.state = metric_from_potential(ref, phi)
        self.n = ref.n
        self.V = ref.volume
        self.mu0 = ref.grid.ref_measure

    def integral(self, density) -> float:
        return float(self.mu0 @ density)

    @property
    def omega(self) -> Form11:
        return self.ref.omega

    @property
    def omega_phi(self) -> Form11:
        return self.state.omega

    def dphi_wedge(self) -> Form11:
        """i d phi ^ dbar phi."""
        return self.ref.grad_form(self.phi)

    def h_ref(self):
        return h_potential(self.ref)

    def log_ratio(self):
        """log(omega_phi^n / omega^n)."""
        return self.state.log_vol_ratio - self.ref.log_vol_ratio


def _pair(ref, phi):
    return phi if isinstance(phi, _Pair) else _Pair(ref, phi)


def _grad_mixed(P: _Pair, s: int) -> float:
    """int i dphi ^ dbar phi ^ omega_phi^s ^ omega^(n-1-s)."""
    n = P.n
    dens = mixed_power_density([(P.dphi_wedge(), 1), (P.omega_phi, s), (P.omega, n - 1 - s)], n)
    return P.integral(dens)


# ---------------------------------------------------------------------------

def j_energy(ref, phi) -> float:
    """Generalized energy J."""
    P = _pair(ref, phi)
    n = P.n
    total = sum((i + 1) / (n + 1) * _grad_mixed(P, n - 1 - i) for i in range(n))
    return total / P.V


def i_functional(ref, phi):
    """(I, I - J) with I = (1/V) int phi (omega^n - omega_phi^n)."""
    P = _pair(ref, phi)
    I = P.integral(P.phi * (P.ref.vol_ratio - P.state.vol_ratio)) / P.V
    return I, I - j_energy(ref, P)


def i_gradient_form(ref, phi) -> float:
    """I from the gradient expression (1/V) sum_i int i dphi^dbar phi^omega^i^omega_phi^(n-1-i)."""
    P = _pair(ref, phi)
    return sum(_grad_mixed(P, P.n - 1 - i) for i in range(P.n)) / P.V


def j_k_coefficient(n: int, k: int, s: int, i: int, j: int) -> float:
    return (-1) ** (n - i - j - s - 1) / (n - i - j + 1) * comb(k + 1, i) * comb(n - k - 1, j) * comb(n - i - j - 1, s)


def j_k_energy(ref, phi, k: int) -> float:
    """J_k by the closed triple sum; J_n = 0."""
    P = _pair(ref, phi)
    n = P.n
    if not 0 <= k <= n:
        raise ValueError("k out of range")
    if k == n:
        return 0.0
    grads = [_grad_mixed(P, s) for s in range(n)]
    total = 0.0
    for j in range(n - k):
        for i in range(k + 1):
            for s in range(n - i - j):
                total += j_k_coefficient(n, k, s, i, j) * grads[s]
    return (n - k) * total / P.V


def _j_k_path_integrand(P: _Pair, k: int, t: float) -> float:
    n = P.n
    dd = P.omega_phi - P.omega
    wt = P.omega + dd.scale(t)
    a = mixed_power_density([(wt, k + 1), (wt, n - k - 1)], n)
    b = mixed_power_density([(P.omega, k + 1), (wt, n - k - 1)], n)
    return P.integral(P.phi * (a - b))


def j_k_path_oracle(ref, phi, k: int, n_steps: int = 64) -> float:
    """J_k from its path definition along t*phi (Simpson + one Richardson step)."""
    P = _pair(ref, phi)
    n = P.n
    if k == n:
        return 0.0
    if n_steps % 4:
        raise ValueError("n_steps must be a multiple of 4")

    def simpson(m):
        t = np.linspace(0.0, 1.0, m + 1)
        f = np.array([_j_k_path_integrand(P, k, ti) for ti in t])
        return (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum()) / (3 * m)

    fine, coarse = simpson(n_steps), simpson(n_steps // 2)
    val = fine + (fine - coarse) / 15.0
    return -(n - k) / P.V * val


def f_energy(ref, phi) -> float:
    P = _pair(ref, phi)
    J = j_energy(ref, P)
    mean = P.integral(P.phi * P.ref.vol_ratio) / P.V
    a = np.log(P.ref.weights) + P.h_ref() - P.phi
    m = a.max()
    log_avg = m + np.log(np.exp(a - m).sum()) - np.log(P.V)
    return J - mean - log_avg


def k_energy(ref, phi) -> float:
    """Mabuchi K-energy nu, normalized so that nu(0) = 0.

    nu = (1/V) int log(omega_phi^n/omega^n) omega_phi^n
         + (1/V) int h (omega^n - omega_phi^n) - (I - J)
    """
    P = _pair(ref, phi)
    ent = P.integral(P.log_ratio() * P.state.vol_ratio) / P.V
    h = P.h_ref()
    hterm = P.integral(h * (P.ref.vol_ratio - P.state.vol_ratio)) / P.V
    _, imj = i_functional(ref, P)
    return ent + hterm - imj


def k_energy_path_derivative(ref, phi, phidot) -> float:
    """-(1/V) int phidot (R - r) omega_phi^n with r the volume average of R."""
    P = _pair(ref, phi)
    R = curvature(P.state).R
    w = P.state.weights
    r = float(w @ R) / P.V
    return -float(w @ (np.asarray(phidot) * (R - r))) / P.V


def k_energy_derivative_check(ref, phi, dphi, eps: float = 1e-3):
    """Centered 4th-order difference of nu along phi + t dphi at t = 0 vs the formula."""
    dphi = np.asarray(dphi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    vals = [k_energy(ref, phi + m * eps * dphi) for m in (-2, -1, 1, 2)]
    fd = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * eps)
    exact = k_energy_path_derivative(ref, phi, dphi)
    return fd, exact


def _ricci_form(state) -> Form11:
    return state.ricci


def e_k0(ref, phi, k: int) -> float:
    P = _pair(ref, phi)
    n = P.n
    if not 0 <= k <= n:
        raise ValueError("k out of range")
    ric = _ricci_form(P.state)
    dens = 0.0
    for i in range(k + 1):
        dens = dens + mixed_power_density([(ric, i), (P.omega, k - i), (P.omega_phi, n - k)], n)
    return P.integral((P.log_ratio() - P.h_ref()) * dens) / P.V


def e_k(ref, phi, k: int) -> float:
    P = _pair(ref, phi)
    return e_k0(ref, P, k) - j_k_energy(ref, P, k)


def e_k_base(ref, k: int) -> float:
    """E_{k,omega}(0); zero exactly when h_omega pairs to zero with the Ricci powers."""
    return e_k(ref, np.zeros_like(ref.phi), k)


def e_k_normalized(ref, phi, k: int) -> float:
    """E_{k,omega}(phi) - E_{k,omega}(0)."""
    return e_k(ref, phi, k) - e_k_base(ref, k)


def e_k_flow_derivative(ref, state: ReducedMetricState, phidot, k: int) -> float:
    """d/dt E_k along a path through ``state`` with velocity ``phidot``.

    ((k+1)/V) int Lap(phidot) Ric^k ^ omega_phi^(n-k)
      - ((n-k)/V) int phidot (Ric^(k+1) - omega_phi^(k+1)) ^ omega_phi^(n-k-1)
    The base ``ref`` only matters through the shared grid.
    """
    n = state.n
    phidot = np.asarray(phidot, dtype=float)
    mu0 = state.grid.ref_measure
    V = state.volume
    ric = state.ricci
    w = state.omega
    lap = state.laplacian(phidot)
    first = (k + 1) * float(mu0 @ (lap * mixed_power_density([(ric, k), (w, n - k)], n)))
    second = 0.0
    if k < n:
        d = mixed_power_density([(ric, k + 1), (w, n - k - 1)], n) - state.vol_ratio
        second = (n - k) * float(mu0 @ (phidot * d))
    return (first - second) / V


def e_0_flow_derivative_short(state: ReducedMetricState, phidot) -> float:
    """-(n/V) int phidot (Ric - omega_phi) ^ omega_phi^(n-1)."""
    n = state.n
    d = wedge([state.ricci] + [state.omega] * (n - 1), n) - state.vol_ratio
    return -n * float(state.grid.ref_measure @ (np.asarray(phidot) * d)) / state.volume


def sigma_k_fields(state: ReducedMetricState):
    cf = curvature(state)
    return sigma_fields(cf.eigenvalues)


def euler_lagrange_constant(state: ReducedMetricState, k: int) -> float:
    n = state.n
    if k == n:
        return 0.0
    sig = sigma_k_fields(state)
    return -(n - k) * float(state.weights @ sig[k + 1]) / state.volume


def euler_lagrange_topological_constant(n: int, k: int) -> float:
    """-(n-k) c_1^{k+1} [omega]^{n-k-1} in the anticanonical class (= -(n-k) V)."""
    V = {1: 2.0, 2: 9.0}[n]
    return -(n - k) * V


def euler_lagrange_residual(ref, state: ReducedMetricState, k: int) -> np.ndarray:
    """(k+1) Lap sigma_k - (n-k) sigma_(k+1) - c_k, pointwise."""
    n = state.n
    if not 0 <= k <= n:
        raise ValueError("k out of range")
    sig = sigma_k_fields(state)
    out = (k + 1) * state.laplacian(sig[k])
    if k < n:
        out = out - (n - k) * sig[k + 1]
    return out - euler_lagrange_constant(state, k)


# ---------------------------------------------------------------------------

@dataclass
class FunctionalLedger:
    reference_id: str
    J: float
    J_k: list
    F: float
    nu: float
    E0_k: list
    E_k: list
    I: float
    I_minus_J: float
    phi_mean: float = 0.0
    flags: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "reference_id": self.reference_id,
            "J": self.J,
            "J_k": list(self.J_k),
            "F": self.F,
            "nu": self.nu,
            "E0_k": list(self.E0_k),
            "E_k": list(self.E_k),
            "I": self.I,
            "I_minus_J": self.I_minus_J,
            "phi_mean": self.phi_mean,
            "flags": dict(self.flags),
        }


def functional_ledger(ref, phi, reference_id: str = "reference", tol: float = 1e-10) -> FunctionalLedger:
    P = _pair(ref, phi)
    n = P.n
    J = j_energy(ref, P)
    Jk = [j_k_energy(ref, P, k) for k in range(n)] + [0.0]
    E0 = [e_k0(ref, P, k) for k in range(n + 1)]
    Ek = [E0[k] - Jk[k] for k in range(n + 1)]
    I, imj = i_functional(ref, P)
    scale = 1.0 + abs(I)
    flags = {
        "J_nonnegative": J >= -tol * scale,
        "I_nonnegative": I >= -tol * scale,
        "I_minus_J_le_I": imj <= I + tol * scale,
        "I_le_n1_I_minus_J": I <= (n + 1) * imj + tol * scale,
        "J_last_equals_J": abs(Jk[n - 1] - J) <= tol * (1 + abs(J)),
    }
    return FunctionalLedger(
        reference_id=reference_id,
        J=J,
        J_k=Jk,
        F=f_energy(ref, P),
        nu=k_energy(ref, P),
        E0_k=E0,
        E_k=Ek,
        I=I,
        I_minus_J=imj,
        phi_mean=P.integral(P.phi * P.state.vol_ratio) / P.V,
        flags=flags,
    )
