"""Symmetric Kahler metrics on CP^1 and CP^2 in one reduced variable.

A metric in the anticanonical class is described by a convex potential
u(s) of s = log|z|^2.  We write u = u_ref + phi with the scaled
Fubini-Study potential u_ref = (n+1) log(1 + e^s), whose Ricci form equals
the Kahler form.  Smooth invariant functions on CP^n are smooth functions
of the compactified coordinate

    xi = tanh(s/2) in (-1, 1),

(the height function on the sphere for n = 1), so all fields are sampled
at Chebyshev points in xi and differentiated spectrally.  Both poles are
regular endpoints in this variable, which keeps the curvature evaluation
well conditioned all the way to the fixed points of the torus action.

Forms of type (1,1) that are invariant under the symmetry are diagonal in
the frame {radial, tangential}.  A form is stored as its two eigenvalues
relative to the reference form (see ``Form11``); wedge products of n such
forms are then mixed determinants, evaluated pointwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft
import scipy.linalg

# ---------------------------------------------------------------------------
# errors

class ConfigurationError(ValueError):
    """Invalid resolution, manifold or other user-facing setting."""


class PositivityError(ValueError):
    """Raised when a potential does not define a Kahler metric."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NumericalError(RuntimeError):
    """Root finding, eigen solves or time stepping failed."""


MANIFOLDS = {"CP1": 1, "CP2": 2}

# relative size below which Chebyshev coefficients are treated as roundoff
CHOP_TOL = 1e-14

# Chern numbers c_1^n[M]
CHERN_VOLUME = {"CP1": 2.0, "CP2": 9.0}


def complex_dim(manifold: str) -> int:
    try:
        return MANIFOLDS[manifold]
    except KeyError:
        raise ConfigurationError(f"unknown manifold {manifold!r}; expected CP1 or CP2") from None


# ---------------------------------------------------------------------------
# grid

@dataclass(frozen=True, eq=False)
class ReducedGrid:
    """Chebyshev points of the first kind in xi = tanh(s/2).

    ``s`` holds the log-radial coordinate of every node (strictly increasing);
    ``L`` is the largest |s| reached by the nodes.  The quadrature is Fejer's
    first rule, exact for polynomials in xi of degree below n_points.
    """

    manifold: str
    n_points: int

    def __post_init__(self):
        complex_dim(self.manifold)
        if int(self.n_points) < 16:
            raise ConfigurationError("n_points must be at least 16")

    @property
    def n(self) -> int:
        return MANIFOLDS[self.manifold]

    @cached_property
    def theta(self) -> np.ndarray:
        N = self.n_points
        # reversed so that xi (and s) increase with the index
        return ((2 * np.arange(N) + 1) * np.pi / (2 * N))[::-1].copy()

    @cached_property
    def xi(self) -> np.ndarray:
        return np.cos(self.theta)

    @cached_property
    def one_minus(self) -> np.ndarray:
        return 2.0 * np.sin(self.theta / 2) ** 2

    @cached_property
    def one_plus(self) -> np.ndarray:
        return 2.0 * np.cos(self.theta / 2) ** 2

    @cached_property
    def rho(self) -> np.ndarray:
        # (1 - xi^2)/2
        return 0.5 * self.one_minus * self.one_plus

    @cached_property
    def s(self) -> np.ndarray:
        return np.log(self.one_plus) - np.log(self.one_minus)

    @property
    def L(self) -> float:
        return float(self.s[-1])

    @cached_property
    def fejer(self) -> np.ndarray:
        N = self.n_points
        k = np.arange(1, N // 2 + 1)
        c = np.cos(2.0 * np.outer(self.theta, k)) / (4.0 * k**2 - 1.0)
        return (2.0 / N) * (1.0 - 2.0 * c.sum(axis=1))

    @cached_property
    def bary(self) -> np.ndarray:
        return (-1.0) ** np.arange(self.n_points) * np.sin(self.theta)

    @cached_property
    def D(self) -> np.ndarray:
        """Spectral d/dxi on the nodes."""
        th = self.theta
        # xi_i - xi_j from the half-angle identity (accurate near the ends)
        diff = -2.0 * np.sin((th[:, None] + th[None, :]) / 2) * np.sin((th[:, None] - th[None, :]) / 2)
        np.fill_diagonal(diff, 1.0)
        w = self.bary
        D = (w[None, :] / w[:, None]) / diff
        np.fill_diagonal(D, 0.0)
        np.fill_diagonal(D, -D.sum(axis=1))
        return D

    @cached_property
    def D2(self) -> np.ndarray:
        return self.D @ self.D

    @cached_property
    def ref_measure(self) -> np.ndarray:
        """Quadrature weights of the reference volume form omega^n."""
        n = self.n
        return self.fejer * n * ((n + 1) / 2.0) ** n * self.one_plus ** (n - 1)

    # reference potential u_ref = (n+1) log(1 + e^s) and its s-derivatives
    @cached_property
    def u_ref(self) -> np.ndarray:
        return (self.n + 1) * (np.log(2.0) - np.log(self.one_minus))

    @cached_property
    def du_ref(self) -> np.ndarray:
        return (self.n + 1) * self.one_plus / 2.0

    @cached_property
    def ddu_ref(self) -> np.ndarray:
        return (self.n + 1) * self.rho / 2.0

    # -- coefficient space ------------------------------------------------
    # Nested derivatives taken with D amplify roundoff by ~N^2 per level near
    # the poles.  Fields are therefore differentiated through their Chebyshev
    # coefficients after dropping the tail that sits at roundoff level.

    def coeffs(self, values) -> np.ndarray:
        c = scipy.fft.dct(np.asarray(values, dtype=float)[::-1], type=2) / self.n_points
        c[0] *= 0.5
        return c

    def values(self, c) -> np.ndarray:
        c = np.array(c, dtype=float)
        c[1:] *= 0.5
        return scipy.fft.dct(c, type=3)[::-1]

    @staticmethod
    def chop(c, tol=CHOP_TOL) -> np.ndarray:
        scale = np.abs(c).max()
        if scale == 0.0:
            return c
        big = np.flatnonzero(np.abs(c) > tol * scale)
        out = np.zeros_like(c)
        last = big[-1] + 1
        out[:last] = c[:last]
        return out

    @staticmethod
    def coeff_derivative(c) -> np.ndarray:
        N = len(c)
        t = 2.0 * np.arange(N) * c
        d = np.zeros(N)
        # d_m = sum of t_j over j = m+1, m+3, ...
        for parity in (0, 1):
            idx = np.arange(parity, N, 2)
            tail = np.cumsum(t[idx][::-1])[::-1]
            m = idx - 1
            ok = m >= 0
            d[m[ok]] = tail[ok]
        d[0] *= 0.5
        return d

    def diff(self, f, order=1) -> np.ndarray:
        """Spectral derivative in xi with roundoff-level coefficients removed."""
        c = self.chop(self.coeffs(f))
        for _ in range(order):
            c = self.coeff_derivative(c)
        return self.values(c)

    @staticmethod
    def coeff_times_xi(c) -> np.ndarray:
        """Coefficients of xi * f; one longer than ``c``."""
        out = np.zeros(len(c) + 1)
        out[1] += c[0]
        out[2:] += 0.5 * c[1:]
        out[:-2] += 0.5 * c[1:]
        return out

    def div_rho_grad(self, f, chop: bool = True) -> np.ndarray:
        """(rho f')' with the product by rho formed exactly in coefficient space.

        Multiplying nodal values by rho drops the T_N component of the
        degree-N product, which gives the discrete operator a second,
        spurious null vector (the interpolant of log((1+xi)/(1-xi))).
        """
        c = self.coeffs(f)
        if chop:
            c = self.chop(c)
        d = self.coeff_derivative(c)
        x2 = self.coeff_times_xi(self.coeff_times_xi(d))
        prod = -0.5 * x2
        prod[: len(d)] += 0.5 * d
        return self.values(self.coeff_derivative(prod)[: self.n_points])

    @cached_property
    def rad_operator(self) -> np.ndarray:
        """Matrix of f -> (rho f')'."""
        eye = np.eye(self.n_points)
        return np.column_stack([self.div_rho_grad(e, chop=False) for e in eye])

    def interpolate(self, values, xi_new) -> np.ndarray:
        """Evaluate the Chebyshev interpolant of ``values`` at ``xi_new``."""
        xi_new = np.atleast_1d(np.asarray(xi_new, dtype=float))
        d = xi_new[:, None] - self.xi[None, :]
        exact = np.isclose(d, 0.0, atol=1e-15, rtol=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = self.bary[None, :] / d
            out = (c @ values) / c.sum(axis=1)
        hit = exact.any(axis=1)
        if hit.any():
            out[hit] = np.asarray(values)[exact[hit].argmax(axis=1)]
        return out

    def sample(self, func) -> np.ndarray:
        """Sample a function of xi at the nodes."""
        return np.asarray(func(self.xi), dtype=float)

    def same_as(self, other: "ReducedGrid") -> bool:
        return self.manifold == other.manifold and self.n_points == other.n_points


# ---------------------------------------------------------------------------
# (1,1)-forms in the invariant frame

@dataclass(frozen=True)
class Form11:
    """Invariant real (1,1)-form, eigenvalues relative to the reference form.

    ``rad`` multiplies the radial direction (multiplicity one), ``tan`` the
    tangential directions (multiplicity n-1; ignored for n = 1).
    """

    rad: np.ndarray
    tan: np.ndarray

    def __add__(self, other):
        return Form11(self.rad + other.rad, self.tan + other.tan)

    def __sub__(self, other):
        return Form11(self.rad - other.rad, self.tan - other.tan)

    def scale(self, c):
        return Form11(c * self.rad, c * self.tan)


def wedge(forms: Sequence[Form11], n: int) -> np.ndarray:
    """Density of alpha_1 ^ ... ^ alpha_n against the reference omega^n."""
    if len(forms) != n:
        raise ValueError(f"need exactly {n} forms, got {len(forms)}")
    if n == 1:
        return np.asarray(forms[0].rad)
    total = 0.0
    for j in range(n):
        term = forms[j].rad
        for i in range(n):
            if i != j:
                term = term * forms[i].tan
        total = total + term
    return total / n


def mixed_power_density(spec, n: int) -> np.ndarray:
    """Density of a product of forms given as [(form, power), ...]."""
    forms = []
    for form, power in spec:
        forms.extend([form] * int(power))
    return wedge(forms, n)


# ---------------------------------------------------------------------------
# metric state

@dataclass(frozen=True, eq=False)
class ReducedMetricState:
    """omega_phi = omega_ref + i ddbar phi for a radial potential phi."""

    grid: ReducedGrid
    phi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.shape != (self.grid.n_points,):
            raise ValueError("phi does not match the grid")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def manifold(self) -> str:
        return self.grid.manifold

    @cached_property
    def phi_x(self) -> np.ndarray:
        return self.grid.diff(self.phi)

    @cached_property
    def phi_xx(self) -> np.ndarray:
        return self.grid.diff(self.phi, 2)

    @cached_property
    def q(self) -> np.ndarray:
        """Radial eigenvalue of i ddbar phi relative to the reference."""
        # -xi f' + rho f'' written as (rho f')' to keep roundoff small at the poles
        g = self.grid
        return 2.0 / (self.n + 1) * g.div_rho_grad(self.phi)

    @cached_property
    def p(self) -> np.ndarray:
        """Tangential eigenvalue of i ddbar phi relative to the reference."""
        return self.grid.one_minus * self.phi_x / (self.n + 1)

    @property
    def u_samples(self) -> np.ndarray:
        return self.grid.u_ref + self.phi

    @property
    def phi_samples(self) -> np.ndarray:
        return self.phi

    @cached_property
    def du(self) -> np.ndarray:
        """u'(s), the moment coordinate."""
        return self.grid.du_ref * (1.0 + self.p)

    @cached_property
    def ddu(self) -> np.ndarray:
        """u''(s)."""
        return self.grid.ddu_ref * (1.0 + self.q)

    @property
    def lambda_rad(self) -> np.ndarray:
        return self.ddu

    @property
    def lambda_tan(self) -> np.ndarray:
        return self.du

    @cached_property
    def omega(self) -> Form11:
        return Form11(1.0 + self.q, 1.0 + self.p)

    @cached_property
    def vol_ratio(self) -> np.ndarray:
        """omega_phi^n / omega_ref^n."""
        return (1.0 + self.q) * (1.0 + self.p) ** (self.n - 1)

    @cached_property
    def log_vol_ratio(self) -> np.ndarray:
        return np.log1p(self.q) + (self.n - 1) * np.log1p(self.p)

    @cached_property
    def weights(self) -> np.ndarray:
        return self.grid.ref_measure * self.vol_ratio

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    @property
    def volume_density(self) -> np.ndarray:
        """v(s) with V = int v ds."""
        return self.n * self.du ** (self.n - 1) * self.ddu

    # -- operators ---------------------------------------------------------
    def ddbar(self, f) -> Form11:
        """i ddbar f for a radial function f (relative eigenvalues)."""
        g = self.grid
        fx = g.diff(f)
        c = 2.0 / (self.n + 1)
        return Form11(c * g.div_rho_grad(f), g.one_minus * fx / (self.n + 1))

    def grad_form(self, f, h=None) -> Form11:
        """Real part of i d f ^ dbar h (radial only)."""
        g = self.grid
        fx = g.diff(f)
        hx = fx if h is None else g.diff(h)
        return Form11(2.0 * g.rho * fx * hx / (self.n + 1), np.zeros_like(fx))

    def laplacian(self, f) -> np.ndarray:
        """Complex Laplacian g^{i jbar} f_{i jbar}."""
        a = self.ddbar(f)
        return a.rad / (1.0 + self.q) + (self.n - 1) * a.tan / (1.0 + self.p)

    def grad_sq(self, f) -> np.ndarray:
        """|df|^2 = g^{i jbar} f_i f_jbar."""
        fx = self.grid.diff(f)
        return 2.0 * self.grid.rho * fx**2 / ((self.n + 1) * (1.0 + self.q))

    def trace(self, form: Form11) -> np.ndarray:
        return form.rad / (1.0 + self.q) + (self.n - 1) * form.tan / (1.0 + self.p)

    def d_ds(self, f) -> np.ndarray:
        return self.grid.rho * self.grid.diff(f)

    def integrate_density(self, density) -> float:
        """Integral of a top form given by its density against omega_ref^n."""
        return float(self.grid.ref_measure @ density)

    @cached_property
    def ricci(self) -> Form11:
        """Ricci form; Ric = omega_ref - i ddbar log(omega_phi^n/omega_ref^n)."""
        a = self.ddbar(self.log_vol_ratio)
        return Form11(1.0 - a.rad, 1.0 - a.tan)

    def positivity_violation(self):
        """First node where the metric fails to be positive, else None."""
        bad = ~(1.0 + self.q > 0)
        if self.n > 1:
            bad |= ~(1.0 + self.p > 0)
        idx = np.flatnonzero(bad)
        return int(idx[0]) if idx.size else None

    def is_positive(self) -> bool:
        return self.positivity_violation() is None


def build_reference(manifold: str, n_points: int = 256, L=None) -> ReducedMetricState:
    """The Kahler-Einstein reference metric (phi = 0) with Ric = omega.

    ``L`` is accepted for interface compatibility: when given it must be at
    least 10 and is only used as a plotting window elsewhere.
    """
    if int(n_points) < 64:
        raise ConfigurationError("n_points must be at least 64")
    if L is not None and not float(L) >= 10.0:
        raise ConfigurationError("L must be at least 10")
    grid = ReducedGrid(manifold, int(n_points))
    return ReducedMetricState(grid, np.zeros(grid.n_points))


def metric_from_potential(reference: ReducedMetricState, phi) -> ReducedMetricState:
    """State for omega_ref' + i ddbar phi where omega_ref' is ``reference``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != reference.phi.shape:
        raise ValueError("grid mismatch between reference and phi")
    state = ReducedMetricState(reference.grid, reference.phi + phi)
    bad = state.positivity_violation()
    if bad is not None:
        which = "u''" if not (1.0 + state.q[bad] > 0) else "u'"
        raise PositivityError(
            f"potential is not Kahler: {which} <= 0 at grid index {bad} (s = {reference.grid.s[bad]:.6g})",
            index=bad,
        )
    return state


def state_from_function(reference: ReducedMetricState, func) -> ReducedMetricState:
    """Convenience: perturb ``reference`` by phi = func(xi)."""
    return metric_from_potential(reference, reference.grid.sample(func))


# ---------------------------------------------------------------------------
# curvature

@dataclass(frozen=True, eq=False)
class CurvatureField:
    r_rad: np.ndarray
    r_tan: np.ndarray | None
    R: np.ndarray
    bisectional: tuple
    ric_norm_sq: np.ndarray

    @property
    def min_bisectional(self) -> float:
        return float(min(np.min(b) for b in self.bisectional))

    @property
    def eigenvalues(self):
        if self.r_tan is None:
            return [self.r_rad]
        return [self.r_rad, self.r_tan]


def curvature(state: ReducedMetricState) -> CurvatureField:
    n = state.n
    g = state.grid
    ric = state.ricci
    r_rad = ric.rad / (1.0 + state.q)
    if n == 1:
        return CurvatureField(r_rad, None, r_rad.copy(), (r_rad.copy(),), r_rad**2)
    r_tan = ric.tan / (1.0 + state.p)
    R = r_rad + (n - 1) * r_tan
    # radial holomorphic sectional curvature: -F''(x) for the profile F(u') = u''
    lg = state.ddbar(np.log1p(state.q)).rad
    A = (2.0 / (n + 1) - lg) / (1.0 + state.q)
    # mixed term -(F/x)' with k = u''/u'
    k = g.one_minus * (1.0 + state.q) / (2.0 * (1.0 + state.p))
    B = -2.0 * g.diff(k) / ((n + 1) * (1.0 + state.q))
    # tangential holomorphic sectional curvature 2(1 - u''/u')/u'; the factor
    # (1 + xi) is cancelled analytically so that the z = 0 pole is regular
    bracket = 1.0 + 2.0 * g.one_minus / (n + 1) * (state.phi_x - g.one_minus * state.phi_xx / 2.0)
    C = 2.0 * bracket / ((n + 1) * (1.0 + state.p) ** 2)
    return CurvatureField(r_rad, r_tan, R, (A, B, C), r_rad**2 + (n - 1) * r_tan**2)


def average_scalar_curvature(state: ReducedMetricState) -> float:
    cf = curvature(state)
    return integrate(cf.R, state) / state.volume


def integrate(field, state: ReducedMetricState) -> float:
    """Integral of ``field`` against omega_phi^n."""
    field = np.broadcast_to(np.asarray(field, dtype=float), state.phi.shape)
    return float(state.weights @ field)


def h_potential(state: ReducedMetricState) -> np.ndarray:
    """Ricci potential: Ric - omega = i ddbar h, int (e^h - 1) omega^n = 0."""
    base = -state.log_vol_ratio - state.phi
    # e^h omega_phi^n = e^{C - phi} omega_ref^n
    lw = np.log(state.grid.ref_measure)
    a = lw - state.phi
    m = a.max()
    log_int = m + np.log(np.exp(a - m).sum())
    const = np.log(state.volume) - log_int
    if not np.isfinite(const):
        raise NumericalError("normalization of the Ricci potential failed")
    return base + const


def h_residual(state: ReducedMetricState, h=None) -> float:
    """max |i ddbar h - Ric + omega| in eigenvalues of omega_phi."""
    if h is None:
        h = h_potential(state)
    a = state.ddbar(h) - state.ricci + state.omega
    res = np.abs(a.rad / (1.0 + state.q))
    if state.n > 1:
        res = np.maximum(res, np.abs(a.tan / (1.0 + state.p)))
    return float(res.max())


# ---------------------------------------------------------------------------
# spectrum

@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, M-orthonormal


def laplacian_spectrum(state: ReducedMetricState, count: int = 3, return_vectors: bool = False):
    """Lowest nonzero eigenvalues of -Laplacian on invariant functions.

    Discretized as the symmetric pencil (K, M) with
    K = D^T diag(w |dxi|^2-weight) D from int |df|^2 omega^n and
    M = diag(w) from int f^2 omega^n.
    """
    N = state.grid.n_points
    if count > N // 4:
        raise ConfigurationError("count must be at most n_points/4")
    g = state.grid
    n = state.n
    stiff = g.ref_measure * 2.0 * g.rho * (1.0 + state.p) ** (n - 1) / (n + 1)
    K = g.D.T @ (stiff[:, None] * g.D)
    K = 0.5 * (K + K.T)
    M = state.weights
    try:
        # symmetric scaling keeps the pencil well conditioned
        sm = 1.0 / np.sqrt(M)
        A = sm[:, None] * K * sm[None, :]
        vals, vecs = scipy.linalg.eigh(A, subset_by_index=[0, count])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    vecs = sm[:, None] * vecs
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # drop the constant mode
    vals, vecs = vals[1:], vecs[:, 1:]
    if return_vectors:
        return Spectrum(vals, vecs)
    return vals


def random_potential(grid: ReducedGrid, rng: np.random.Generator, amplitude: float = 0.2, modes: int = 5,
                     parity=None) -> np.ndarray:
    """Smooth random potential made of low Chebyshev modes, shrunk until positive.

    ``parity`` = "even" keeps only even modes in xi (orthogonal to the
    dilation eigenfunctions on the round CP1).
    """
    k = np.arange(1, modes + 1)
    coef = rng.normal(size=modes) / k**1.5
    if parity == "even":
        coef[k % 2 == 1] = 0.0
    elif parity == "odd":
        coef[k % 2 == 0] = 0.0
    coef *= amplitude / max(np.abs(coef).sum(), 1e-300)
    phi = np.polynomial.chebyshev.chebval(grid.xi, np.r_[0.0, coef])
    base = ReducedMetricState(grid, np.zeros(grid.n_points))
    for _ in range(60):
        st = ReducedMetricState(grid, phi)
        if st.is_positive() and np.min(1 + st.q) > 0.2 and (grid.n == 1 or np.min(1 + st.p) > 0.2):
            return phi
        phi = 0.5 * phi
    return np.zeros_like(phi) + 0.0 * base.phi
