"""Kahler-Ricci flow on radial potentials, with monitors and post-processing.

The flow is d phi/dt = log(omega_phi^n/omega^n) + phi - h_omega, where omega
is the initial metric.  The unknown is split as phi = w + kappa with w
mean-free with respect to omega_phi^n at all times:

    f     = log(omega_phi^n/omega^n) + w - h_omega
    m     = (1/V) int f omega_phi^n
    w'    = f - m
    kappa' = kappa + m

so c(t) = (1/V) int phidot omega_phi^n = kappa + m.  Shifting kappa(0) by a
changes c(t) by a e^t and leaves the metric path untouched.
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.integrate
import scipy.optimize
from numpy.polynomial import legendre

from .functionals import e_k_flow_derivative, functional_ledger, i_functional
from .geometry import (
    ConfigurationError,
    MANIFOLDS,
    NumericalError,
    ReducedGrid,
    ReducedMetricState,
    build_reference,
    curvature,
    h_potential,
    metric_from_potential,
    mixed_power_density,
)
from .invariants import dilate_potential, holomorphic_potential, reference_dilation_potential


class FlowBlowupError(NumericalError):
    """Step size underflow or loss of positivity that could not be repaired."""


INTEGRATORS = ("semi-implicit", "rk4")
C_MODES = ("raw", "tail-integral")
FAMILIES = ("zero", "bump", "mode", "random", "dilation")
MONITOR_SETS = ("all", "basic")
SAMPLE_CHOP = 1e-13


def trace_columns(n: int):
    return (["t", "c", "eps", "mu", "mu_1", "mu_2", "R_max", "R_min", "min_bisec", "J", "F", "nu"]
            + [f"E_{k}" for k in range(n + 1)]
            + ["I", "ImJ", "harnack_margin", "rr2_accum"])


@dataclass
class FlowConfig:
    manifold: str = "CP1"
    n_points: int = 256
    L: float = 12.0
    dt: float = 0.02          # sampling interval of the trace
    t_end: float = 10.0
    integrator: str = "semi-implicit"
    init_family: str = "mode"
    init_amplitude: float = 0.2
    init_mode: int = 2
    monitors: str = "all"
    normalize_c: str = "tail-integral"
    seed: int = 0
    rtol: float = 1e-10
    atol: float = 1e-12
    dt_min: float = 1e-9
    dt_max: float = 0.25

    def validate(self):
        if self.manifold not in MANIFOLDS:
            raise ConfigurationError(f"manifold: expected one of {sorted(MANIFOLDS)}, got {self.manifold!r}")
        if int(self.n_points) != self.n_points or self.n_points < 64:
            raise ConfigurationError("n_points: must be an integer >= 64")
        if not self.L >= 10:
            raise ConfigurationError("L: must be >= 10")
        if not self.dt > 0 or not math.isfinite(self.dt):
            raise ConfigurationError(f"dt: must be positive, got {self.dt}")
        if not self.t_end > 0 or not math.isfinite(self.t_end):
            raise ConfigurationError(f"t_end: must be positive, got {self.t_end}")
        if self.dt > self.t_end:
            raise ConfigurationError("dt: larger than t_end")
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError(f"integrator: expected one of {INTEGRATORS}, got {self.integrator!r}")
        if self.init_family not in FAMILIES:
            raise ConfigurationError(f"init.family: expected one of {FAMILIES}, got {self.init_family!r}")
        if not math.isfinite(self.init_amplitude):
            raise ConfigurationError("init.amplitude: not finite")
        if self.init_mode < 0:
            raise ConfigurationError("init.mode: must be >= 0")
        if self.monitors not in MONITOR_SETS:
            raise ConfigurationError(f"monitors: expected one of {MONITOR_SETS}, got {self.monitors!r}")
        if self.normalize_c not in C_MODES:
            raise ConfigurationError(f"normalize_c: expected one of {C_MODES}, got {self.normalize_c!r}")
        if not 0 < self.dt_min <= self.dt_max:
            raise ConfigurationError("dt_min/dt_max: need 0 < dt_min <= dt_max")
        return self

    @property
    def n(self) -> int:
        return MANIFOLDS[self.manifold]


# ---------------------------------------------------------------------------
# initial data

def metric_amplitude(grid: ReducedGrid, phi) -> float:
    """sup of |omega_phi/omega_ref - 1| over both eigenvalues."""
    st = ReducedMetricState(grid, phi)
    amp = np.abs(st.q).max()
    if grid.n > 1:
        amp = max(amp, np.abs(st.p).max())
    return float(amp)


def initial_potential(config: FlowConfig, grid: ReducedGrid) -> np.ndarray:
    """Initial potential relative to the Kahler-Einstein reference.

    For the bump, mode and random families the amplitude is the size of the
    metric deformation, sup |omega_phi/omega_ref - 1|, and the potential is
    mean-free against omega_ref^n.  For the dilation family it is the shift a
    in s -> s + a.
    """
    fam, amp = config.init_family, float(config.init_amplitude)
    xi = grid.xi
    mu0 = grid.ref_measure
    if fam == "zero":
        return np.zeros(grid.n_points)
    if fam == "dilation":
        return reference_dilation_potential(grid, amp)
    if fam == "bump":
        b = (1.0 - xi**2) ** 2
    elif fam == "mode":
        # Legendre modes are the invariant eigenfunctions on the round CP1
        b = legendre.legval(xi, np.eye(config.init_mode + 1)[config.init_mode])
    else:
        rng = np.random.default_rng(config.seed)
        k = np.arange(1, max(config.init_mode, 2) + 1)
        b = np.polynomial.chebyshev.chebval(xi, np.r_[0.0, rng.normal(size=k.size) / k**2])
    b = b - float(mu0 @ b) / mu0.sum()
    scale = metric_amplitude(grid, b)
    return amp * b / scale if scale > 0 else b


# ---------------------------------------------------------------------------

class FlowSystem:
    """Right-hand side and Jacobian of the (w, kappa) system."""

    def __init__(self, initial: ReducedMetricState):
        self.initial = initial
        self.grid = initial.grid
        self.n = initial.n
        self.base = np.array(initial.phi)
        # h_omega = -log(omega^n/omega_ref^n) - phi_init + C
        self.h_const = float(h_potential(initial)[0] + initial.log_vol_ratio[0] + self.base[0])
        self.nfev = 0
        self.njev = 0

    def state(self, w) -> ReducedMetricState:
        return ReducedMetricState(self.grid, self.base + w)

    def f_of(self, st: ReducedMetricState, w) -> np.ndarray:
        return st.log_vol_ratio + self.base + w - self.h_const

    def split(self, y):
        return y[:-1], y[-1]

    def filtered(self, w, tol: float = SAMPLE_CHOP) -> np.ndarray:
        """w with Chebyshev modes below tol * (potential scale) removed.

        Applied to recorded samples only.  Integrator output carries
        grid-scale content well below its tolerance, and R takes four
        derivatives, which magnifies mode k by up to ~k^8 at the poles.
        """
        g = self.grid
        scale = np.abs(g.coeffs(self.base + w)).max()
        c = g.coeffs(w)
        c[np.abs(c) < tol * scale] = 0.0
        return g.values(c)

    def rhs(self, t, y):
        self.nfev += 1
        w, kappa = self.split(y)
        st = self.state(w)
        if not st.is_positive():
            return np.full_like(y, np.nan)
        f = self.f_of(st, w)
        m = float(st.weights @ f) / st.volume
        return np.append(f - m, kappa + m)

    def jacobian(self, t, y):
        self.njev += 1
        g = self.grid
        w, _ = self.split(y)
        st = self.state(w)
        n = self.n
        D = g.D
        dq = (2.0 / (n + 1)) * g.rad_operator
        Jf = dq / (1.0 + st.q)[:, None]
        if n > 1:
            dp = (g.one_minus / (n + 1))[:, None] * D
            Jf += (n - 1) * dp / (1.0 + st.p)[:, None]
        Jf[np.diag_indices_from(Jf)] += 1.0
        row = (st.weights @ Jf) / st.volume
        N = g.n_points
        J = np.zeros((N + 1, N + 1))
        J[:N, :N] = Jf - row[None, :]
        J[N, :N] = row
        J[N, N] = 1.0
        return J


def _rk4(fun, t, y, h):
    k1 = fun(t, y)
    k2 = fun(t + h / 2, y + h / 2 * k1)
    k3 = fun(t + h / 2, y + h / 2 * k2)
    k4 = fun(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _advance_rk4(system: FlowSystem, t0, y0, t1, h, rtol, atol, dt_min, dt_max):
    """Adaptive RK4 with step doubling; rejects steps that lose positivity."""
    t, y = t0, y0.copy()
    h = min(h, dt_max, t1 - t0)
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        h = min(h, t1 - t)
        if h < dt_min:
            raise FlowBlowupError(f"step size underflow at t = {t:.6g} (h = {h:.3g})")
        full = _rk4(system.rhs, t, y, h)
        half = _rk4(system.rhs, t + h / 2, _rk4(system.rhs, t, y, h / 2), h / 2)
        if not (np.all(np.isfinite(full)) and np.all(np.isfinite(half))):
            h *= 0.5
            continue
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(half))
        err = float(np.max(np.abs(half - full) / scale)) / 15.0
        if err <= 1.0:
            t, y = t + h, half + (half - full) / 15.0
            h *= min(4.0, 0.9 * max(err, 1e-10) ** -0.2)
            h = min(h, dt_max)
        else:
            h *= max(0.1, 0.9 * err**-0.2)
    return y, h


def _advance_implicit(system: FlowSystem, t0, y0, t1, h, rtol, atol, dt_min, dt_max):
    solver = scipy.integrate.Radau(system.rhs, t0, y0, t1, rtol=rtol, atol=atol, jac=system.jacobian,
                                   first_step=min(h, t1 - t0), max_step=dt_max)
    last = h
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise FlowBlowupError(f"implicit integrator failed near t = {solver.t:.6g}: {msg}")
        if solver.step_size is not None and solver.t < t1:
            last = solver.step_size
        if solver.step_size is not None and solver.step_size < dt_min and solver.t < t1:
            raise FlowBlowupError(f"step size underflow at t = {solver.t:.6g}")
    return solver.y.copy(), max(last, dt_min)


_ADVANCE = {"semi-implicit": _advance_implicit, "rk4": _advance_rk4}


def flow_step(state: ReducedMetricState, dt: float, integrator: str = "semi-implicit",
              initial: ReducedMetricState | None = None, rtol: float = 1e-10, atol: float = 1e-12):
    """Advance the flow from ``state`` by ``dt``.

    ``initial`` fixes the background metric omega of the potential equation
    (defaults to ``state`` itself, i.e. phi(0) = 0).  Returns the new state.
    """
    if not dt > 0:
        raise ConfigurationError("dt: must be positive")
    if integrator not in _ADVANCE:
        raise ConfigurationError(f"integrator: expected one of {INTEGRATORS}")
    system = FlowSystem(initial if initial is not None else state)
    w0 = np.asarray(state.phi) - system.base
    y0 = np.append(w0, 0.0)
    y, _ = _ADVANCE[integrator](system, 0.0, y0, dt, min(dt, 1e-3), rtol, atol, 1e-12, dt)
    w, kappa = system.split(y)
    return metric_from_potential(ReducedMetricState(state.grid, np.zeros_like(w)), system.base + w + kappa)


# ---------------------------------------------------------------------------

@dataclass
class FlowTrace:
    config: FlowConfig
    initial: ReducedMetricState
    times: np.ndarray
    columns: dict
    w: np.ndarray                 # samples x N, mean-free part of phi
    kappa: np.ndarray             # raw constant part
    R_fields: np.ndarray
    c_raw: np.ndarray
    dEdt: np.ndarray              # samples x (n+1), formula values
    energy_integrand: np.ndarray  # samples x (n+1)
    rr2_integrand: np.ndarray
    r_avg: np.ndarray
    harnack_S_min: np.ndarray
    evolution_residual: np.ndarray
    bisectional_positive: np.ndarray
    sandwich_ok: np.ndarray
    c_shift: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.initial.n

    @property
    def phi(self) -> np.ndarray:
        """phi(t) relative to the initial metric, including the c-normalization shift."""
        return self.w + (self.kappa + self.c_shift * np.exp(self.times))[:, None]

    def state_at(self, j: int) -> ReducedMetricState:
        return ReducedMetricState(self.initial.grid, self.initial.phi + self.w[j])

    def column(self, name) -> np.ndarray:
        return self.columns[name]

    def rows(self):
        names = trace_columns(self.n)
        data = np.column_stack([self.columns[k] for k in names])
        return names, data


def energy_integrand_mixed(st: ReducedMetricState, ric, diff, k: int, mu0=None) -> float:
    """(k+1)/V int (R - r) Ric^k ^ omega^(n-k), evaluated through mixed wedge densities."""
    n = st.n
    mu0 = st.grid.ref_measure if mu0 is None else mu0
    dens = mixed_power_density([(ric, k), (st.omega, n - k)], n)
    return (k + 1) / st.volume * float(mu0 @ (diff * dens))


def _monitor_sample(system: FlowSystem, y, t, full: bool):
    n = system.n
    w, kappa = system.split(y)
    w = system.filtered(w)
    st = system.state(w)
    bad = st.positivity_violation()
    if bad is not None:
        raise FlowBlowupError(f"metric lost positivity at t = {t:.6g}, grid index {bad}")
    V = st.volume
    f = system.f_of(st, w)
    m = float(st.weights @ f) / V
    fm = f - m
    cf = curvature(st)
    R = cf.R
    r = float(st.weights @ R) / V
    out = {
        "t": t,
        "c": kappa + m,
        "eps": float(st.weights @ st.grad_sq(f)) / V,
        "mu": float(st.weights @ fm**2),
        "R_max": float(R.max()),
        "R_min": float(R.min()),
        "min_bisec": cf.min_bisectional,
    }
    out["mu_1"] = out["eps"] * V
    dd = st.ddbar(f)
    hess = (dd.rad / (1.0 + st.q)) ** 2
    if n > 1:
        hess = hess + (n - 1) * (dd.tan / (1.0 + st.p)) ** 2
    out["mu_2"] = float(st.weights @ hess)
    extra = {"w": w, "R": R, "r": r, "kappa": kappa, "m": m, "bisec_ok": cf.min_bisectional > 0}
    extra["rr2"] = float(st.weights @ (R - n) ** 2)
    mu0 = system.grid.ref_measure
    ric = st.ricci
    diff = R - r
    ei = [energy_integrand_mixed(st, ric, diff, k, mu0) for k in range(n + 1)]
    # k = 1 is (2/(nV)) int (R - r)^2; the squared form has no cancellation at late times
    ei[1] = 2.0 / (n * V) * float(st.weights @ diff ** 2)
    extra["energy_integrand"] = np.array(ei)
    phidot = f + kappa
    extra["dEdt"] = np.array([e_k_flow_derivative(system.initial, st, phidot, k) for k in range(n + 1)])
    if full:
        led = functional_ledger(system.initial, w)
        out.update(J=led.J, F=led.F, nu=led.nu, I=led.I, ImJ=led.I_minus_J)
        for k in range(n + 1):
            out[f"E_{k}"] = led.E_k[k]
        extra["sandwich_ok"] = all(led.flags[key] for key in ("J_nonnegative", "I_nonnegative",
                                                               "I_minus_J_le_I", "I_le_n1_I_minus_J"))
        # directional derivative of R along the flow velocity
        # step sized by the metric perturbation it causes
        size = float(max(np.abs(dd.rad).max(), np.abs(dd.tan).max()))
        if size > 0:
            e = 1e-5 / size
            Rp = curvature(system.state(w + e * fm)).R
            Rm = curvature(system.state(w - e * fm)).R
            Rt = (Rp - Rm) / (2 * e)
        else:
            Rt = np.zeros_like(R)
        grad = st.grad_sq(R)
        extra["evo"] = float(np.abs(Rt - (st.laplacian(R) + cf.ric_norm_sq - R)).max())
        # (1 - e^-t) times the trace Harnack quantity; finite at t = 0
        fac = -math.expm1(-t)
        extra["harnack_scaled"] = float((fac * (Rt - grad / R) + R).min())
        extra["harnack_S"] = float((Rt - grad / R + R / fac).min()) if t > 0 else math.inf
    else:
        for key in ("J", "F", "nu", "I", "ImJ"):
            out[key] = math.nan
        for k in range(n + 1):
            out[f"E_{k}"] = math.nan
        extra.update(sandwich_ok=True, evo=math.nan, harnack_scaled=math.nan, harnack_S=math.nan)
    return out, extra


def sample_times(t_end: float, dt: float) -> np.ndarray:
    m = int(round(t_end / dt))
    if abs(m * dt - t_end) > 1e-9 * max(1.0, t_end):
        m = int(math.floor(t_end / dt))
    return dt * np.arange(m + 1)


def run_flow(config: FlowConfig, initial_phi=None, progress=None) -> FlowTrace:
    """Integrate the flow and record every monitor at the sample times."""
    config.validate()
    ref = build_reference(config.manifold, config.n_points, config.L)
    phi0 = initial_potential(config, ref.grid) if initial_phi is None else np.asarray(initial_phi, float)
    initial = metric_from_potential(ref, phi0)
    system = FlowSystem(initial)
    times = sample_times(config.t_end, config.dt)
    full = config.monitors == "all"
    advance = _ADVANCE[config.integrator]
    N = ref.grid.n_points
    y = np.zeros(N + 1)
    h = min(config.dt, 1e-3)
    rows, extras, ws = [], [], []
    t0 = _time.perf_counter()
    for j, t in enumerate(times):
        if j > 0:
            y, h = advance(system, times[j - 1], y, t, h, config.rtol, config.atol, config.dt_min, config.dt_max)
        out, ex = _monitor_sample(system, y, float(t), full)
        rows.append(out)
        extras.append(ex)
        ws.append(ex["w"])
        if progress is not None:
            progress(j, len(times))
    names = trace_columns(ref.n)
    columns = {k: np.array([r.get(k, math.nan) for r in rows], dtype=float) for k in names if k != "harnack_margin"}
    columns["harnack_margin"] = np.array([e["harnack_scaled"] for e in extras])
    rr2 = np.array([e["rr2"] for e in extras])
    columns["rr2_accum"] = np.concatenate([[0.0], scipy.integrate.cumulative_trapezoid(rr2, times)])
    trace = FlowTrace(
        config=config,
        initial=initial,
        times=times,
        columns=columns,
        w=np.array(ws),
        kappa=np.array([e["kappa"] for e in extras]),
        R_fields=np.array([e["R"] for e in extras]),
        c_raw=columns["c"].copy(),
        dEdt=np.array([e["dEdt"] for e in extras]),
        energy_integrand=np.array([e["energy_integrand"] for e in extras]),
        rr2_integrand=rr2,
        r_avg=np.array([e["r"] for e in extras]),
        harnack_S_min=np.array([e["harnack_S"] for e in extras]),
        evolution_residual=np.array([e["evo"] for e in extras]),
        bisectional_positive=np.array([e["bisec_ok"] for e in extras]),
        sandwich_ok=np.array([e["sandwich_ok"] for e in extras]),
    )
    trace.stats.update(wall_time=_time.perf_counter() - t0, nfev=system.nfev, njev=system.njev)
    if config.normalize_c == "tail-integral":
        trace, _ = normalize_initial_c(trace)
    return trace


# ---------------------------------------------------------------------------
# post-processing

def _log_fit(t, v):
    A = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(A, np.log(v), rcond=None)
    return -float(coef[1])


def normalize_initial_c(trace: FlowTrace, tail_fraction: float = 0.1):
    """Shift phi(0) by a constant so that c(t) = int_t^inf eps(tau) e^{-(tau-t)} dtau.

    The integral is taken on the recorded eps with Simpson's rule; beyond
    t_end eps is continued exponentially with the rate fitted on the last
    ``tail_fraction`` of the run.  Returns (trace, a); the trace's c column
    holds the normalized values and c_raw the unshifted ones.
    """
    t = trace.times
    eps = trace.columns["eps"]
    if t.size < 5:
        raise NumericalError("run too short to extrapolate eps beyond t_end")
    tail = t >= t[-1] - tail_fraction * (t[-1] - t[0])
    if np.all(eps[tail] <= 0):
        beta = math.inf
    else:
        if np.any(eps[tail] <= 0) or tail.sum() < 3:
            raise NumericalError("cannot fit the eps tail: non-positive samples")
        beta = _log_fit(t[tail], eps[tail])
        if not beta > 0:
            raise NumericalError("eps is not decaying at t_end; run longer before normalizing c")
    g = eps * np.exp(-(t - t[-1]))
    # integral of g from t_j to t_end, accumulated from the end
    rev = scipy.integrate.cumulative_simpson(g[::-1], x=-t[::-1], initial=0.0)[::-1]
    tail_val = 0.0 if math.isinf(beta) else eps[-1] / (1.0 + beta)
    c_norm = np.exp(t - t[-1]) * (rev + tail_val)
    a = float(c_norm[0] - trace.c_raw[0])
    new = replace(trace, columns=dict(trace.columns), stats=dict(trace.stats))
    new.columns["c"] = c_norm
    new.c_shift = a
    early = t <= min(1.0, t[-1])
    scale = max(abs(c_norm[0]), abs(trace.c_raw[0]), 1e-300)
    if np.all(eps == 0):
        scale = 1.0
    new.stats["c_identity_residual"] = float(np.abs(trace.c_raw[early] + a * np.exp(t[early]) - c_norm[early]).max() / scale)
    new.stats["eps_tail_rate"] = beta
    return new, a


def fit_decay_rate(trace: FlowTrace, window=None, floor: float = 1e-26):
    """Least-squares exponential rates of mu, c and mu_l over ``window``.

    Default window: from the first time with sup|R - r| < 1e-2 to t_end.
    Samples at or below ``floor`` are discarded.
    """
    t = trace.times
    if window is None:
        dev = np.abs(trace.R_fields - trace.r_avg[:, None]).max(axis=1)
        ok = np.flatnonzero(dev < 1e-2)
        if ok.size == 0:
            raise NumericalError("trace has not converged; no fitting window")
        window = (t[ok[0]], t[-1])
    lo, hi = window
    if not hi > lo:
        raise ConfigurationError("window: empty")
    sel = (t >= lo) & (t <= hi)
    out = {}
    for key, name in (("mu", "alpha_mu"), ("c", "alpha_c"), ("mu_1", "alpha_mu_1"), ("mu_2", "alpha_mu_2")):
        v = trace.columns[key][sel]
        tt = t[sel]
        keep = v > floor
        if keep.sum() < 5 or (tt[keep][-1] - tt[keep][0]) < 0.5:
            if key == "mu":
                raise NumericalError("window too short or mu not positive")
            out[name] = math.nan
            continue
        out[name] = _log_fit(tt[keep], v[keep])
    out["window"] = (float(lo), float(hi))
    return out


def accumulate_energy_identity(trace: FlowTrace, k: int, T=None):
    """(lhs, rhs) with lhs = ((k+1)/V) int_0^T int (R - r) Ric^k ^ omega_phi^(n-k) dt
    and rhs = E_k(0) - E_k(T); the time integral uses Simpson's rule."""
    if not 0 <= k <= trace.n:
        raise ValueError("k out of range")
    t = trace.times
    j = len(t) - 1 if T is None else int(np.searchsorted(t, T - 1e-12))
    if j == 0:
        return 0.0, 0.0
    lhs = float(scipy.integrate.simpson(trace.energy_integrand[: j + 1, k], x=t[: j + 1]))
    E = trace.columns[f"E_{k}"]
    return lhs, float(E[0] - E[j])


def rr2_slices(trace: FlowTrace, t_start: float = 5.0):
    """int_T^{T+1} int (R - r)^2 omega_phi^n dt for integer T >= t_start."""
    t = trace.times
    out = []
    T = t_start
    while T + 1 <= t[-1] + 1e-9:
        sel = (t >= T - 1e-9) & (t <= T + 1 + 1e-9)
        out.append((T, float(scipy.integrate.simpson(trace.rr2_integrand[sel], x=t[sel]))))
        T += 1
    return out


def monotonicity_violations(trace: FlowTrace, slack: float = 1e-8):
    names = ["F", "nu", "E_0", "E_1"]
    res = {}
    for name in names:
        v = trace.columns[name]
        res[name] = int(np.sum(np.diff(v) > slack))
    return res


def energy_derivative_check(trace: FlowTrace, rel_floor: float = 1e-6, abs_floor: float = 1e-10):
    """Worst relative error between the dE_k/dt formula and 5-point differences of E_k.

    Samples with |dE_k/dt| below max(abs_floor, rel_floor * max|dE_k/dt|) are
    skipped: there the difference quotient is dominated by roundoff in E_k.
    """
    t = trace.times
    h = np.diff(t)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ValueError("non-uniform sampling")
    h = h[0]
    worst = np.zeros(trace.n + 1)
    checked = np.zeros(trace.n + 1, dtype=int)
    for k in range(trace.n + 1):
        E = trace.columns[f"E_{k}"]
        fd = (E[:-4] - 8 * E[1:-3] + 8 * E[3:-1] - E[4:]) / (12 * h)
        ex = trace.dEdt[2:-2, k]
        floor = max(abs_floor, rel_floor * np.abs(trace.dEdt[:, k]).max())
        sel = np.abs(ex) > floor
        checked[k] = int(sel.sum())
        if sel.any():
            worst[k] = float(np.max(np.abs(fd[sel] - ex[sel]) / np.abs(ex[sel])))
    return worst, checked


def rmax_doubling_violations(trace: FlowTrace) -> int:
    t = trace.times
    Rmax = trace.columns["R_max"]
    bad = 0
    for j in range(len(t)):
        sel = (t >= t[j]) & (t <= t[j] + 1.0 / (2.0 * Rmax[j]))
        bad += int(np.sum(Rmax[sel] > 2.0 * Rmax[j]))
    return bad


def evolution_residual_time_fd(trace: FlowTrace) -> np.ndarray:
    """max_x |dR/dt - (Lap R + |Ric|^2 - R)| with dR/dt from 5-point time differences."""
    t = trace.times
    h = t[1] - t[0]
    R = trace.R_fields
    out = []
    for j in range(2, len(t) - 2):
        Rt = (R[j - 2] - 8 * R[j - 1] + 8 * R[j + 1] - R[j + 2]) / (12 * h)
        st = trace.state_at(j)
        cf = curvature(st)
        out.append(float(np.abs(Rt - (st.laplacian(cf.R) + cf.ric_norm_sq - cf.R)).max()))
    return np.array(out)


# ---------------------------------------------------------------------------
# Harnack inequality

def radial_distance_coordinate(state: ReducedMetricState) -> np.ndarray:
    """Arc length along the radial geodesic, from the z = 0 pole, for the metric u'' ds^2.

    In the angle theta with xi = -cos(theta), the element is
    sqrt((n+1)(1+q)) dtheta; the integrand is expanded in cos(k theta) and
    integrated term by term.
    """
    g = state.grid
    n = state.n
    dens = np.sqrt((n + 1) * (1.0 + state.q))
    c = g.coeffs(dens)
    k = np.arange(len(c))
    sign = (-1.0) ** k
    th = np.arccos(np.clip(-g.xi, -1.0, 1.0))
    out = c[0] * th
    kk = k[1:]
    out = out + (np.sin(np.outer(th, kk)) * (sign[1:] * c[1:] / kk)).sum(axis=1)
    return out


def _dp_distance(sigmas, times, start, goal):
    """Upper bound for the space-time action int |gamma'|^2 dt between (start, t_a) and (goal, t_b).

    ``sigmas[j]`` are arc-length coordinates of the node set at times[j].  A
    move i -> k between consecutive times costs
    max(|sigma_j(i) - sigma_j(k)|, |sigma_{j+1}(i) - sigma_{j+1}(k)|)^2 / dt.
    """
    m = sigmas.shape[1]
    cost = np.full(m, np.inf)
    cost[start] = 0.0
    for j in range(len(times) - 1):
        dt = times[j + 1] - times[j]
        d0 = np.abs(sigmas[j][:, None] - sigmas[j][None, :])
        d1 = np.abs(sigmas[j + 1][:, None] - sigmas[j + 1][None, :])
        step = np.maximum(d0, d1) ** 2 / dt
        cost = np.min(cost[:, None] + step, axis=0)
    return float(cost[goal])


def harnack_margin(R1, R2, t1, t2, delta):
    """((e^{t2}-1)/(e^{t1}-1)) e^{delta/4} R(y,t2) - R(x,t1)."""
    if not t1 > 0:
        raise ConfigurationError("Harnack pairs need t1 > 0")
    if t2 < t1:
        raise ConfigurationError("Harnack pairs need t1 <= t2")
    return math.expm1(t2) / math.expm1(t1) * math.exp(delta / 4.0) * R2 - R1


def harnack_check(trace: FlowTrace, sample_pairs: int = 100, seed: int = 0, levels: int = 3,
                  t_min: float = 0.05, max_time_nodes: int = 400):
    """Sample space-time pairs and return the worst margin and the pair records.

    Nodes: every space node set is a sub-sample of the grid with 8 * 2^l points,
    l < levels; the reported distance is the smallest DP value over the
    levels (each one is an upper bound).
    """
    rng = np.random.default_rng(seed)
    t = trace.times
    cand = np.flatnonzero(t >= t_min)
    if cand.size < 2:
        raise ConfigurationError("trace has no samples after t_min")
    N = trace.initial.grid.n_points
    stride = max(1, int(math.ceil(cand.size / max_time_nodes)))
    tnodes = cand[::stride]
    if tnodes[-1] != cand[-1]:
        tnodes = np.append(tnodes, cand[-1])
    sig_full = np.array([radial_distance_coordinate(trace.state_at(j)) for j in tnodes])
    m_fine = 8 * 2 ** (levels - 1)
    fine = np.unique(np.linspace(0, N - 1, m_fine).round().astype(int))
    records = []
    for _ in range(sample_pairs):
        a, b = np.sort(rng.choice(tnodes.size, size=2, replace=True))
        ix, iy = rng.choice(fine, size=2, replace=True)
        ja, jb = tnodes[a], tnodes[b]
        best = math.inf
        for lvl in range(levels):
            m = 8 * 2**lvl
            nodes = np.unique(np.concatenate([np.linspace(0, N - 1, m).round().astype(int), [ix, iy]]))
            sl = sig_full[a: b + 1][:, nodes]
            s = int(np.flatnonzero(nodes == ix)[0])
            g = int(np.flatnonzero(nodes == iy)[0])
            if a == b:
                d = 0.0 if ix == iy else math.inf
            else:
                d = _dp_distance(sl, t[tnodes[a: b + 1]], s, g)
            best = min(best, d)
        R1 = trace.R_fields[ja, ix]
        R2 = trace.R_fields[jb, iy]
        margin = harnack_margin(R1, R2, t[ja], t[jb], best) if math.isfinite(best) else math.inf
        records.append({"x": int(ix), "t1": float(t[ja]), "y": int(iy), "t2": float(t[jb]),
                        "delta": best, "margin": margin})
    worst = min(r["margin"] for r in records)
    violations = sum(1 for r in records if r["margin"] < -1e-8)
    return worst, violations, records


def harnack_trace_positive(trace: FlowTrace, t_min: float = 0.05):
    sel = trace.times > t_min
    vals = trace.harnack_S_min[sel]
    return bool(np.all(vals > 0)), float(vals.min()) if vals.size else math.inf


# ---------------------------------------------------------------------------
# centring by dilations

@dataclass
class AutomorphismResult:
    lam: float
    a: float
    psi: float
    normalized_phi: np.ndarray
    residual: float
    dpsi_da: float


def _psi(state: ReducedMetricState, a: float) -> float:
    """(I - J)(omega_phi, sigma_a^* omega_KE)."""
    rho = reference_dilation_potential(state.grid, a)
    _, imj = i_functional(state, rho - state.phi)
    return imj


def central_residual(state: ReducedMetricState, a: float) -> float:
    """int (phi - rho_a) theta_a omega_rho^n with theta_a the dilation potential of omega_rho."""
    rho = ReducedMetricState(state.grid, reference_dilation_potential(state.grid, a))
    theta = holomorphic_potential(rho).theta_samples
    return float(rho.weights @ ((state.phi - rho.phi) * theta))


def normalize_by_automorphism(state: ReducedMetricState, tol: float = 1e-12, bracket=(-3.0, 3.0)):
    """Minimize Psi over dilations z -> lam z (log lam in ``bracket``).

    Golden section on log lam, then Newton steps on the central residual,
    which is -V dPsi/da.  Returns an AutomorphismResult whose
    normalized_phi is the potential of the pulled-back metric (relative to
    the Kahler-Einstein reference).
    """
    lo, hi = 2.0 * bracket[0], 2.0 * bracket[1]
    try:
        res = scipy.optimize.minimize_scalar(lambda a: _psi(state, a), bounds=(lo, hi), method="bounded",
                                             options={"xatol": 1e-7})
    except (ValueError, FloatingPointError) as exc:
        raise NumericalError(f"dilation search failed: {exc}") from exc
    a = float(res.x)
    if min(a - lo, hi - a) < 1e-4:
        raise NumericalError("dilation minimizer sits on the bracket boundary")
    for _ in range(20):
        r = central_residual(state, a)
        da = 1e-5
        dr = (central_residual(state, a + da) - central_residual(state, a - da)) / (2 * da)
        if dr == 0:
            break
        step = r / dr
        a -= step
        if abs(step) < tol:
            break
    resid = central_residual(state, a)
    e = 1e-4
    dpsi = (_psi(state, a + e) - _psi(state, a - e)) / (2 * e)
    back = dilate_potential(state, -a)
    return AutomorphismResult(lam=math.exp(a / 2.0), a=a, psi=_psi(state, a), normalized_phi=back,
                              residual=resid, dpsi_da=dpsi)
