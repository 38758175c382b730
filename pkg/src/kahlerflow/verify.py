"""Property suites behind ``kahlerflow verify``.

Every property returns (passed, detail).  Mutations patch one coefficient
or formula so that at least one property must fail; they exist to show the
suites can fail.
"""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from unittest import mock

import numpy as np

from . import algebra, functionals, geometry, invariants
from . import flow as flowmod


@dataclass
class Outcome:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float


# ---------------------------------------------------------------------------
# algebra

def prop_sigma_expansion(rng, trials=1000):
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 5))
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        A = 0.5 * (A + A.conj().T)
        lam = np.linalg.eigvalsh(A)
        sig = algebra.sigma_k(lam)
        t = rng.normal()
        lhs = np.linalg.det(np.eye(n) + t * A).real
        rhs = sum(sig[k] * t**k for k in range(n + 1))
        worst = max(worst, abs(lhs - rhs) / (1 + abs(lhs)))
    return worst < 1e-10, f"max rel err {worst:.2e} over {trials} trials"


def prop_poly_identity(rng, trials=1000):
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(1, 9))
        x, y = rng.uniform(-2, 2, size=2)
        lhs = algebra.poly_identity_lhs(x, y, k)
        rhs = (k + 1) * x**k
        worst = max(worst, abs(lhs - rhs) / (1 + abs(rhs)))
    return worst < 1e-10, f"max rel err {worst:.2e} over {trials} trials"


def prop_vandermonde(rng=None):
    worst_delta = worst_id = 0.0
    for n in range(1, 7):
        c, _ = algebra.vandermonde_inverse(n)
        V = algebra.vandermonde_matrix(n)
        worst_id = max(worst_id, np.abs(c @ V - np.eye(n + 1)).max())
        for i in range(1, n + 2):
            for k in range(1, n + 2):
                worst_delta = max(worst_delta, abs(algebra.lagrange_eval(c, i, k) - (i == k)))
    ok = worst_delta < 1e-10 and worst_id < 1e-9
    return ok, f"|f_i(k) - delta| {worst_delta:.2e}, |cV - I| {worst_id:.2e}"


def prop_polarization(rng, trials=1000):
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        T = algebra.random_kahler_tensor(n, rng)
        x = rng.normal(size=2 * n)
        y = rng.normal(size=2 * n)
        jx = algebra.J(x)
        y = y - (y @ jx) / (jx @ jx) * jx
        lhs = algebra.polarization_lhs(T, x, y)
        rhs = algebra.polarization_rhs(T, x, y)
        worst = max(worst, abs(lhs - rhs) / (1 + abs(lhs)))
    return worst < 1e-10, f"max rel err {worst:.2e} over {trials} trials"


def prop_conversion(rng, trials=100):
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 5))
        T = algebra.random_kahler_tensor(n, rng)
        w1, w2 = algebra.random_orthogonal_lines(n, rng)
        worst = max(worst, abs(algebra.sectional_from_bisectional(T, w1, w2) - T.sectional_real(w1, w2)))
        w1, w2 = algebra.random_same_line(n, rng)
        worst = max(worst, abs(algebra.sectional_from_bisectional(T, w1, w2) - T.sectional_real(w1, w2)))
    return worst < 1e-10, f"max err {worst:.2e} over {trials} tensors"


def prop_model_values(rng):
    worst = 0.0
    for n in (2, 3):
        T = algebra.constant_curvature_model(n)
        for _ in range(20):
            w1, w2 = algebra.random_orthogonal_lines(n, rng)
            worst = max(worst, abs(algebra.sectional_from_bisectional(T, w1, w2) - 0.5))
            w1, w2 = algebra.random_same_line(n, rng)
            worst = max(worst, abs(algebra.sectional_from_bisectional(T, w1, w2) - 2.0))
    return worst < 1e-12, f"max deviation from 1/2 and 2: {worst:.2e}"


def prop_sectional_bound(rng, trials=200):
    """Nonnegative bisectional curvature normalized to <= 1 gives K <= 2."""
    worst = -np.inf
    used = 0
    for _ in range(trials):
        n = int(rng.integers(2, 4))
        T = algebra.constant_curvature_model(n, 1.0) + algebra.random_kahler_tensor(n, rng).scaled(0.1)
        same = rng.random() < 0.3
        w1, w2 = algebra.random_same_line(n, rng) if same else algebra.random_orthogonal_lines(n, rng)
        u1 = algebra.complex_of(w1)
        u2 = -1j * algebra.complex_of(w2)
        A, B = (u1 + u2) / np.sqrt(2), (u1 - u2) / np.sqrt(2)
        pairs = [(u1, u1)] if same else [(u1, u1), (A, A), (B, B), (A, B)]
        if min(T.bisectional(a, b) for a, b in pairs) < 0:
            continue
        scale = algebra.max_normalized_bisectional(T, rng, samples=50, extra=pairs)
        K = algebra.sectional_from_bisectional(T.scaled(1.0 / scale), w1, w2)
        worst = max(worst, K)
        used += 1
    return used > 0 and worst <= 2 + 1e-12, f"max K {worst:.6f} over {used} planes"


# ---------------------------------------------------------------------------
# geometry

def prop_volume(rng=None):
    errs = {m: abs(geometry.build_reference(m, 512).volume - geometry.CHERN_VOLUME[m]) for m in ("CP1", "CP2")}
    return max(errs.values()) < 1e-8, ", ".join(f"{m}: {e:.1e}" for m, e in errs.items())


def prop_reference_curvature(rng=None):
    worst = 0.0
    for m in ("CP1", "CP2"):
        ref = geometry.build_reference(m, 256)
        worst = max(worst, np.abs(geometry.curvature(ref).R - ref.n).max(), geometry.h_residual(ref))
    return worst < 1e-10, f"max |R - n|, h residual {worst:.2e}"


def prop_spectrum(rng=None):
    ref = geometry.build_reference("CP1", 1024)
    ev = geometry.laplacian_spectrum(ref, 3)
    err = np.abs(ev - [1, 3, 6]).max()
    ref2 = geometry.build_reference("CP2", 512)
    lam1 = geometry.laplacian_spectrum(ref2, 1)[0]
    ok = err < 1e-3 and ev[0] >= 1 - 1e-6 and lam1 >= 1 - 1e-6
    return ok, f"CP1 {np.round(ev, 8).tolist()}, CP2 lambda_1 {lam1:.8f}"


def prop_h_residual(rng):
    worst = 0.0
    for m in ("CP1", "CP2"):
        ref = geometry.build_reference(m, 256)
        for _ in range(3):
            phi = geometry.random_potential(ref.grid, rng, 0.3)
            worst = max(worst, geometry.h_residual(geometry.metric_from_potential(ref, phi)))
    return worst < 1e-8, f"max residual {worst:.2e}"


# ---------------------------------------------------------------------------
# functionals

def _random_phis(ref, rng, count, amp=0.3):
    return [geometry.random_potential(ref.grid, rng, amp) for _ in range(count)]


def prop_jk_oracle(rng):
    worst = worst_last = 0.0
    for m in ("CP1", "CP2"):
        ref = geometry.build_reference(m, 128)
        n = ref.n
        for phi in _random_phis(ref, rng, 2):
            for k in range(n):
                a = functionals.j_k_energy(ref, phi, k)
                b = functionals.j_k_path_oracle(ref, phi, k, 64)
                worst = max(worst, abs(a - b))
            worst_last = max(worst_last, abs(functionals.j_k_energy(ref, phi, n - 1) - functionals.j_energy(ref, phi)))
    return worst < 1e-6 and worst_last < 1e-10, f"closed form vs path {worst:.2e}; J_(n-1) - J {worst_last:.2e}"


def prop_cocycle(rng, pairs=20):
    worst = 0.0
    for m in ("CP1", "CP2"):
        ref = geometry.build_reference(m, 96)
        for _ in range(pairs):
            phi, psi = _random_phis(ref, rng, 2, 0.2)
            mid = geometry.metric_from_potential(ref, phi)
            for k in range(ref.n + 1):
                lhs = functionals.e_k_normalized(ref, phi, k) + functionals.e_k_normalized(mid, psi - phi, k)
                worst = max(worst, abs(lhs - functionals.e_k_normalized(ref, psi, k)))
            for fn in (functionals.f_energy, functionals.k_energy):
                worst = max(worst, abs(fn(ref, phi) + fn(mid, psi - phi) - fn(ref, psi)))
    return worst < 1e-7, f"max residual {worst:.2e} over {pairs} pairs per manifold"


def prop_sandwich(rng):
    bad = 0
    for m in ("CP1", "CP2"):
        ref = geometry.build_reference(m, 128)
        for phi in _random_phis(ref, rng, 5):
            led = functionals.functional_ledger(ref, phi)
            bad += sum(not v for v in led.flags.values())
    return bad == 0, f"{bad} failed flags"


def prop_kenergy_derivative(rng):
    worst = 0.0
    for m in ("CP1", "CP2"):
        ref = geometry.build_reference(m, 128)
        phi, dphi = _random_phis(ref, rng, 2, 0.2)
        fd, ex = functionals.k_energy_derivative_check(ref, phi, dphi)
        worst = max(worst, abs(fd - ex) / max(abs(ex), 1e-12))
    return worst < 1e-6, f"max rel err {worst:.2e}"


# ---------------------------------------------------------------------------
# invariants

def prop_invariants(rng):
    worst_ke = worst_std = worst_rec = worst_im0 = 0.0
    for m in ("CP1", "CP2"):
        ref = geometry.build_reference(m, 128)
        n = ref.n
        vals = [[invariants.futaki(ref)] + [invariants.im_k(ref, k=k) for k in range(n + 1)]]
        worst_ke = max(worst_ke, np.abs(vals[0]).max())
        for phi in _random_phis(ref, rng, 5):
            st = geometry.metric_from_potential(ref, phi)
            fut = invariants.futaki(st)
            ims = [invariants.im_k(st, k=k) for k in range(n + 1)]
            vals.append([fut] + ims)
            worst_im0 = max(worst_im0, abs(ims[0] - fut))
            theta = rng.normal(size=st.grid.n_points)
            theta = st.grid.values(np.r_[st.grid.coeffs(theta)[:8], np.zeros(st.grid.n_points - 8)])
            worst_rec = max(worst_rec, invariants.decomposition_check(st, theta=theta),
                            invariants.decomposition_check(st, theta=theta + 1.0))
        worst_std = max(worst_std, np.std(np.array(vals), axis=0).max())
    ok = worst_ke < 1e-8 and worst_std < 1e-5 and worst_rec < 1e-6 and worst_im0 < 1e-8
    return ok, (f"KE {worst_ke:.1e}, spread {worst_std:.1e}, Im_0 - Futaki {worst_im0:.1e}, "
                f"reconstruction {worst_rec:.1e}")


def prop_dilation_normalization(rng):
    ref = geometry.build_reference("CP1", 128)
    a0 = 0.6
    st = geometry.ReducedMetricState(ref.grid, invariants.reference_dilation_potential(ref.grid, a0))
    res = flowmod.normalize_by_automorphism(st)
    err = abs(res.lam - np.exp(a0 / 2))
    phi = geometry.random_potential(ref.grid, rng, 0.3)
    res2 = flowmod.normalize_by_automorphism(geometry.metric_from_potential(ref, phi))
    ok = err < 1e-6 and abs(res.psi) < 1e-10 and abs(res2.residual) < 1e-8
    return ok, f"lambda error {err:.1e}, central residual {res2.residual:.1e}"


# ---------------------------------------------------------------------------
# flow (short runs)

def prop_flow_fixed_point(rng=None):
    cfg = flowmod.FlowConfig(manifold="CP1", n_points=64, t_end=10.0, dt=0.1, init_family="zero",
                             monitors="basic")
    tr = flowmod.run_flow(cfg)
    err = float(np.abs(tr.phi).max())
    return err < 1e-8, f"max |phi| {err:.1e} up to t = 10"


def prop_flow_monitors(rng=None):
    cfg = flowmod.FlowConfig(manifold="CP1", n_points=96, t_end=4.0, dt=0.02)
    tr = flowmod.run_flow(cfg)
    mono = flowmod.monotonicity_violations(tr)
    worst, _ = flowmod.energy_derivative_check(tr)
    ident = [flowmod.accumulate_energy_identity(tr, k) for k in range(tr.n + 1)]
    ident_ok = all(lhs <= rhs + 1e-6 for lhs, rhs in ident)
    pos, smin = flowmod.harnack_trace_positive(tr)
    hw, hv, _ = flowmod.harnack_check(tr, 30, levels=2)
    ok = (sum(mono.values()) == 0 and worst.max() < 1e-3 and ident_ok and pos and hv == 0
          and tr.sandwich_ok.all() and tr.columns["c"].min() > -1e-10)
    return ok, (f"monotonicity violations {sum(mono.values())}, dE/dt rel err {worst.max():.1e}, "
                f"Harnack trace min {smin:.3f}, pair violations {hv}")


SUITES = {
    "algebra": [
        ("sigma_k_expansion", prop_sigma_expansion),
        ("power_sum_identity", prop_poly_identity),
        ("vandermonde_inverse", prop_vandermonde),
        ("polarization", prop_polarization),
        ("sectional_conversion", prop_conversion),
        ("constant_model_values", prop_model_values),
        ("sectional_bound", prop_sectional_bound),
    ],
    "geometry": [
        ("volume", prop_volume),
        ("reference_curvature", prop_reference_curvature),
        ("spectrum", prop_spectrum),
        ("ricci_potential", prop_h_residual),
    ],
    "functionals": [
        ("jk_closed_form", prop_jk_oracle),
        ("cocycle", prop_cocycle),
        ("i_j_sandwich", prop_sandwich),
        ("kenergy_derivative", prop_kenergy_derivative),
    ],
    "invariants": [
        ("holomorphic_invariants", prop_invariants),
        ("dilation_normalization", prop_dilation_normalization),
    ],
    "flow": [
        ("fixed_point", prop_flow_fixed_point),
        ("flow_monitors", prop_flow_monitors),
    ],
}


# ---------------------------------------------------------------------------
# mutations

def _mut_sigma():
    orig = algebra.sigma_k

    def bad(spectrum):
        out = orig(spectrum)
        if out.shape[-1] > 2:
            out = out.copy()
            out[..., 2] *= 1.001
        return out
    return mock.patch.object(algebra, "sigma_k", bad)


def _mut_vandermonde():
    orig = algebra.vandermonde_inverse

    def bad(n, exact=False):
        c, ups = orig(n, exact)
        c = np.array(c, dtype=float)
        c[0, 0] += 1e-6
        return c, ups
    return mock.patch.object(algebra, "vandermonde_inverse", bad)


def _mut_jk():
    orig = functionals.j_k_coefficient
    return mock.patch.object(functionals, "j_k_coefficient", lambda *a: 1.01 * orig(*a))


def _mut_conversion_phase():
    orig = algebra.complex_of
    calls = {"n": 0}

    def bad(w):
        calls["n"] += 1
        return orig(w) * (1j if calls["n"] % 2 == 0 else 1.0)
    return mock.patch.object(algebra, "complex_of", bad)


MUTATIONS = {
    "sigma_k": _mut_sigma,
    "vandermonde": _mut_vandermonde,
    "jk_coefficient": _mut_jk,
    "conversion_phase": _mut_conversion_phase,
}


def run_suites(selector: str = "all", seed: int = 0, mutation: str | None = None, echo=None):
    if selector == "all":
        names = list(SUITES)
    elif selector in SUITES:
        names = [selector]
    else:
        raise KeyError(selector)
    if mutation is not None and mutation not in MUTATIONS:
        raise KeyError(mutation)
    ctx = MUTATIONS[mutation]() if mutation else contextlib.nullcontext()
    outcomes = []
    with ctx:
        for suite in names:
            for name, fn in SUITES[suite]:
                rng = np.random.default_rng([seed, len(outcomes)])
                t0 = time.perf_counter()
                try:
                    ok, detail = fn(rng)
                except Exception as exc:  # a crashing property is a failing one
                    ok, detail = False, f"{type(exc).__name__}: {exc}"
                out = Outcome(suite, name, bool(ok), detail, time.perf_counter() - t0)
                outcomes.append(out)
                if echo is not None:
                    echo(out)
    return outcomes
