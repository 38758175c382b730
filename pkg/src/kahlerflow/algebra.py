"""Pointwise curvature algebra in a unitary frame.

Complex tangent vectors are arrays u in C^n (components in the unitary frame).
A real tangent vector w in R^{2n} is stored as (x_1..x_n, y_1..y_n); it
corresponds to the complex vector x + i y and the complex structure acts by
J(x, y) = (-y, x), i.e. multiplication by i.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np


class GeometricInputError(ValueError):
    """Vectors do not satisfy the preconditions of a curvature formula."""


class ConditioningError(ValueError):
    pass


# ---------------------------------------------------------------------------
# symmetric functions

@dataclass(frozen=True)
class RicciSpectrum:
    eigenvalues: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.eigenvalues)
        if not all(np.isfinite(vals)):
            raise ValueError("Ricci eigenvalues must be finite")
        object.__setattr__(self, "eigenvalues", vals)

    @property
    def n(self):
        return len(self.eigenvalues)


def sigma_k(spectrum) -> np.ndarray:
    """Elementary symmetric polynomials (sigma_0, ..., sigma_n).

    Accepts a RicciSpectrum, a sequence of eigenvalues, or an array whose
    last axis holds the eigenvalues (evaluated fieldwise).
    """
    if isinstance(spectrum, RicciSpectrum):
        spectrum = spectrum.eigenvalues
    r = np.asarray(spectrum, dtype=float)
    n = r.shape[-1]
    out = [np.ones(r.shape[:-1])] + [np.zeros(r.shape[:-1]) for _ in range(n)]
    # multiply out prod (1 + t r_i) one factor at a time
    for i in range(n):
        ri = r[..., i]
        for k in range(i + 1, 0, -1):
            out[k] = out[k] + ri * out[k - 1]
    return np.stack(out, axis=-1)


def sigma_fields(eigen_fields) -> list:
    """sigma_k of per-point eigenvalue fields [r_1(s), ..., r_n(s)]."""
    arr = np.stack([np.asarray(e, dtype=float) for e in eigen_fields], axis=-1)
    s = sigma_k(arr)
    return [s[..., k] for k in range(s.shape[-1])]


def poly_identity_lhs(x, y, k: int):
    """sum x^i y^(k-i) + (x - y) sum i x^(i-1) y^(k-i); equals (k+1) x^k."""
    if int(k) != k or k <= 0:
        raise ValueError("k must be a positive integer")
    k = int(k)
    first = sum(x**i * y ** (k - i) for i in range(k + 1))
    second = sum(i * x ** (i - 1) * y ** (k - i) for i in range(1, k + 1))
    return first + (x - y) * second


# ---------------------------------------------------------------------------
# Vandermonde inverse via Lagrange-type polynomials

def vandermonde_matrix(n: int) -> np.ndarray:
    """M[j-1, k-1] = k^j for j, k = 1..n+1."""
    idx = np.arange(1, n + 2, dtype=float)
    return idx[None, :] ** idx[:, None]


def _lagrange_coefficients(n: int):
    """Exact coefficients of f_i(x) = x prod_{k!=i}(x-k) / (i prod_{k!=i}(i-k))."""
    nodes = range(1, n + 2)
    rows = []
    for i in nodes:
        poly = [Fraction(0), Fraction(1)]  # x
        denom = Fraction(i)
        for k in nodes:
            if k == i:
                continue
            # multiply by (x - k)
            nxt = [Fraction(0)] * (len(poly) + 1)
            for d, a in enumerate(poly):
                nxt[d + 1] += a
                nxt[d] -= k * a
            poly = nxt
            denom *= i - k
        rows.append([a / denom for a in poly[1:]])  # powers x^1..x^{n+1}
    return rows


def vandermonde_inverse(n: int, exact: bool = False):
    """Matrix c with sum_j c_ij k^j = delta_ik, and the row-sum weights upsilon_k.

    Returns (c, upsilon) where c is (n+1)x(n+1) indexed [i-1, j-1] and
    upsilon[k-1] = (n+1)/C(n+1, k) * sum_i c_ik.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if n > 12:
        raise ConditioningError("Vandermonde inverse is ill conditioned beyond n = 12")
    rows = _lagrange_coefficients(int(n))
    ups = [Fraction(n + 1, comb(n + 1, k)) * sum(rows[i][k - 1] for i in range(n + 1)) for k in range(1, n + 2)]
    if exact:
        return rows, ups
    return np.array(rows, dtype=float), np.array(ups, dtype=float)


def lagrange_eval(c, i: int, x):
    """f_i(x) = sum_j c_ij x^j (1-based i)."""
    row = np.asarray(c)[i - 1]
    return sum(row[j - 1] * x**j for j in range(1, len(row) + 1))


# ---------------------------------------------------------------------------
# curvature tensors

def _symmetrize(T: np.ndarray) -> np.ndarray:
    """Average over the Kahler symmetries of R_{i jbar k lbar}."""
    acc = T + T.transpose(2, 1, 0, 3)            # i <-> k
    acc = acc + acc.transpose(0, 3, 2, 1)        # j <-> l
    acc = acc + np.conj(acc.transpose(1, 0, 3, 2))  # conj(R_{j ibar l kbar})
    return acc / 8.0


@dataclass(frozen=True, eq=False)
class PointCurvatureTensor:
    """Components R[i, j, k, l] = R(e_i, ebar_j, e_k, ebar_l) in a unitary frame."""

    components: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.components, dtype=complex)
        if R.ndim != 4 or len(set(R.shape)) != 1:
            raise ValueError("curvature tensor needs shape (n, n, n, n)")
        R = _symmetrize(R)
        R.setflags(write=False)
        object.__setattr__(self, "components", R)

    @property
    def n(self) -> int:
        return self.components.shape[0]

    def __call__(self, u, v, w, x) -> complex:
        """R(u, vbar, w, xbar), antilinear in the barred slots."""
        return complex(np.einsum("ijkl,i,j,k,l->", self.components, u, np.conj(v), w, np.conj(x)))

    def bisectional(self, u, v) -> float:
        return self(u, u, v, v).real

    def normalized_bisectional(self, u, v) -> float:
        """R(u,ubar,v,vbar) / (|u|^2|v|^2 + |<u,v>|^2); equals 1 on the unit model."""
        u = np.asarray(u, dtype=complex)
        v = np.asarray(v, dtype=complex)
        den = np.vdot(u, u).real * np.vdot(v, v).real + abs(np.vdot(v, u)) ** 2
        return self.bisectional(u, v) / den

    def holomorphic_sectional(self, u) -> float:
        return self(u, u, u, u).real / np.vdot(u, u).real ** 2

    def scalar(self) -> float:
        return float(np.einsum("iikk->", self.components).real)

    def __sub__(self, other):
        return PointCurvatureTensor(self.components - other.components)

    def __add__(self, other):
        return PointCurvatureTensor(self.components + other.components)

    def scaled(self, c):
        return PointCurvatureTensor(c * self.components)

    # -- real side -------------------------------------------------------
    def real(self, X, Y, Z, W) -> float:
        """Riemannian R(X, Y, Z, W) from the complex-multilinear extension.

        Each real vector splits as X = xi + xibar with xi = (x + i y)/sqrt(2);
        only slot patterns (1,0)(0,1) in both pairs survive and
        R(abar, b, ...) = -R(b, abar, ...).
        """
        a, b, c, d = (complex_of(V) / np.sqrt(2.0) for V in (X, Y, Z, W))
        val = self(a, b, c, d) - self(b, a, c, d) - self(a, b, d, c) + self(b, a, d, c)
        return val.real

    def sectional_real(self, w1, w2) -> float:
        """Sectional curvature of span(w1, w2) by brute-force contraction."""
        w1 = np.asarray(w1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        area = (w1 @ w1) * (w2 @ w2) - (w1 @ w2) ** 2
        return self.real(w1, w2, w2, w1) / area


def complex_of(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    n = w.shape[0] // 2
    return w[:n] + 1j * w[n:]


def real_of(u) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    return np.concatenate([u.real, u.imag])


def J(w) -> np.ndarray:
    return real_of(1j * complex_of(w))


def constant_curvature_model(n: int, holomorphic_sectional_value: float = 2.0) -> PointCurvatureTensor:
    """R_{i jbar k lbar} = c (d_ij d_kl + d_il d_kj) with R(u,ubar,u,ubar) = value."""
    if n < 1:
        raise ValueError("n must be at least 1")
    c = holomorphic_sectional_value / 2.0
    d = np.eye(n)
    return PointCurvatureTensor(c * (np.einsum("ij,kl->ijkl", d, d) + np.einsum("il,kj->ijkl", d, d)))


def constant_curvature_projection(tensor: PointCurvatureTensor) -> PointCurvatureTensor:
    """Projection onto the constant holomorphic sectional curvature models."""
    n = tensor.n
    c = tensor.scalar() / (n * (n + 1))
    return constant_curvature_model(n, 2.0 * c)


def random_kahler_tensor(n: int, rng: np.random.Generator, scale: float = 1.0) -> PointCurvatureTensor:
    T = rng.normal(size=(n,) * 4) + 1j * rng.normal(size=(n,) * 4)
    return PointCurvatureTensor(scale * T)


def _unit(v):
    return v / np.linalg.norm(v)


def sectional_from_bisectional(tensor: PointCurvatureTensor, w1, w2, tol: float = 1e-10) -> float:
    """Sectional curvature of span(w1, w2) from complex curvature values.

    w1, w2 are real orthonormal vectors whose complex lines are either equal
    (w2 = +-J w1) or orthogonal.  For orthogonal lines the value is
    (R(A,A,A,A) - 2 R(B,B,A,A) + R(B,B,B,B))/4 with A, B = (u1 +- u2)/sqrt 2,
    where u1 = (w1 - i J w1)/sqrt 2 and u2 = (-J w2 - i w2)/sqrt 2.  In the
    frame normalization used here the first is complex_of(w1) and the second
    carries the extra phase -i.
    """
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if w1.shape != (2 * tensor.n,) or w2.shape != w1.shape:
        raise GeometricInputError("vectors must live in R^{2n}")
    if abs(w1 @ w1 - 1) > tol or abs(w2 @ w2 - 1) > tol or abs(w1 @ w2) > tol:
        raise GeometricInputError("w1, w2 must be orthonormal")
    cross = w2 @ J(w1)
    u1 = complex_of(w1)
    if abs(abs(cross) - 1.0) <= tol:
        return tensor(u1, u1, u1, u1).real
    u2 = -1j * complex_of(w2)
    if abs(cross) > tol or abs(np.vdot(u1, u2)) > tol:
        raise GeometricInputError("complex lines of w1 and w2 are neither equal nor orthogonal")
    A = (u1 + u2) / np.sqrt(2.0)
    B = (u1 - u2) / np.sqrt(2.0)
    return 0.25 * (tensor(A, A, A, A) - 2.0 * tensor(B, B, A, A) + tensor(B, B, B, B)).real


def polarization_lhs(tensor: PointCurvatureTensor, x, y) -> float:
    """R(u, ubar, v, vbar) for the complex vectors of real x, y."""
    return tensor.bisectional(complex_of(x), complex_of(y))


def polarization_rhs(tensor: PointCurvatureTensor, x, y) -> float:
    """R(x, y, y, x) + R(x, Jy, Jy, x) on the real side."""
    Jy = J(y)
    return tensor.real(x, y, y, x) + tensor.real(x, Jy, Jy, x)


def max_normalized_bisectional(tensor: PointCurvatureTensor, rng, samples: int = 2000, extra=()) -> float:
    """Sampled upper estimate of the normalized bisectional curvature."""
    n = tensor.n
    best = -np.inf
    for _ in range(samples):
        u = rng.normal(size=n) + 1j * rng.normal(size=n)
        v = rng.normal(size=n) + 1j * rng.normal(size=n)
        best = max(best, tensor.normalized_bisectional(u, v))
    for u, v in extra:
        best = max(best, tensor.normalized_bisectional(u, v))
    return best


def random_orthogonal_lines(n: int, rng):
    """Unit real w1, w2 with orthogonal complex lines (needs n >= 2)."""
    u1 = _unit(rng.normal(size=n) + 1j * rng.normal(size=n))
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    v = v - np.vdot(u1, v) * u1
    u2 = _unit(v)
    return real_of(u1), real_of(u2)


def random_same_line(n: int, rng):
    u1 = _unit(rng.normal(size=n) + 1j * rng.normal(size=n))
    w1 = real_of(u1)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return w1, sign * J(w1)
