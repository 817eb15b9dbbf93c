"""Clamped B-spline bases (Cox-de Boor) and the per-feature spline transform.

Basis values are returned with the basis index on the last axis, so
``basis_eval(basis, x)`` for ``x`` of shape ``(B, n)`` has shape ``(B, n, G)``.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError


class DomainError(ValueError):
    """Raised when a spline is evaluated outside its knot domain."""


def _degree_table(knots, degree, x):
    """Cox-de Boor recursion up to ``degree`` on arbitrary nondecreasing knots.

    Returns a list whose entry ``d`` holds all degree-``d`` basis values,
    shape ``x.shape + (len(knots) - d - 1,)``. Degree 0 uses half-open
    intervals, except that the last non-empty interval is closed on the right
    so the final knot is still covered. 0/0 terms count as zero.
    """
    t = np.asarray(knots, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)[..., None]
    left, right = t[:-1], t[1:]
    n0 = ((left <= x) & (x < right)).astype(np.float64)
    nonempty = np.nonzero(right > left)[0]
    if nonempty.size:
        last = nonempty[-1]
        at_end = x[..., 0] == t[last + 1]
        n0[at_end, last] = 1.0

    table = [n0]
    prev = n0
    for d in range(1, degree + 1):
        m = len(t) - d - 1
        den_l = t[d:d + m] - t[:m]
        den_r = t[d + 1:d + 1 + m] - t[1:1 + m]
        safe_l = np.where(den_l > 0, den_l, 1.0)
        safe_r = np.where(den_r > 0, den_r, 1.0)
        a = np.where(den_l > 0, (x - t[:m]) / safe_l, 0.0)
        b = np.where(den_r > 0, (t[d + 1:d + 1 + m] - x) / safe_r, 0.0)
        cur = a * prev[..., :m] + b * prev[..., 1:m + 1]
        table.append(cur)
        prev = cur
    return table


def bspline_basis(knots, degree: int, x):
    """All degree-``degree`` B-spline basis values at ``x`` for raw ``knots``."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if len(knots) < degree + 2:
        raise ValueError("need at least degree + 2 knots")
    return _degree_table(knots, degree, x)[degree]


def bspline_basis_derivative(knots, degree: int, x):
    """d/dx of every degree-``degree`` basis function (requires degree >= 1)."""
    if degree < 1:
        raise ValueError("basis derivative is unsupported for degree 0")
    t = np.asarray(knots, dtype=np.float64)
    lower = _degree_table(t, degree - 1, x)[degree - 1]
    m = len(t) - degree - 1
    den_l = t[degree:degree + m] - t[:m]
    den_r = t[degree + 1:degree + 1 + m] - t[1:1 + m]
    cl = np.where(den_l > 0, degree / np.where(den_l > 0, den_l, 1.0), 0.0)
    cr = np.where(den_r > 0, degree / np.where(den_r > 0, den_r, 1.0), 0.0)
    return cl * lower[..., :m] - cr * lower[..., 1:m + 1]


@dataclass(frozen=True)
class KnotVector:
    knots: tuple
    degree: int

    def __post_init__(self):
        k = self.degree
        t = np.asarray(self.knots, dtype=np.float64)
        if k < 0:
            raise ValueError("degree must be nonnegative")
        if len(t) < 2 * (k + 1):
            raise ValueError(f"a clamped degree-{k} grid needs at least {2 * (k + 1)} knots")
        if np.any(np.diff(t) < 0):
            raise ValueError("knots must be nondecreasing")
        if np.any(t[:k + 1] != t[0]) or np.any(t[-(k + 1):] != t[-1]):
            raise ValueError("knot vector is not clamped")
        if t[-1] <= t[0]:
            raise ValueError("knot domain is empty")
        object.__setattr__(self, "knots", tuple(float(v) for v in t))

    @classmethod
    def uniform(cls, num_basis=8, degree=3, lo=0.0, hi=1.0):
        """Clamped grid with uniformly spaced interior knots giving ``num_basis`` functions."""
        if num_basis < degree + 1:
            raise ValueError(f"num_basis must be at least degree + 1 = {degree + 1}")
        inner = np.linspace(lo, hi, num_basis - degree + 1)
        knots = np.concatenate([np.full(degree, lo), inner, np.full(degree, hi)])
        return cls(tuple(knots), degree)

    @property
    def domain(self):
        return self.knots[self.degree], self.knots[len(self.knots) - self.degree - 1]

    @property
    def array(self):
        return np.asarray(self.knots)


@dataclass(frozen=True)
class SplineBasis:
    knot_vector: KnotVector

    @classmethod
    def uniform(cls, num_basis=8, degree=3, lo=0.0, hi=1.0):
        return cls(KnotVector.uniform(num_basis, degree, lo, hi))

    @property
    def degree(self):
        return self.knot_vector.degree

    @property
    def num_basis(self):
        return len(self.knot_vector.knots) - self.degree - 1

    @property
    def domain(self):
        return self.knot_vector.domain

    def clamp(self, x):
        lo, hi = self.domain
        return np.clip(x, lo, hi)

    def _check_domain(self, x):
        lo, hi = self.domain
        x = np.asarray(x, dtype=np.float64)
        if np.any(~((x >= lo) & (x <= hi))):
            raise DomainError(f"spline argument outside domain [{lo}, {hi}]")
        return x


def basis_eval(basis: SplineBasis, x):
    x = basis._check_domain(x)
    return bspline_basis(basis.knot_vector.array, basis.degree, x)


def basis_derivative(basis: SplineBasis, x):
    x = basis._check_domain(x)
    return bspline_basis_derivative(basis.knot_vector.array, basis.degree, x)


class PsiTransform:
    """Per-feature spline functions mixed into ``Q`` channels.

    ``coeffs[i, q, p]`` weights basis ``i`` of feature ``p`` in channel ``q``;
    the channel output is the sum over features and basis functions.
    """

    def __init__(self, basis: SplineBasis, channels: int, features: int, coeffs=None):
        self.basis = basis
        shape = (basis.num_basis, channels, features)
        if coeffs is None:
            coeffs = np.zeros(shape)
        coeffs = np.array(coeffs, dtype=np.float64)
        if coeffs.shape != shape:
            raise ShapeError(f"psi coefficients have shape {coeffs.shape}, expected {shape}")
        self.coeffs = coeffs

    @property
    def channels(self):
        return self.coeffs.shape[1]

    @property
    def features(self):
        return self.coeffs.shape[2]

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.features,):
            raise ShapeError(f"psi expects {self.features} features, got shape {x.shape}")
        return x


def psi_apply(psi: PsiTransform, x):
    """Channel sums ``s[q] = sum_p sum_i c[i,q,p] B_i(x_p)``; batch axes pass through."""
    x = psi._check(x)
    b = basis_eval(psi.basis, x)  # (..., n, G)
    return np.einsum("...pi,iqp->...q", b, psi.coeffs)


def psi_backward(psi: PsiTransform, x, upstream):
    """Gradients of ``<upstream, psi_apply(x)>`` w.r.t. the coefficients and ``x``.

    Batch axes in ``x``/``upstream`` are summed into ``grad_c``.
    """
    x = psi._check(x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape[:-1] + (psi.channels,):
        raise ShapeError(f"upstream shape {upstream.shape} does not match psi output")
    b = basis_eval(psi.basis, x)
    db = basis_derivative(psi.basis, x)
    grad_c = np.einsum("bq,bpi->iqp", upstream.reshape(-1, psi.channels), b.reshape((-1,) + b.shape[-2:]))
    grad_x = np.einsum("...q,iqp,...pi->...p", upstream, psi.coeffs, db)
    return grad_c, grad_x
