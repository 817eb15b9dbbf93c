"""Independent reference implementations used only by the tests.

Nothing here imports the package's numerical code: the spline oracle is the
textbook recursion, and the BPTT oracle rebuilds the whole unrolled cell from
scalar autodiff nodes.
"""

import math

import numpy as np


def naive_basis(knots, i, k, x):
    """N_{i,k}(x) by direct recursion; last non-empty span closed on the right."""
    t = knots
    if k == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        last = max(j for j in range(len(t) - 1) if t[j + 1] > t[j])
        return 1.0 if (i == last and x == t[last + 1]) else 0.0
    left = 0.0
    d1 = t[i + k] - t[i]
    if d1 != 0:
        left = ((x - t[i]) / d1) * naive_basis(t, i, k - 1, x)
    right = 0.0
    d2 = t[i + k + 1] - t[i + 1]
    if d2 != 0:
        right = ((t[i + k + 1] - x) / d2) * naive_basis(t, i + 1, k - 1, x)
    return left + right


def naive_all(knots, k, x):
    return np.array([naive_basis(knots, i, k, x) for i in range(len(knots) - k - 1)])


def random_clamped_knots(rng, degree, lo=0.0, hi=1.0):
    n_inner = int(rng.integers(0, 7))
    inner = np.sort(rng.uniform(lo, hi, n_inner))
    if n_inner >= 2 and rng.random() < 0.3:
        inner[1] = inner[0]  # occasional repeated interior knot
    return np.concatenate([np.full(degree + 1, lo), inner, np.full(degree + 1, hi)])


def central_diff(f, arr, h):
    """Gradient of scalar f() w.r.t. every entry of ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


class Var:
    """Scalar reverse-mode autodiff node."""

    __slots__ = ("val", "grad", "parents")

    def __init__(self, val, parents=()):
        self.val = float(val)
        self.grad = 0.0
        self.parents = parents  # tuple of (node, local derivative)

    @staticmethod
    def lift(x):
        return x if isinstance(x, Var) else Var(x)

    def __add__(self, o):
        o = Var.lift(o)
        return Var(self.val + o.val, ((self, 1.0), (o, 1.0)))

    __radd__ = __add__

    def __sub__(self, o):
        o = Var.lift(o)
        return Var(self.val - o.val, ((self, 1.0), (o, -1.0)))

    def __rsub__(self, o):
        return Var.lift(o) - self

    def __mul__(self, o):
        o = Var.lift(o)
        return Var(self.val * o.val, ((self, o.val), (o, self.val)))

    __rmul__ = __mul__

    def __truediv__(self, c):
        assert not isinstance(c, Var)
        return Var(self.val / c, ((self, 1.0 / c),))

    def tanh(self):
        t = math.tanh(self.val)
        return Var(t, ((self, 1.0 - t * t),))

    def sigmoid(self):
        s = 1.0 / (1.0 + math.exp(-self.val))
        return Var(s, ((self, s * (1.0 - s)),))

    def backward(self):
        order, seen = [], set()

        def visit(v):
            if id(v) in seen:
                return
            seen.add(id(v))
            for p, _ in v.parents:
                visit(p)
            order.append(v)

        visit(self)
        self.grad = 1.0
        for v in reversed(order):
            for p, d in v.parents:
                p.grad += d * v.grad


def _var_basis(knots, i, k, x):
    """naive_basis over a Var argument (knots are constants)."""
    t = knots
    if k == 0:
        return Var(naive_basis(t, i, 0, x.val))
    out = Var(0.0)
    d1 = t[i + k] - t[i]
    if d1 != 0:
        out = out + ((x - t[i]) / d1) * _var_basis(t, i, k - 1, x)
    d2 = t[i + k + 1] - t[i + 1]
    if d2 != 0:
        out = out + ((t[i + k + 1] - x) / d2) * _var_basis(t, i + 1, k - 1, x)
    return out


def unrolled_klstm_grads(tensors, xs, upstream, inner_knots, outer_knots, degree, kan=True):
    """Gradients of sum_t <upstream[t], h_t> through a fully unrolled scalar graph.

    ``tensors`` maps names (W_i ... b_C, psi_c, outer_w) to numpy arrays.
    Inputs are assumed to already lie inside the inner spline domain.
    """
    V = {name: np.vectorize(Var, otypes=[object])(arr) for name, arr in tensors.items()}
    H = tensors["b_i"].shape[0]
    n = xs.shape[1]
    h = [Var(0.0) for _ in range(H)]
    c = [Var(0.0) for _ in range(H)]
    loss = Var(0.0)
    if kan:
        lo, hi = outer_knots[degree], outer_knots[len(outer_knots) - degree - 1]
    for t in range(xs.shape[0]):
        z = h + [Var(v) for v in xs[t]]
        pre = {}
        for g in ("i", "f", "o", "C"):
            W, b = V[f"W_{g}"], V[f"b_{g}"]
            pre[g] = [sum((W[r, q] * z[q] for q in range(H + n)), Var(0.0)) + b[r] for r in range(H)]
        spline = [Var(0.0) for _ in range(H)]
        if kan:
            G, Q, _ = tensors["psi_c"].shape
            bx = [[Var(naive_basis(inner_knots, i, degree, xs[t, p])) for i in range(G)] for p in range(n)]
            for q in range(Q):
                s = Var(0.0)
                for p in range(n):
                    for i in range(G):
                        s = s + V["psi_c"][i, q, p] * bx[p][i]
                u = lo + (hi - lo) * ((s.tanh() + 1.0) * 0.5)
                bu = [_var_basis(outer_knots, j, degree, u) for j in range(tensors["outer_w"].shape[2])]
                for r in range(H):
                    for j, bj in enumerate(bu):
                        spline[r] = spline[r] + V["outer_w"][r, q, j] * bj
        new_h, new_c = [], []
        for r in range(H):
            i_g, f_g, o_g = pre["i"][r].sigmoid(), pre["f"][r].sigmoid(), pre["o"][r].sigmoid()
            a = pre["C"][r]
            if kan:
                cand = a * a.sigmoid() + spline[r]
            else:
                cand = a.tanh()
            cr = f_g * c[r] + i_g * cand
            hr = o_g * cr.tanh()
            new_c.append(cr)
            new_h.append(hr)
            loss = loss + float(upstream[t][r]) * hr
        h, c = new_h, new_c
    loss.backward()
    return {name: np.vectorize(lambda v: v.grad, otypes=[float])(arr) for name, arr in V.items()}
