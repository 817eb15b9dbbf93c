"""LSTM and KAN-augmented LSTM cells with backpropagation through time.

Both cells share the gate equations::

    z  = [h_prev, x]
    i  = sigmoid(W_i z + b_i),  f = sigmoid(W_f z + b_f),  o = sigmoid(W_o z + b_o)
    c  = f * c_prev + i * g
    h  = o * tanh(c)

The plain LSTM uses ``g = tanh(W_C z + b_C)`` (or SiLU, see ``candidate``).
The KLSTM uses ``g = silu(W_C z + b_C) + spline(x)`` where, per hidden unit,

    spline(x)[h] = sum_q sum_j outer_w[h, q, j] * B_j(squash(s_q)),
    s_q = sum_p sum_i psi_c[i, q, p] * B_i(clip(x_p))

and ``squash`` maps the real line onto the outer basis domain through tanh.

Arrays may carry any number of leading batch axes; parameters are shared.
"""

from dataclasses import dataclass, field

import numpy as np

from . import activations as act
from .linalg import ShapeError
from .splines import PsiTransform, SplineBasis, basis_derivative, basis_eval, psi_apply, psi_backward

GATE_NAMES = ("W_i", "W_f", "W_o", "W_C", "b_i", "b_f", "b_o", "b_C")


class TrainingDivergenceError(FloatingPointError):
    """A non-finite value appeared in the forward pass."""

    def __init__(self, message, timestep=None):
        super().__init__(message)
        self.timestep = timestep


@dataclass
class LSTMCellParams:
    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_C: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_C: np.ndarray
    candidate: str = "tanh"

    def __post_init__(self):
        for name in GATE_NAMES:
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64))
        H, width = self.W_i.shape
        if width <= H:
            raise ShapeError(f"gate matrices must be H x (H + n), got {self.W_i.shape}")
        for name in ("W_f", "W_o", "W_C"):
            if getattr(self, name).shape != (H, width):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(H, width)}")
        for name in ("b_i", "b_f", "b_o", "b_C"):
            if getattr(self, name).shape != (H,):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(H,)}")
        if self.candidate not in ("tanh", "silu"):
            raise ValueError(f"unsupported candidate activation {self.candidate!r}")

    @property
    def hidden_size(self):
        return self.W_i.shape[0]

    @property
    def input_size(self):
        return self.W_i.shape[1] - self.W_i.shape[0]

    def named_tensors(self):
        """Trainable tensors in checkpoint order (the arrays themselves, not copies)."""
        return {name: getattr(self, name) for name in GATE_NAMES}

    def zero_grads(self):
        return {name: np.zeros_like(t) for name, t in self.named_tensors().items()}


@dataclass
class KLSTMCellParams(LSTMCellParams):
    psi: PsiTransform = None
    outer_basis: SplineBasis = None
    outer_w: np.ndarray = None
    candidate: str = "silu"

    def __post_init__(self):
        super().__post_init__()
        if self.candidate != "silu":
            raise ValueError("the KLSTM candidate branch is SiLU")
        if self.psi is None or self.outer_basis is None or self.outer_w is None:
            raise ValueError("KLSTM needs psi, outer_basis and outer_w")
        if self.psi.features != self.input_size:
            raise ShapeError(f"psi reads {self.psi.features} features, cell input size is {self.input_size}")
        self.outer_w = np.array(self.outer_w, dtype=np.float64)
        expected = (self.hidden_size, self.psi.channels, self.outer_basis.num_basis)
        if self.outer_w.shape != expected:
            raise ShapeError(f"outer_w has shape {self.outer_w.shape}, expected {expected}")

    @property
    def channels(self):
        return self.psi.channels

    @property
    def psi_c(self):
        return self.psi.coeffs

    def named_tensors(self):
        d = super().named_tensors()
        d["psi_c"] = self.psi.coeffs
        d["outer_w"] = self.outer_w
        return d


def _uniform_gates(rng, H, n):
    r = 1.0 / np.sqrt(H + n)
    ws = {name: rng.uniform(-r, r, size=(H, H + n)) for name in ("W_i", "W_f", "W_o", "W_C")}
    bs = {name: np.zeros(H) for name in ("b_i", "b_f", "b_o", "b_C")}
    bs["b_f"][:] = 1.0
    return {**ws, **bs}


def init_lstm(hidden_size, input_size, rng, candidate="tanh"):
    return LSTMCellParams(**_uniform_gates(rng, hidden_size, input_size), candidate=candidate)


def init_klstm(hidden_size, input_size, rng, channels=1, num_basis=8, outer_num_basis=8, degree=3):
    """KLSTM with uniform gate init and an all-zero spline branch."""
    gates = _uniform_gates(rng, hidden_size, input_size)
    psi = PsiTransform(SplineBasis.uniform(num_basis, degree), channels, input_size)
    outer = SplineBasis.uniform(outer_num_basis, degree)
    return KLSTMCellParams(
        **gates,
        psi=psi,
        outer_basis=outer,
        outer_w=np.zeros((hidden_size, channels, outer.num_basis)),
    )


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size, batch_shape=()):
        shape = tuple(batch_shape) + (hidden_size,)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class StepCache:
    x: np.ndarray
    z: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    a_c: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray
    spline: dict = field(default=None)


def squash(s, basis: SplineBasis):
    lo, hi = basis.domain
    return lo + (hi - lo) * 0.5 * (np.tanh(s) + 1.0)


def squash_grad(s, basis: SplineBasis):
    lo, hi = basis.domain
    t = np.tanh(s)
    return (hi - lo) * 0.5 * (1.0 - t * t)


def _check_inputs(p, x, s):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (p.input_size,):
        raise ShapeError(f"input has shape {x.shape}, cell expects {p.input_size} features")
    H = p.hidden_size
    if s.h.shape[-1:] != (H,) or s.c.shape[-1:] != (H,):
        raise ShapeError(f"state shapes {s.h.shape}/{s.c.shape} do not match hidden size {H}")
    return x


def _gates(p, x, s, timestep):
    z = np.concatenate([np.broadcast_to(s.h, x.shape[:-1] + s.h.shape[-1:]), x], axis=-1)
    a_i = z @ p.W_i.T + p.b_i
    a_f = z @ p.W_f.T + p.b_f
    a_o = z @ p.W_o.T + p.b_o
    a_c = z @ p.W_C.T + p.b_C
    for a in (a_i, a_f, a_o, a_c):
        if not np.all(np.isfinite(a)):
            raise TrainingDivergenceError(f"non-finite pre-activation at timestep {timestep}", timestep)
    return z, act.sigmoid(a_i), act.sigmoid(a_f), act.sigmoid(a_o), a_c


def _finish(p, x, s, z, i, f, o, a_c, g, spline):
    c = f * s.c + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = StepCache(x=x, z=z, c_prev=s.c, i=i, f=f, o=o, a_c=a_c, g=g, tanh_c=tc, spline=spline)
    return CellState(h, c), cache


def lstm_step(p: LSTMCellParams, x, s: CellState, timestep=0):
    x = _check_inputs(p, x, s)
    z, i, f, o, a_c = _gates(p, x, s, timestep)
    g = act.apply(p.candidate, a_c)
    return _finish(p, x, s, z, i, f, o, a_c, g, None)


def spline_branch(p: KLSTMCellParams, x):
    """H-dimensional spline term of the KLSTM candidate plus the values backward needs."""
    xc = p.psi.basis.clamp(x)
    s = psi_apply(p.psi, xc)
    u = squash(s, p.outer_basis)
    bu = basis_eval(p.outer_basis, u)  # (..., Q, G_out)
    out = np.einsum("...qj,hqj->...h", bu, p.outer_w)
    return out, {"x_clamped": xc, "s": s, "u": u, "bu": bu}


def klstm_step(p: KLSTMCellParams, x, s: CellState, timestep=0):
    x = _check_inputs(p, x, s)
    z, i, f, o, a_c = _gates(p, x, s, timestep)
    spl, cache = spline_branch(p, x)
    g = act.silu(a_c) + spl
    if not np.all(np.isfinite(g)):
        raise TrainingDivergenceError(f"non-finite candidate at timestep {timestep}", timestep)
    return _finish(p, x, s, z, i, f, o, a_c, g, cache)


def step(p, x, s, timestep=0):
    if isinstance(p, KLSTMCellParams):
        return klstm_step(p, x, s, timestep)
    return lstm_step(p, x, s, timestep)


def forward_sequence(p, xs, s0: CellState = None):
    """Run the cell over ``xs`` (time on axis 0). Returns (states, tape)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim < 2 or xs.shape[0] == 0:
        raise ValueError("forward_sequence needs a nonempty sequence of input vectors")
    if s0 is None:
        s0 = CellState.zeros(p.hidden_size, xs.shape[1:-1])
    states, tape = [], []
    s = s0
    for t in range(xs.shape[0]):
        s, cache = step(p, xs[t], s, timestep=t)
        states.append(s)
        tape.append(cache)
    return states, tape


def _sum_batch(a, b):
    """sum over leading axes of outer(a, b) -> (a.shape[-1], b.shape[-1])."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def backward_sequence(p, tape, upstream):
    """Gradients of a loss w.r.t. every trainable tensor of ``p``.

    ``upstream[t]`` is dLoss/dh_t for the state returned at step ``t``;
    ``None`` entries mean no direct dependence.
    """
    if len(upstream) != len(tape):
        raise ValueError(f"upstream has {len(upstream)} entries but the tape has {len(tape)} steps")
    grads = p.zero_grads()
    H = p.hidden_size
    is_kan = isinstance(p, KLSTMCellParams)
    cand_grad = act.silu_grad if (is_kan or p.candidate == "silu") else act.tanh_grad
    w_stack = {"i": p.W_i, "f": p.W_f, "o": p.W_o, "C": p.W_C}

    dh_next = None
    dc_next = None
    for t in range(len(tape) - 1, -1, -1):
        e = tape[t]
        dh = np.zeros_like(e.tanh_c)
        if upstream[t] is not None:
            dh = dh + np.asarray(upstream[t], dtype=np.float64)
        if dh_next is not None:
            dh = dh + dh_next
        dc = dh * e.o * (1.0 - e.tanh_c * e.tanh_c)
        if dc_next is not None:
            dc = dc + dc_next

        da = {
            "o": dh * e.tanh_c * e.o * (1.0 - e.o),
            "i": dc * e.g * e.i * (1.0 - e.i),
            "f": dc * e.c_prev * e.f * (1.0 - e.f),
        }
        dg = dc * e.i
        da["C"] = dg * cand_grad(e.a_c)

        dz = 0.0
        for k, d in da.items():
            grads[f"W_{k}"] += _sum_batch(d, e.z)
            grads[f"b_{k}"] += d.reshape(-1, H).sum(axis=0)
            dz = dz + d @ w_stack[k]

        if is_kan:
            sp = e.spline
            bu = sp["bu"]
            grads["outer_w"] += np.einsum("bh,bqj->hqj", dg.reshape(-1, H), bu.reshape((-1,) + bu.shape[-2:]))
            dbu = np.einsum("...h,hqj->...qj", dg, p.outer_w)
            du = np.sum(dbu * basis_derivative(p.outer_basis, sp["u"]), axis=-1)
            ds = du * squash_grad(sp["s"], p.outer_basis)
            grads["psi_c"] += psi_backward(p.psi, sp["x_clamped"], ds)[0]

        dh_next = dz[..., :H]
        dc_next = dc * e.f
    return grads
