"""SOH/capacity predictor: recurrent cell + linear head, MSE loss, checkpoints.

Checkpoint layout (all integers little-endian)::

    magic      8 bytes  b"SOHKLSTM"
    version    u32      1
    meta_len   u32      length of the UTF-8 JSON metadata that follows
    meta       JSON     model kind, sizes, spline settings, nominal capacity
    count      u32      number of tensors
    count x:
        name_len u16, name (UTF-8)
        ndim     u8,  dims u32 * ndim
        data     float64 little-endian, row-major, prod(dims) values
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import MinMaxScaler
from .linalg import ShapeError
from .recurrent import (
    CellState,
    KLSTMCellParams,
    LSTMCellParams,
    backward_sequence,
    forward_sequence,
    init_klstm,
    init_lstm,
)
from .splines import PsiTransform, SplineBasis

MAGIC = b"SOHKLSTM"
VERSION = 1
N_FEATURES = 4
N_OUTPUTS = 2


class CheckpointError(ValueError):
    def __init__(self, message, tensor=None):
        super().__init__(message)
        self.tensor = tensor


@dataclass(frozen=True)
class Prediction:
    soh: float
    capacity: float


class SOHModel:
    def __init__(self, cell, W_out, b_out, feature_scaler=None, target_scaler=None, nominal_capacity=None,
                 window=None):
        self.cell = cell
        self.W_out = np.array(W_out, dtype=np.float64)
        self.b_out = np.array(b_out, dtype=np.float64)
        if self.W_out.shape != (N_OUTPUTS, cell.hidden_size) or self.b_out.shape != (N_OUTPUTS,):
            raise ShapeError(f"output head must be {(N_OUTPUTS, cell.hidden_size)} + {(N_OUTPUTS,)}")
        self.feature_scaler = feature_scaler
        self.target_scaler = target_scaler
        self.nominal_capacity = nominal_capacity
        self.window = window

    @property
    def kind(self):
        return "klstm" if isinstance(self.cell, KLSTMCellParams) else "lstm"

    @property
    def hidden_size(self):
        return self.cell.hidden_size

    def named_tensors(self):
        d = dict(self.cell.named_tensors())
        d["W_out"] = self.W_out
        d["b_out"] = self.b_out
        return d

    def snapshot(self):
        return {k: v.copy() for k, v in self.named_tensors().items()}

    def restore(self, snap):
        for k, v in self.named_tensors().items():
            v[...] = snap[k]

    def config(self):
        meta = {"model": self.kind, "hidden_size": self.hidden_size, "input_size": self.cell.input_size,
                "nominal_capacity": self.nominal_capacity, "window": self.window}
        if self.kind == "klstm":
            meta.update(
                channels=self.cell.channels,
                degree=self.cell.psi.basis.degree,
                num_basis=self.cell.psi.basis.num_basis,
                outer_num_basis=self.cell.outer_basis.num_basis,
            )
        else:
            meta["candidate"] = self.cell.candidate
        return meta


def build_model(kind, rng, hidden_size=32, input_size=N_FEATURES, channels=1, num_basis=8,
                outer_num_basis=8, degree=3, candidate="tanh"):
    if kind == "klstm":
        cell = init_klstm(hidden_size, input_size, rng, channels, num_basis, outer_num_basis, degree)
    elif kind == "lstm":
        cell = init_lstm(hidden_size, input_size, rng, candidate=candidate)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    r = 1.0 / np.sqrt(hidden_size)
    W_out = rng.uniform(-r, r, size=(N_OUTPUTS, hidden_size))
    return SOHModel(cell, W_out, np.zeros(N_OUTPUTS))


def _as_batch(windows):
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    if w.ndim != 3 or w.shape[1] == 0 or w.shape[0] == 0:
        raise ValueError(f"expected nonempty window(s) of shape (L, {N_FEATURES}) or (B, L, {N_FEATURES})")
    return w


def forward(model: SOHModel, windows):
    """Normalized outputs (B, 2) and the tape. ``windows`` is (B, L, n), time-major inside."""
    w = _as_batch(windows)
    xs = np.swapaxes(w, 0, 1)  # (L, B, n)
    states, tape = forward_sequence(model.cell, xs, CellState.zeros(model.hidden_size, (w.shape[0],)))
    h_last = states[-1].h
    return h_last @ model.W_out.T + model.b_out, h_last, tape


def predict_normalized(model: SOHModel, windows):
    return forward(model, windows)[0]


def predict_batch(model: SOHModel, windows):
    """Denormalized (B, 2) array of (soh, capacity)."""
    if model.target_scaler is None or not model.target_scaler.fitted:
        raise RuntimeError("model has no fitted target scaler")
    return model.target_scaler.inverse_transform(predict_normalized(model, windows))


def predict(model: SOHModel, window) -> Prediction:
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2 or len(w) == 0:
        raise ValueError("predict expects one nonempty (L, n) window")
    soh, cap = predict_batch(model, w[None])[0]
    return Prediction(float(soh), float(cap))


def loss_and_grads(model: SOHModel, windows, targets):
    """Mean squared error over batch and both outputs, with exact gradients."""
    w = _as_batch(windows)
    targets = np.asarray(targets, dtype=np.float64).reshape(w.shape[0], N_OUTPUTS)
    y, h_last, tape = forward(model, w)
    err = y - targets
    loss = float(np.mean(err * err))
    dy = 2.0 * err / err.size
    upstream = [None] * len(tape)
    upstream[-1] = dy @ model.W_out
    grads = backward_sequence(model.cell, tape, upstream)
    grads["W_out"] = dy.T @ h_last
    grads["b_out"] = dy.sum(axis=0)
    return loss, grads


def loss(model: SOHModel, windows, targets) -> float:
    w = _as_batch(windows)
    err = predict_normalized(model, w) - np.asarray(targets, dtype=np.float64).reshape(w.shape[0], N_OUTPUTS)
    return float(np.mean(err * err))


def _scaler_tensors(model):
    out = {}
    for prefix, sc in (("feature_scaler", model.feature_scaler), ("target_scaler", model.target_scaler)):
        if sc is None or not sc.fitted:
            raise CheckpointError(f"{prefix} is not fitted; cannot save")
        out[f"{prefix}.min"] = sc.data_min
        out[f"{prefix}.max"] = sc.data_max
    return out


def save(model: SOHModel, path):
    meta = json.dumps(model.config(), sort_keys=True).encode()
    tensors = {**model.named_tensors(), **_scaler_tensors(model)}
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        bname = name.encode()
        parts.append(struct.pack("<H", len(bname)) + bname)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}", what)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_checkpoint(path):
    """Raw contents: (metadata dict, {name: array})."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, meta_len = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed metadata: {exc}") from None
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for k in range(count):
        (nlen,) = r.unpack("<H", f"tensor #{k} name length")
        try:
            name = r.take(nlen, f"tensor #{k} name").decode()
        except UnicodeDecodeError:
            raise CheckpointError(f"tensor #{k} has an undecodable name") from None
        (ndim,) = r.unpack("<B", name)
        shape = r.unpack(f"<{ndim}I", name)
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * size, name), dtype="<f8").astype(np.float64)
        tensors[name] = data.reshape(shape)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after last tensor")
    return meta, tensors


def _get(tensors, name, shape):
    if name not in tensors:
        raise CheckpointError(f"checkpoint is missing tensor {name!r}", name)
    arr = tensors[name]
    if arr.shape != tuple(shape):
        raise CheckpointError(f"tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}", name)
    return arr.copy()


def load(path, expect=None) -> SOHModel:
    """Load a checkpoint; ``expect`` maps metadata keys to required values."""
    meta, tensors = read_checkpoint(path)
    for key, value in (expect or {}).items():
        if key in meta and meta[key] != value:
            raise ShapeError(f"checkpoint {key}={meta[key]} does not match configured {key}={value}")
    try:
        kind, H, n = meta["model"], int(meta["hidden_size"]), int(meta["input_size"])
    except KeyError as exc:
        raise CheckpointError(f"metadata is missing {exc.args[0]!r}") from None
    gates = {name: _get(tensors, name, (H, H + n)) for name in ("W_i", "W_f", "W_o", "W_C")}
    gates.update({name: _get(tensors, name, (H,)) for name in ("b_i", "b_f", "b_o", "b_C")})
    if kind == "klstm":
        Q, k = int(meta["channels"]), int(meta["degree"])
        G, G_out = int(meta["num_basis"]), int(meta["outer_num_basis"])
        basis = SplineBasis.uniform(G, k)
        psi = PsiTransform(basis, Q, n, _get(tensors, "psi_c", (G, Q, n)))
        cell = KLSTMCellParams(**gates, psi=psi, outer_basis=SplineBasis.uniform(G_out, k),
                               outer_w=_get(tensors, "outer_w", (H, Q, G_out)))
    elif kind == "lstm":
        cell = LSTMCellParams(**gates, candidate=meta.get("candidate", "tanh"))
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")
    scalers = {}
    for prefix, width in (("feature_scaler", n), ("target_scaler", N_OUTPUTS)):
        scalers[prefix] = MinMaxScaler(_get(tensors, f"{prefix}.min", (width,)),
                                       _get(tensors, f"{prefix}.max", (width,)))
    return SOHModel(cell, _get(tensors, "W_out", (N_OUTPUTS, H)), _get(tensors, "b_out", (N_OUTPUTS,)),
                    scalers["feature_scaler"], scalers["target_scaler"], meta.get("nominal_capacity"), meta.get("window"))
