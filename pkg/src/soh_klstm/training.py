"""Run configuration, the training loop and its report."""

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .data import fit_transform, infer_nominal
from .metrics import EvalReport, evaluate
from .optim import REDUCE_LR, STOP, Adam, DivergenceError, TrainController, clip_global_norm
from .recurrent import TrainingDivergenceError


class ConfigError(ValueError):
    pass


# (type, lower, upper); None means unbounded on that side
_RANGES = {
    "hidden_size": (int, 1, 4096),
    "window": (int, 1, 10000),
    "degree": (int, 1, 5),
    "num_basis": (int, 2, 256),
    "outer_num_basis": (int, 2, 256),
    "channels": (int, 1, 64),
    "lr": (float, 1e-8, 1.0),
    "batch_size": (int, 1, 100000),
    "max_epochs": (int, 1, 1000000),
    "patience": (int, 1, 100000),
    "lr_factor": (float, 0.0, 1.0),
    "lr_patience": (int, 1, 100000),
    "min_lr": (float, 0.0, 1.0),
    "clip_norm": (float, 0.0, None),
    "seed": (int, 0, None),
    "nominal_capacity": (float, 0.0, None),
}


@dataclass
class RunConfig:
    model: str = "klstm"
    hidden_size: int = 32
    window: int = 8
    degree: int = 3
    num_basis: int = 8
    outer_num_basis: int = 8
    channels: int = 1
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    early_stop: bool = True
    lr_factor: float = 0.5
    lr_patience: int = 5
    min_lr: float = 1e-5
    clip_norm: float = None
    seed: int = 0
    nominal_capacity: float = None
    data: str = None
    checkpoint: str = None
    report: str = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in ("lstm", "klstm"):
            raise ConfigError(f"model must be lstm or klstm, got {self.model!r}")
        for key, (typ, lo, hi) in _RANGES.items():
            v = getattr(self, key)
            if v is None and key in ("clip_norm", "nominal_capacity"):
                continue
            if typ is int and (isinstance(v, bool) or not isinstance(v, (int, np.integer))):
                raise ConfigError(f"{key} must be an integer, got {v!r}")
            if typ is float and not isinstance(v, (int, float)):
                raise ConfigError(f"{key} must be a number, got {v!r}")
            exclusive = key in ("lr_factor", "clip_norm", "nominal_capacity")
            if lo is not None and (v <= lo if exclusive else v < lo):
                raise ConfigError(f"{key}={v} is below its allowed range")
            if hi is not None and (v >= hi if key == "lr_factor" else v > hi):
                raise ConfigError(f"{key}={v} is above its allowed range")
        if self.num_basis < self.degree + 1 or self.outer_num_basis < self.degree + 1:
            raise ConfigError("num_basis and outer_num_basis must be at least degree + 1")
        if self.min_lr > self.lr:
            raise ConfigError("min_lr must not exceed lr")

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string or typed values; unknown keys are rejected."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            key = key.strip().replace("-", "_")
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, value)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides=None):
        mapping = parse_kv(open(path).read())
        mapping.update(overrides or {})
        return cls.from_mapping(mapping)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name}={str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def parse_kv(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not key=value: {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(key, value):
    if not isinstance(value, str):
        return value
    if key in ("model", "data", "checkpoint", "report"):
        return value
    if key == "early_stop":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"early_stop must be a boolean, got {value!r}")
    if value.lower() in ("", "none"):
        return None
    typ = _RANGES[key][0]
    try:
        return typ(value)
    except ValueError:
        raise ConfigError(f"{key} expects {typ.__name__}, got {value!r}") from None


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    decision: str


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    stop_reason: str = None
    best_epoch: int = None
    best_val_loss: float = None
    wall_seconds: float = 0.0
    steps_per_epoch: int = 0
    batch_sizes: list = field(default_factory=list)
    test: EvalReport = None

    @property
    def diverged(self):
        return self.stop_reason == "divergence"

    @property
    def train_losses(self):
        return [e.train_loss for e in self.epochs]

    @property
    def val_losses(self):
        return [e.val_loss for e in self.epochs]

    @property
    def lr_trace(self):
        return [e.lr for e in self.epochs]

    def to_text(self):
        head = {
            "stop_reason": self.stop_reason,
            "diverged": str(self.diverged).lower(),
            "epochs": len(self.epochs),
            "best_epoch": self.best_epoch,
            "best_val_loss": repr(self.best_val_loss) if self.best_val_loss is not None else "",
            "wall_seconds": repr(self.wall_seconds),
            "steps_per_epoch": self.steps_per_epoch,
        }
        lines = [f"{k}={'' if v is None else v}" for k, v in head.items()]
        if self.test is not None:
            lines += [f"test.{line}" for line in self.test.to_text().splitlines()]
        lines.append("")
        lines.append("epoch,train_loss,val_loss,lr,decision")
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.train_loss!r},{e.val_loss!r},{e.lr!r},{e.decision}")
        return "\n".join(lines) + "\n"


def new_model(config: RunConfig, rng):
    return M.build_model(
        config.model, rng, hidden_size=config.hidden_size, channels=config.channels,
        num_basis=config.num_basis, outer_num_basis=config.outer_num_basis, degree=config.degree,
    )


def fit(model, train, val, config: RunConfig, rng, val_hook=None) -> TrainReport:
    """Mini-batch Adam with plateau LR reduction and early stopping.

    The best-validation parameters are restored on return. ``val_hook``,
    if given, is called as ``val_hook(epoch, val_loss)`` and its return value
    replaces the measured validation loss.
    """
    report = TrainReport()
    opt = Adam(lr=config.lr)
    ctl = TrainController(lr=config.lr, patience=config.patience, lr_patience=config.lr_patience,
                          lr_factor=config.lr_factor, min_lr=config.min_lr, early_stop=config.early_stop)
    params = model.named_tensors()
    best = model.snapshot()
    n = len(train)
    bs = config.batch_size
    report.steps_per_epoch = math.ceil(n / bs)
    report.batch_sizes = [min(bs, n - s) for s in range(0, n, bs)]
    t0 = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        try:
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                batch_loss, grads = M.loss_and_grads(model, train.windows[idx], train.targets[idx])
                if not math.isfinite(batch_loss):
                    raise DivergenceError("non-finite training loss")
                if config.clip_norm is not None:
                    clip_global_norm(grads, config.clip_norm)
                opt.step(params, grads)
                total += batch_loss * len(idx)
            train_loss = total / n
            val_loss = M.loss(model, val.windows, val.targets)
        except (TrainingDivergenceError, DivergenceError, FloatingPointError):
            train_loss = val_loss = math.nan
        if val_hook is not None:
            val_loss = val_hook(epoch, val_loss)

        decision = ctl.update(val_loss)
        if ctl.improved:
            best = model.snapshot()
            report.best_epoch = epoch
            report.best_val_loss = val_loss
        report.epochs.append(EpochLog(epoch, train_loss, val_loss, opt.lr, decision))
        if decision == REDUCE_LR:
            opt.lr = ctl.lr
        if decision == STOP:
            report.stop_reason = "divergence" if ctl.diverged else "early_stop"
            break
    else:
        report.stop_reason = "max_epochs"

    model.restore(best)
    report.wall_seconds = time.perf_counter() - t0
    return report


def evaluate_model(model, dataset, baseline_rmse=None) -> EvalReport:
    """RMSE/MAPE of SOH on ``dataset``; the prediction pass is what gets timed."""
    t0 = time.perf_counter()
    pred = M.predict_batch(model, dataset.windows)
    elapsed = time.perf_counter() - t0
    return evaluate(pred[:, 0], dataset.raw_targets[:, 0], elapsed, baseline_rmse)


def train_on_records(records, config: RunConfig, nominal_capacity=None, val_hook=None):
    """Full pipeline: split/scale, build, fit, test. Returns (model, report, datasets)."""
    nominal = config.nominal_capacity or nominal_capacity or infer_nominal(records)
    train, val, test, fsc, tsc = fit_transform(records, config.window, nominal)
    rng = np.random.default_rng(config.seed)
    model = new_model(config, rng)
    model.feature_scaler, model.target_scaler = fsc, tsc
    model.nominal_capacity = nominal
    model.window = config.window
    model.b_out[:] = train.targets.mean(axis=0)
    report = fit(model, train, val, config, rng, val_hook=val_hook)
    if not report.diverged:
        report.test = evaluate_model(model, test)
    return model, report, (train, val, test)
