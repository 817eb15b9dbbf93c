"""Error metrics and the two capacity-based SOH definitions."""

from dataclasses import asdict, dataclass

import numpy as np


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {target.size} targets")
    if pred.size == 0:
        raise ValueError("metrics need at least one sample")
    return pred, target


def rmse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def mape(pred, target) -> float:
    """Mean absolute percentage error, in percent."""
    pred, target = _pair(pred, target)
    if np.any(target == 0):
        raise ZeroDivisionError("MAPE is undefined for zero targets")
    return float(100.0 * np.mean(np.abs(pred - target) / np.abs(target)))


def error_reduction(new_rmse: float, base_rmse: float) -> float:
    """Percent reduction of ``new_rmse`` relative to ``base_rmse``."""
    if not base_rmse > 0:
        raise ValueError("baseline RMSE must be positive")
    return 100.0 * (1.0 - new_rmse / base_rmse)


def soh_from_capacity(capacity_ah: float, nominal_ah: float) -> float:
    if not nominal_ah > 0:
        raise ValueError("nominal capacity must be positive")
    return capacity_ah / nominal_ah


def soh_from_throughput(q_out_ah: float, q_in_ah: float) -> float:
    if not q_in_ah > 0:
        raise ValueError("charged throughput must be positive")
    return q_out_ah / q_in_ah


@dataclass
class EvalReport:
    rmse: float
    mape: float
    execution_time: float
    n_samples: int
    error_reduction_vs_baseline: float = None

    FIELDS = ("rmse", "mape", "error_reduction_vs_baseline", "execution_time", "n_samples")

    def __post_init__(self):
        if self.rmse < 0 or self.mape < 0 or self.n_samples < 1:
            raise ValueError("invalid evaluation report values")

    def as_dict(self):
        d = asdict(self)
        return {k: d[k] for k in self.FIELDS}

    def to_text(self):
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.as_dict().items())

    @classmethod
    def csv_header(cls):
        return ",".join(cls.FIELDS)

    def to_csv_row(self):
        return ",".join(_fmt(v) for v in self.as_dict().values())

    @classmethod
    def from_text(cls, text):
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        red = kv.get("error_reduction_vs_baseline", "")
        return cls(
            rmse=float(kv["rmse"]),
            mape=float(kv["mape"]),
            execution_time=float(kv["execution_time"]),
            n_samples=int(kv["n_samples"]),
            error_reduction_vs_baseline=float(red) if red else None,
        )


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def evaluate(soh_pred, soh_true, execution_time=0.0, baseline_rmse=None) -> EvalReport:
    """RMSE/MAPE on SOH fractions, optionally relative to a baseline RMSE."""
    r = rmse(soh_pred, soh_true)
    return EvalReport(
        rmse=r,
        mape=mape(soh_pred, soh_true),
        execution_time=float(execution_time),
        n_samples=int(np.size(soh_true)),
        error_reduction_vs_baseline=None if baseline_rmse is None else error_reduction(r, baseline_rmse),
    )
