"""Per-cycle battery records: CSV I/O, scaling, chronological split, windows.

Canonical CSV::

    # nominal_capacity_ah=2.0          (optional comment line)
    cycle_index,capacity_ah,voltage_v,current_a,temperature_c[,soh]

The model input at cycle t is ``[C_{t-1}, V_t, I_t, T_t]``: the previous
cycle's capacity plus this cycle's mean voltage, current and temperature.
The first cycle uses the nominal capacity as its predecessor.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .metrics import soh_from_capacity

COLUMNS = ("cycle_index", "capacity_ah", "voltage_v", "current_a", "temperature_c")
FEATURE_NAMES = ("prev_capacity_ah", "voltage_v", "current_a", "temperature_c")
TARGET_NAMES = ("soh", "capacity_ah")
SPLIT = (0.7, 0.2, 0.1)
PARTITIONS = ("train", "val", "test")


class CSVFormatError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class DegenerateFeatureError(ValueError):
    pass


@dataclass(frozen=True)
class CycleRecord:
    cycle_index: int
    capacity: float
    voltage: float
    current: float
    temperature: float
    soh: float


def load_csv(path, nominal_capacity=None):
    """Parse a canonical CSV. ``nominal_capacity`` overrides the header comment."""
    header_nominal = None
    records = []
    with open(path, newline="") as fh:
        lines = list(enumerate(fh, start=1))
    body = []
    for lineno, raw in lines:
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, _, value = stripped.lstrip("#").strip().partition("=")
            if key.strip() == "nominal_capacity_ah":
                try:
                    header_nominal = float(value)
                except ValueError:
                    raise CSVFormatError(f"bad nominal capacity {value!r}", lineno) from None
            continue
        body.append((lineno, raw))
    if not body:
        raise CSVFormatError("missing header row", 1)

    header_line, header_raw = body[0]
    header = [c.strip() for c in next(csv.reader([header_raw]))]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise CSVFormatError(f"missing column(s): {', '.join(missing)}", header_line)
    if header[:5] != list(COLUMNS) or header[5:] not in ([], ["soh"]):
        raise CSVFormatError(f"header must be {','.join(COLUMNS)}[,soh], got {','.join(header)}", header_line)
    has_soh = "soh" in header

    nominal = nominal_capacity if nominal_capacity is not None else header_nominal
    if not has_soh and nominal is None:
        raise CSVFormatError("no soh column and no nominal capacity in header or config", header_line)
    if nominal is not None and not nominal > 0:
        raise CSVFormatError("nominal capacity must be positive", header_line)

    prev_index = None
    for lineno, raw in body[1:]:
        fields = [f.strip() for f in next(csv.reader([raw]))]
        if len(fields) != len(header):
            raise CSVFormatError(f"expected {len(header)} fields, got {len(fields)}", lineno)
        try:
            idx = int(fields[0])
        except ValueError:
            raise CSVFormatError(f"non-integer cycle_index {fields[0]!r}", lineno) from None
        values = []
        for name, text in zip(header[1:], fields[1:]):
            try:
                v = float(text)
            except ValueError:
                raise CSVFormatError(f"non-numeric {name} {text!r}", lineno) from None
            if not math.isfinite(v):
                raise CSVFormatError(f"non-finite {name}", lineno)
            values.append(v)
        if idx < 1:
            raise CSVFormatError("cycle_index must be >= 1", lineno)
        if prev_index is not None and idx <= prev_index:
            raise CSVFormatError(f"cycle_index {idx} does not increase (previous {prev_index})", lineno)
        cap = values[0]
        if not cap > 0:
            raise CSVFormatError("capacity_ah must be positive", lineno)
        soh = values[4] if has_soh else soh_from_capacity(cap, nominal)
        records.append(CycleRecord(idx, cap, values[1], values[2], values[3], soh))
        prev_index = idx
    return records, nominal


def write_csv(path, records, nominal_capacity=None, include_soh=True):
    with open(path, "w", newline="") as fh:
        if nominal_capacity is not None:
            fh.write(f"# nominal_capacity_ah={nominal_capacity!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS + (("soh",) if include_soh else ()))
        for r in records:
            row = [r.cycle_index, repr(r.capacity), repr(r.voltage), repr(r.current), repr(r.temperature)]
            if include_soh:
                row.append(repr(r.soh))
            w.writerow(row)


class MinMaxScaler:
    """Per-column affine map onto [0, 1] of the fitted data; no clipping."""

    def __init__(self, data_min=None, data_max=None):
        self.data_min = None if data_min is None else np.array(data_min, dtype=np.float64)
        self.data_max = None if data_max is None else np.array(data_max, dtype=np.float64)
        self.n_fits = 0
        if self.data_min is not None:
            self._validate()

    @property
    def fitted(self):
        return self.data_min is not None

    def _validate(self):
        if self.data_min.shape != self.data_max.shape:
            raise ValueError("scaler min/max shapes differ")
        flat = np.nonzero(~(self.data_max > self.data_min))[0]
        if flat.size:
            raise DegenerateFeatureError(f"feature column(s) {flat.tolist()} have max <= min")

    def fit(self, data):
        data = np.asarray(data, dtype=np.float64)
        self.data_min = data.min(axis=0)
        self.data_max = data.max(axis=0)
        self.n_fits += 1
        self._validate()
        return self

    def _require(self):
        if not self.fitted:
            raise RuntimeError("scaler is not fitted")

    def transform(self, data):
        self._require()
        return (np.asarray(data, dtype=np.float64) - self.data_min) / (self.data_max - self.data_min)

    def inverse_transform(self, data):
        self._require()
        return np.asarray(data, dtype=np.float64) * (self.data_max - self.data_min) + self.data_min


@dataclass
class SequenceDataset:
    windows: np.ndarray  # (N, L, 4) normalized features
    targets: np.ndarray  # (N, 2) normalized (soh, capacity)
    cycle_index: np.ndarray  # (N,) cycle of each target
    raw_targets: np.ndarray  # (N, 2) denormalized (soh, capacity)
    partition: str

    def __len__(self):
        return len(self.targets)


def feature_matrix(records, nominal_capacity):
    """(N, 4) raw inputs and (N, 2) raw targets for a chronological record list."""
    feats = np.empty((len(records), 4))
    targets = np.empty((len(records), 2))
    prev_cap = nominal_capacity
    for k, r in enumerate(records):
        feats[k] = (prev_cap, r.voltage, r.current, r.temperature)
        targets[k] = (r.soh, r.capacity)
        prev_cap = r.capacity
    return feats, targets


def infer_nominal(records):
    """Nominal capacity implied by the first record's capacity and SOH."""
    return records[0].capacity / records[0].soh


def split_sizes(n):
    n_train = n * 7 // 10
    n_val = n * 2 // 10
    return n_train, n_val, n - n_train - n_val


def make_windows(feats, targets, raw_targets, cycles, window, partition):
    n = len(feats) - window + 1
    if n < 1:
        raise ValueError(f"{partition} partition has {len(feats)} cycles, fewer than the window length {window}")
    idx = np.arange(window)[None, :] + np.arange(n)[:, None]
    return SequenceDataset(
        windows=feats[idx],
        targets=targets[window - 1:],
        cycle_index=np.asarray(cycles[window - 1:]),
        raw_targets=raw_targets[window - 1:],
        partition=partition,
    )


def fit_transform(records, window=8, nominal_capacity=None, feature_scaler=None, target_scaler=None):
    """Split 70/20/10 by cycle order, scale, and window each partition.

    Scalers are fitted on the training partition unless already fitted ones
    are passed in. Returns ``(train, val, test, feature_scaler, target_scaler)``.
    """
    if len(records) < window + 2:
        raise ValueError(f"need at least {window + 2} records, got {len(records)}")
    if nominal_capacity is None:
        nominal_capacity = infer_nominal(records)
    feats, targets = feature_matrix(records, nominal_capacity)
    cycles = [r.cycle_index for r in records]
    n_train, n_val, n_test = split_sizes(len(records))
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, len(records))]

    if feature_scaler is None or not feature_scaler.fitted:
        feature_scaler = (feature_scaler or MinMaxScaler()).fit(feats[:n_train])
    if target_scaler is None or not target_scaler.fitted:
        target_scaler = (target_scaler or MinMaxScaler()).fit(targets[:n_train])
    nf = feature_scaler.transform(feats)
    nt = target_scaler.transform(targets)
    parts = [
        make_windows(nf[a:b], nt[a:b], targets[a:b], cycles[a:b], window, name)
        for name, (a, b) in zip(PARTITIONS, bounds)
    ]
    return (*parts, feature_scaler, target_scaler)


PROFILES = {
    # ambient temperature (C), discharge current (A), mean discharge voltage of a fresh cell (V)
    "groupA": {"temperature": 24.0, "current": 2.0, "voltage": 3.55},
    "groupB": {"temperature": 4.0, "current": 4.0, "voltage": 3.35},
    "groupC": {"temperature": 4.0, "current": 1.0, "voltage": 3.45},
}


def synth_generate(seed, n_cycles, profile="groupA", nominal_capacity=2.0, end_soh=0.70,
                   fade_fraction=0.8, noise_ah=0.002):
    """Synthetic capacity-fade trajectory with regeneration bumps.

    Capacity follows ``C0 * (a * exp(-b t) + 1 - a)`` with ``b`` solved so the
    noiseless trend reaches ``end_soh`` at the last cycle. The first cycle is
    exactly ``C0``.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; valid profiles: {', '.join(PROFILES)}")
    if n_cycles < 20:
        raise ValueError("n_cycles must be at least 20")
    a = fade_fraction
    if not 0 < 1 - end_soh < a:
        raise ValueError("end_soh must lie in (1 - fade_fraction, 1)")
    prof = PROFILES[profile]
    rng = np.random.default_rng(seed)
    t = np.arange(n_cycles, dtype=np.float64)
    b = -math.log(1.0 - (1.0 - end_soh) / a) / (n_cycles - 1)
    trend = a * np.exp(-b * t) + (1.0 - a)

    bumps = np.zeros(n_cycles)
    n_bumps = max(1, n_cycles // 40)
    starts = rng.choice(np.arange(5, n_cycles - 5), size=n_bumps, replace=False)
    for s in starts:
        height = rng.uniform(0.002, 0.004)
        bumps[s:] += height * np.exp(-(t[s:] - s) / 4.0)

    noise = rng.normal(0.0, noise_ah, n_cycles)
    noise[0] = 0.0
    capacity = nominal_capacity * (trend + bumps) + noise
    capacity[0] = nominal_capacity
    soh = capacity / nominal_capacity

    fade = 1.0 - soh
    voltage = prof["voltage"] - 0.25 * fade + rng.normal(0.0, 0.004, n_cycles)
    current = prof["current"] * (1.0 + 0.01 * fade) + rng.normal(0.0, 0.005, n_cycles)
    temperature = prof["temperature"] + 0.5 * prof["current"] * (1.0 + 2.0 * fade) + rng.normal(0.0, 0.1, n_cycles)
    return [
        CycleRecord(k + 1, float(capacity[k]), float(voltage[k]), float(current[k]), float(temperature[k]),
                    float(soh[k]))
        for k in range(n_cycles)
    ]
