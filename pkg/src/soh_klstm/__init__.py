"""Battery state-of-health prediction with an LSTM whose candidate cell
state is augmented by a B-spline (Kolmogorov-Arnold) branch."""

from .data import CycleRecord, MinMaxScaler, fit_transform, load_csv, synth_generate, write_csv
from .metrics import EvalReport, error_reduction, mape, rmse, soh_from_capacity, soh_from_throughput
from .model import SOHModel, build_model, load, predict, save
from .recurrent import KLSTMCellParams, LSTMCellParams, backward_sequence, forward_sequence
from .training import RunConfig, TrainReport, fit, train_on_records

__version__ = "0.1.0"
