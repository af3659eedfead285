"""Classifier features trained to be cheap to store.

An entropy bottleneck on the last hidden layer trades task loss against the
code length of the rounded features; the learned density is frozen into
range-coder tables for storage.
"""

from .bottleneck import BottleneckConfig, LossReport, combined_loss, quantize, train_forward
from .codec import ProbabilityTable, build_tables, coded_size_bits, decode, encode
from .data import Dataset, DatasetSpec, generate_synthetic, load_binary_records
from .entropy_model import FactorizedDensity, RateReport
from .harness import RunRecord, evaluate, report_table, sweep
from .training import Model, TrainConfig, train_classifier, train_model

__version__ = "0.1.0"
