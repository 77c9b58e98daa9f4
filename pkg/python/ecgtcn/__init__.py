"""
ecgtcn: an ECG arrhythmia TCN from training to integer-only C.

The package trains the ECG-TCN classifier on ECG5000 beats, folds and
quantizes it to INT-8, runs it on an integer-only engine, accounts for its
parameters, MACs and memory, plans L1 tiles under a byte budget and emits
a C99 implementation whose logits match the engine bit for bit.

Examples
--------
Train, quantize and classify:

>>> from ecgtcn import build_ecg_tcn, load_ucr, stratified_holdout, train
>>> full = load_ucr("ECG5000/ECG5000_TRAIN.txt")
>>> train_ds, val_ds = stratified_holdout(full, 0.2, seed=0)
>>> net = train(build_ecg_tcn(), train_ds, val_ds, epochs=20).network
>>> folded = fold_batchnorm(net)
>>> qnet = quantize_network(folded, calibrate(folded, full))
>>> label, logits = qpredict(qnet, full[0])

Notes
-----
Labels are 1-based throughout, as in the UCR files.
"""

from __future__ import annotations

from .codegen import (
    GoldenVectors,
    SourceBundle,
    build_harness,
    emit_golden_vectors,
    emit_source,
    read_golden_vectors,
    run_harness,
    write_bundle,
)
from .config import ArchConfig, TrainConfig, TrainConfigItems, receptive_field
from .container import load_model, read_container, save_model, write_container
from .cost import (
    CostReport,
    allocate_arena,
    buffer_lifetimes,
    cost_report,
    count_macs,
    count_params,
    format_report,
    memory_footprint,
    peak_activation_bytes,
)
from .data import CLASS_NAMES, Beat, Dataset, load_ucr, read_beats, stratified_holdout
from .engine import (
    execution_schedule,
    qconv1d_dilated,
    qforward,
    qpredict,
    qpredict_batch,
    qresidual_add,
    quantize_input,
    zero_stuff,
)
from .errors import (
    CalibrationError,
    CapacityError,
    ContainerError,
    DataError,
    DomainError,
    EcgTcnError,
    EmissionError,
    ParseError,
    ShapeError,
    StructureError,
    TrainingDivergedError,
    UndefinedMetricError,
    UsageError,
)
from .gradcheck import GradCheckReport, check_gradients
from .metrics import ConfusionMatrix, accuracy, balanced_accuracy, confusion
from .network import (
    Network,
    backward,
    build_ecg_tcn,
    forward,
    predict,
    receptive_field_reach,
)
from .quantize import (
    QNetwork,
    QuantParams,
    calibrate,
    fold_batchnorm,
    quantize_multiplier,
    quantize_network,
)
from .tiling import TilePlan, execute_tiled, parse_budget, plan_tiles
from .training import TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "ArchConfig",
    "Beat",
    "CalibrationError",
    "CapacityError",
    "ConfusionMatrix",
    "ContainerError",
    "CostReport",
    "DataError",
    "Dataset",
    "DomainError",
    "EcgTcnError",
    "EmissionError",
    "GoldenVectors",
    "GradCheckReport",
    "Network",
    "ParseError",
    "QNetwork",
    "QuantParams",
    "ShapeError",
    "SourceBundle",
    "StructureError",
    "TilePlan",
    "TrainConfig",
    "TrainConfigItems",
    "TrainResult",
    "TrainingDivergedError",
    "UndefinedMetricError",
    "UsageError",
    "__version__",
    "accuracy",
    "allocate_arena",
    "backward",
    "balanced_accuracy",
    "buffer_lifetimes",
    "build_ecg_tcn",
    "build_harness",
    "calibrate",
    "check_gradients",
    "confusion",
    "cost_report",
    "count_macs",
    "count_params",
    "emit_golden_vectors",
    "emit_source",
    "execute_tiled",
    "execution_schedule",
    "fold_batchnorm",
    "format_report",
    "forward",
    "load_model",
    "load_ucr",
    "memory_footprint",
    "peak_activation_bytes",
    "parse_budget",
    "plan_tiles",
    "predict",
    "qconv1d_dilated",
    "qforward",
    "qpredict",
    "qpredict_batch",
    "qresidual_add",
    "quantize_input",
    "quantize_multiplier",
    "quantize_network",
    "read_beats",
    "read_container",
    "read_golden_vectors",
    "receptive_field",
    "receptive_field_reach",
    "run_harness",
    "save_model",
    "stratified_holdout",
    "train",
    "write_bundle",
    "write_container",
    "zero_stuff",
]
