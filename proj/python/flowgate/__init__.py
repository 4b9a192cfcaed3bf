"""Packet anomaly detection trained on normal traffic only.

Arrays are float64, one sample per row. Encoded packets have 1600 columns
with values in [0, 1]; latents have 70.
"""

from ._core import (
    Detector,
    Error,
    Flow,
    auroc,
    make_corpus,
    preprocess,
    run_pipeline,
    train_flow,
)

__all__ = [
    "Detector",
    "Error",
    "Flow",
    "auroc",
    "make_corpus",
    "preprocess",
    "run_pipeline",
    "train_flow",
]
