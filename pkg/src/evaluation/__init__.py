"""MaskedCLIP downstream evaluation.

Package structure:
    metrics.py         - exact ROC-AUC / average precision, one-vs-rest macro
    probe.py           - feature extraction, linear probe, fine-tune, ProbeResult
    reconstruction.py  - masked-reconstruction preview
    sweeps.py          - variant ablation and label-efficiency tables
    nb/                - numba rank kernels
"""
from src.evaluation.metrics import MetricError, pr_auc, roc_auc  # noqa: F401
from src.evaluation.probe import (  # noqa: F401
    ProbeError,
    ProbeResult,
    evaluate,
    extract_features,
    fine_tune,
    linear_probe,
)
from src.evaluation.reconstruction import reconstruct_image  # noqa: F401
