from .bootstrap import N_RESAMPLES, BootstrapResult, bootstrap_ci
from .metrics import (
    SCALAR_METRICS,
    ConfusionMatrix,
    MetricsReport,
    auprc,
    cm_metrics,
    compute_metrics,
    confusion,
    log_loss,
    roc_auc,
)

__all__ = [
    "N_RESAMPLES", "SCALAR_METRICS", "BootstrapResult", "ConfusionMatrix", "MetricsReport",
    "auprc", "bootstrap_ci", "cm_metrics", "compute_metrics", "confusion", "log_loss",
    "roc_auc",
]
