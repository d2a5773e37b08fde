from ._regmatch import (
    AdapterError,
    ConfigError,
    DataError,
    DomainError,
    FormatError,
    ShapeError,
    TrainingError,
    attend,
    ensemble,
    five_fold,
    format_score,
    grad_check,
    grad_check_fragments,
    hinge_loss,
    recall_at_k,
    run_cli,
    score_baseline,
    wasserstein_1d,
)

__all__ = [
    "AdapterError",
    "ConfigError",
    "DataError",
    "DomainError",
    "FormatError",
    "ShapeError",
    "TrainingError",
    "attend",
    "ensemble",
    "five_fold",
    "format_score",
    "grad_check",
    "grad_check_fragments",
    "hinge_loss",
    "recall_at_k",
    "run_cli",
    "score_baseline",
    "wasserstein_1d",
]
