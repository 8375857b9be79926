"""Information-theoretic co-training of predictor and confirmation models."""

from ._itct import (
    ConfigError,
    DataError,
    ShapeError,
    __version__,
    cross_entropy_term,
    entropy_of_mean,
    evaluate,
    gradcheck,
    normalize,
    run_cli,
    synth,
    train,
    true_mi_oracle,
)

__all__ = [
    "ConfigError",
    "DataError",
    "ShapeError",
    "__version__",
    "cross_entropy_term",
    "entropy_of_mean",
    "evaluate",
    "gradcheck",
    "normalize",
    "run_cli",
    "synth",
    "train",
    "true_mi_oracle",
]
