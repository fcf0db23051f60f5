"""Python bindings for the nowcasting toolkit."""

from ._nowcast import (
    ConfigError,
    ContractViolation,
    DomainError,
    FormatError,
    IngestionError,
    IoError,
    NowcastError,
    NumericalError,
    ShapeMismatch,
    __version__,
    advect,
    confusion,
    cutoffs,
    dataset,
    estimate_flow,
    evaluate,
    normalize_crf,
    scores,
    synth,
    threshold_classes,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
