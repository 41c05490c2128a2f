"""Parallel-encoder recursive fusion for salient object detection.

Two heterogeneous convolutional encoders exchange features over several
recursion stages (detail refinement in one direction, dense aggregation
in the other) and a selective-fusion head turns the final-stage features
into a saliency map. The package also ships the training engine, the
standard saliency metric suite, a synthetic-shape dataset generator, and
the ``rmmdf`` command-line harness.
"""

__version__ = "0.1.0"

from .config import (  # noqa: F401
    LossWeights,
    NetworkConfig,
    OptimizerConfig,
    PRESETS,
    preset,
    load_config,
    save_config,
    split_seed,
)
from .engine import (  # noqa: F401
    ForwardResult,
    LossBundle,
    RecursiveFusionNet,
    StageState,
    Trainer,
    build_model,
    compute_losses,
    cross_entropy_loss,
    load_checkpoint,
    predict_maps,
    save_checkpoint,
)
from .errors import ConfigError, DivergenceError, ShapeError  # noqa: F401
