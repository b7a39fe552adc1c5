"""Convex surrogates of the Jaccard (IoU) loss built from the Lovász extension."""

from .estimator import LinearPixelSegmenter, TrainingDiverged
from .harness import (
    ExperimentResult,
    SyntheticConfig,
    TrainConfig,
    absent_class_probe,
    bias_sweep,
    generate_circles,
    generate_multiclass,
    train_linear,
)
from .losses import (
    LossOutput,
    binary_cross_entropy,
    cross_entropy,
    hinge,
    jaccard_grad,
    jaccard_set_function,
    lovasz_hinge,
    lovasz_softmax,
    rahman_wang_iou,
    rahman_wang_scores,
    softmax_errors,
)
from .metrics import ConfusionAccumulator, IoUReport, dataset_miou, dice, image_miou, jaccard_index
from .optim import (
    LRSchedule,
    OptimizerState,
    ProxConfig,
    ProxNotConverged,
    in_jaccard_polymatroid,
    momentum_step,
    poly_lr,
    project_jaccard_polymatroid,
    prox_lovasz_hinge,
    toy_piecewise_objective,
)
from .sampling import equibatch_sampler
from .submodular import (
    ExtensionResult,
    SetFunction,
    is_submodular,
    lovasz_extension,
    threshold_oracle,
)

__version__ = "0.1.0"
