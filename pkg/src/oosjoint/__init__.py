"""Joint domain/intent classification with out-of-scope detection.

The model couples a coarse domain head and a fine intent head through
residual transform blocks and trains them with a learnable loss mix; at
prediction time a probability threshold reroutes low-confidence intents
to the explicit "oos" class.
"""

from .data import Dataset, LabeledExample, LabelSpace, load_oos_dataset, synth_dataset
from .evaluation import EvalReport, ThresholdConfig, compute_metrics, predict, threshold_sweep
from .model import JointModel, StructureTag, forward, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainHistory, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EvalReport",
    "JointModel",
    "LabelSpace",
    "LabeledExample",
    "StructureTag",
    "ThresholdConfig",
    "TrainConfig",
    "TrainHistory",
    "compute_metrics",
    "forward",
    "load_checkpoint",
    "load_oos_dataset",
    "predict",
    "save_checkpoint",
    "synth_dataset",
    "threshold_sweep",
    "train",
]
