"""Model assembly, training, evaluation and persistence."""

from honeyscan.trainkit.checkpoint import load_checkpoint, save_checkpoint
from honeyscan.trainkit.history import export_history
from honeyscan.trainkit.model import DEFAULT_MODEL, TINY_MODEL, ModelDef, Network, build_model, forward
from honeyscan.trainkit.train import TrainConfig, TrainHistory, evaluate, train

__all__ = [
    "DEFAULT_MODEL", "TINY_MODEL", "ModelDef", "Network", "TrainConfig", "TrainHistory",
    "build_model", "evaluate", "export_history", "forward", "load_checkpoint", "save_checkpoint", "train",
]
