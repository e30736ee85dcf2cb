from .transformer import (
    FULL_SCALE,
    ModelConfig,
    Transformer,
    batch_arrays,
    masked_cross_entropy,
    trajectory_loss,
)
from .training import (
    Adam,
    TrainConfig,
    TrainState,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train,
    write_training_log,
)
from .ranking import RankedPrediction, rank_next_mutations, rank_without_location, strip_location

__all__ = [
    "Adam",
    "FULL_SCALE",
    "ModelConfig",
    "RankedPrediction",
    "TrainConfig",
    "TrainState",
    "TrainingDiverged",
    "Transformer",
    "batch_arrays",
    "load_checkpoint",
    "masked_cross_entropy",
    "rank_next_mutations",
    "rank_without_location",
    "save_checkpoint",
    "strip_location",
    "train",
    "trajectory_loss",
    "write_training_log",
]
