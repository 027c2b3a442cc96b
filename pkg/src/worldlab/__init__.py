"""World-state sequence modeling laboratory: an updater/extractor
transformer over a recurrent tokenized belief state, trained with
single-step gradient truncation, plus oracle-backed task environments
and an experiment suite."""

__version__ = "0.1.0"

from .model import ModelConfig, UpdaterExtractor, WorldStateRepr, init_world_state
from .training import TrainConfig, run_training

__all__ = [
    "ModelConfig", "UpdaterExtractor", "WorldStateRepr", "init_world_state",
    "TrainConfig", "run_training", "__version__",
]
