"""Few-shot image classification with adaptive multi-scale spatial-frequency fusion."""
from .config import EpisodeConfig, ModelConfig, RunConfig, TrainConfig
from .model import AMSFNet

__all__ = ["AMSFNet", "EpisodeConfig", "ModelConfig", "RunConfig", "TrainConfig"]
__version__ = "0.1.0"
