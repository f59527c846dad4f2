from .config import LossConfig, TrainConfig, dump_config, load_config, parse_config
from .infer import PlaneModel, infer, load_models, load_run, segment
from .optim import AdamW, cosine_lr, lr_at, restart_epochs
from ..data.dataset import Sample
from .trainer import PlaneResult, TrainingDiverged, train, train_plane

__all__ = ["AdamW", "LossConfig", "PlaneModel", "PlaneResult", "Sample", "TrainConfig", "TrainingDiverged",
           "cosine_lr", "dump_config", "infer", "load_config", "load_models", "load_run", "lr_at",
           "parse_config", "restart_epochs", "segment", "train", "train_plane"]
