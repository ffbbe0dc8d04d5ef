"""Multi-task sentiment regression/classification with dynamic adaptive task weighting."""
from .config import TrainConfig
from .dao import DaoNetwork
from .estimator import DAOSentimentRegressor
from .trainer import Trainer, evaluate, run, sweep

__version__ = "0.1.0"
__all__ = ["TrainConfig", "DaoNetwork", "DAOSentimentRegressor", "Trainer", "run", "sweep", "evaluate"]
