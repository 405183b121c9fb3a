"""Band-power features and a from-scratch BiLSTM stack for 9-class EEG emotion ratings."""

from .config import RunConfig
from .data_model import FeatureDataset, LabelDim, TrialSet
from .errors import EmoError

__all__ = ["EmoError", "FeatureDataset", "LabelDim", "RunConfig", "TrialSet"]
__version__ = "0.1.0"
