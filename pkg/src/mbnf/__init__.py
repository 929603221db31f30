"""Multilingual bottleneck-feature toolkit.

Synthetic multilingual corpus generation, MFCC/pitch front-end, GMM/i-vector
estimation, flat-start monophone alignment, a shared-hidden-layer bottleneck
network with per-language block softmax, and code-switch-aware scoring.
"""

__version__ = "0.1.0"

from .corpus import LanguageId, PhoneSet, SynthConfig, UtteranceRecord
from .dsp import AudioSegment, FeatureMatrix, MfccConfig
from .errors import (
    ConfigError,
    DataError,
    IntegrityError,
    MbnfError,
    OverwriteError,
)
from .gmm import DiagGmm
from .ivector import BwStats, TvModel
from .net import BlockSoftmaxNet, NetSpec, TrainBatch, TrainSchedule

__all__ = [
    "AudioSegment",
    "BlockSoftmaxNet",
    "BwStats",
    "ConfigError",
    "DataError",
    "DiagGmm",
    "FeatureMatrix",
    "IntegrityError",
    "LanguageId",
    "MbnfError",
    "MfccConfig",
    "NetSpec",
    "OverwriteError",
    "PhoneSet",
    "SynthConfig",
    "TrainBatch",
    "TrainSchedule",
    "TvModel",
    "UtteranceRecord",
    "__version__",
]
