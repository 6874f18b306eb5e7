"""Backward-compatible embedding training with prototype perturbation."""

from .core_math import SeededRng, cosine, l2_normalize, pca_project_2d
from .encoder import Architecture, BclMethod, EncoderParams, MethodKind, TrainConfig, train_bcl, train_old
from .losses import LossConfig, bc_loss, cross_entropy, total_loss
from .metrics import MetricsReport, evaluate_pair, p_metrics
from .ndpp import NdppConfig
from .odpp import OdppConfig
from .prototypes import EmbeddingMatrix, PrototypeSet, SpaceTag, compute_prototypes, knn, knn_cross
from .synth import DatasetSplit, SynthConfig, generate, sequential_splits

__version__ = "0.1.0"
