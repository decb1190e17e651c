"""Cross-video cycle-consistent contrastive learning, desk scale.

The package trains a small encoder so that (a) two frames of one video
embed close together and (b) each frame's soft nearest neighbor, built
from frames of *other* videos, classifies back to the frame's own video.
Everything is deterministic given its seeds.
"""

from .encoder import (
    EncoderConfig,
    MomentumConfig,
    MomentumPair,
    encode,
    ema_update,
    init_params,
)
from .errors import CycleContrastError
from .estimator import CycleContrastEncoder
from .evaluate import EmbeddingTable, embed_dataset, knn_retrieval, linear_probe
from .losses import (
    LossConfig,
    SoftNeighborResult,
    combined_loss,
    cycle_loss,
    degeneracy_probe,
    intra_image_loss,
    intra_video_loss,
    soft_nearest_neighbor,
)
from .memory import MemoryQueue, NeighborSplit, top_k_filter
from .tensor import Tape, Tensor, gradcheck
from .trainer import MetricsRecord, QueueConfig, TrainConfig, Trainer, fit, lr_at
from .videos import (
    AugmentConfig,
    VideoDataset,
    augment,
    generate,
    read_dataset,
    sample_pair_batch,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "CycleContrastEncoder",
    "CycleContrastError",
    "EmbeddingTable",
    "EncoderConfig",
    "LossConfig",
    "MemoryQueue",
    "MetricsRecord",
    "MomentumConfig",
    "MomentumPair",
    "NeighborSplit",
    "QueueConfig",
    "SoftNeighborResult",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "VideoDataset",
    "augment",
    "combined_loss",
    "cycle_loss",
    "degeneracy_probe",
    "embed_dataset",
    "ema_update",
    "encode",
    "fit",
    "generate",
    "gradcheck",
    "init_params",
    "intra_image_loss",
    "intra_video_loss",
    "knn_retrieval",
    "linear_probe",
    "lr_at",
    "read_dataset",
    "sample_pair_batch",
    "soft_nearest_neighbor",
    "top_k_filter",
    "write_dataset",
]
