"""Scikit-learn style estimator facade over the training and embedding
pipeline, so the representation learner composes with the wider ecosystem
(`get_params`/`set_params`, clone, pipelines).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .encoder import EncoderConfig, MomentumConfig
from .errors import DimensionError, ParameterError
from .evaluate import EMBED_SPACES, embed_pair
from .losses import LossConfig
from .trainer import QueueConfig, TrainConfig, Trainer
from .videos import VideoDataset, read_dataset


class CycleContrastEncoder(BaseEstimator, TransformerMixin):
    """Self-supervised video-frame encoder.

    ``fit`` consumes a :class:`VideoDataset` (or a path to one) and trains
    the encoder with the configured contrastive objective; ``transform``
    maps frames to unit-norm embeddings of the chosen space. Labels are
    never read during fitting.

    Parameters mirror the flat run-configuration keys; see the package
    README for the full glossary.
    """

    def __init__(
        self,
        hidden_widths=(256, 128),
        embedding_dim=64,
        proj_dim=64,
        epochs=20,
        batch_size=64,
        lr=0.015,
        sgd_momentum=0.9,
        weight_decay=1e-4,
        lr_schedule="cosine",
        loss_mode="full",
        temperature=0.07,
        lam=0.1,
        include_self_view=False,
        backward_negatives="remainder",
        top_k=None,
        intra_image_weight=0.0,
        queue_capacity=4096,
        neighbor_size=1024,
        ema_momentum=0.999,
        space="backbone",
        seed=0,
        out_dir=None,
    ):
        self.hidden_widths = hidden_widths
        self.embedding_dim = embedding_dim
        self.proj_dim = proj_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.sgd_momentum = sgd_momentum
        self.weight_decay = weight_decay
        self.lr_schedule = lr_schedule
        self.loss_mode = loss_mode
        self.temperature = temperature
        self.lam = lam
        self.include_self_view = include_self_view
        self.backward_negatives = backward_negatives
        self.top_k = top_k
        self.intra_image_weight = intra_image_weight
        self.queue_capacity = queue_capacity
        self.neighbor_size = neighbor_size
        self.ema_momentum = ema_momentum
        self.space = space
        self.seed = seed
        self.out_dir = out_dir

    def _train_config(self, dataset: VideoDataset) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.sgd_momentum,
            weight_decay=self.weight_decay,
            lr_schedule=self.lr_schedule,
            seed=self.seed,
            loss_mode=self.loss_mode,
            loss=LossConfig(
                temperature=self.temperature,
                lam=self.lam,
                include_self_view=self.include_self_view,
                backward_negatives=self.backward_negatives,
                top_k=self.top_k,
                intra_image_weight=self.intra_image_weight,
            ),
            queue=QueueConfig(
                capacity=self.queue_capacity, neighbor_size=self.neighbor_size
            ),
            encoder=EncoderConfig(
                input_height=dataset.height,
                input_width=dataset.width,
                hidden_widths=tuple(self.hidden_widths),
                embedding_dim=self.embedding_dim,
                proj_dim=self.proj_dim,
            ),
            ema=MomentumConfig(coefficient=self.ema_momentum),
        ).validate()

    @staticmethod
    def _as_dataset(X) -> VideoDataset:
        if isinstance(X, VideoDataset):
            return X
        if isinstance(X, (str, bytes)) or hasattr(X, "__fspath__"):
            return read_dataset(X)
        raise ParameterError(
            "expected a VideoDataset or a dataset path, got "
            f"{type(X).__name__}"
        )

    def fit(self, X, y=None):
        """Train on a video dataset; ``y`` is ignored (self-supervised)."""
        dataset = self._as_dataset(X)
        trainer = Trainer(self._train_config(dataset), dataset)
        if self.out_dir is not None:
            self.run_result_ = trainer.run(self.out_dir)
        else:
            for _ in range(trainer.total_steps):
                trainer.train_step()
            self.run_result_ = None
        self.pair_ = trainer.pair
        self.n_features_in_ = dataset.height * dataset.width
        self._frame_shape_ = (dataset.height, dataset.width)
        return self

    def transform(self, X) -> np.ndarray:
        """Embed frames into the configured space (unit rows).

        Accepts a VideoDataset/path, a stack of frames (n, H, W), or
        already-flattened rows (n, H*W).
        """
        if not hasattr(self, "pair_"):
            raise NotFittedError("CycleContrastEncoder is not fitted yet")
        if isinstance(X, np.ndarray):
            h, w = self._frame_shape_
            if X.ndim == 3 and X.shape[1:] == (h, w):
                frames = X[:, None, :, :].astype(np.float32)
            elif X.ndim == 2 and X.shape[1] == h * w:
                frames = X.reshape(-1, 1, h, w).astype(np.float32)
            else:
                raise DimensionError(
                    f"expected frames of shape (n, {h}, {w}) or (n, {h * w}), "
                    f"got {X.shape}"
                )
            dataset = VideoDataset(
                frames=frames,
                class_ids=np.zeros(frames.shape[0], dtype=np.uint16),
                num_classes=1,
                seed=0,
            )
        else:
            dataset = self._as_dataset(X)
        return embed_pair(self.pair_, dataset, self.space).rows

    def _more_tags(self):  # pragma: no cover - sklearn introspection
        return {"X_types": ["3darray"], "non_deterministic": False}


__all__ = ["CycleContrastEncoder", "EMBED_SPACES"]
