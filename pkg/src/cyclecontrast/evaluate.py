"""Frozen-representation evaluation: linear probing and k-NN retrieval.

Embeddings are extracted without augmentation, l2-normalized, and tagged
with (video id, frame index) so retrieval can exclude a query's own row.
Ties break toward the lower sample id everywhere, which keeps results
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import MomentumPair, backbone_features, encode
from .errors import ConfigError, DegenerateInputError, ParameterError
from .trainer import load_checkpoint
from .videos import VideoDataset

EMBED_SPACES = ("backbone", "video_head", "cycle_head")


@dataclass
class EmbeddingTable:
    """Unit-norm embedding rows with labels and sample identities."""

    rows: np.ndarray  # (N, d) float32, unit rows
    labels: np.ndarray  # (N,) int64 class ids
    video_ids: np.ndarray  # (N,) int64
    frame_ids: np.ndarray  # (N,) int64

    def __post_init__(self):
        n = self.rows.shape[0]
        if not (len(self.labels) == len(self.video_ids) == len(self.frame_ids) == n):
            raise ParameterError("table columns must all have the same length")


def embed_pair(pair: MomentumPair, dataset: VideoDataset, space: str = "backbone",
               batch_size: int = 512) -> EmbeddingTable:
    """Embed every frame with the query network of ``pair``."""
    if space not in EMBED_SPACES:
        raise ParameterError(f"space must be one of {EMBED_SPACES}, got {space!r}")
    cfg = pair.config
    if (cfg.input_height, cfg.input_width) != (dataset.height, dataset.width):
        raise ConfigError(
            f"checkpoint expects {cfg.input_height}x{cfg.input_width} frames, "
            f"dataset has {dataset.height}x{dataset.width}"
        )
    flat = dataset.frames.reshape(-1, dataset.height * dataset.width)
    chunks = []
    for lo in range(0, flat.shape[0], batch_size):
        batch = np.ascontiguousarray(flat[lo:lo + batch_size])
        if space == "backbone":
            feat = backbone_features(pair.query, batch).data
            norms = np.linalg.norm(feat, axis=1, keepdims=True)
            if np.any(norms <= 1e-12):
                raise DegenerateInputError("zero-norm backbone feature row")
            chunks.append((feat / norms).astype(np.float32))
        else:
            z_video, z_cycle = encode(pair.query, batch)
            chunks.append(z_video.data if space == "video_head" else z_cycle.data)
    rows = np.concatenate(chunks, axis=0)
    v, f = dataset.num_videos, dataset.frames_per_video
    return EmbeddingTable(
        rows=rows,
        labels=np.repeat(dataset.class_ids.astype(np.int64), f),
        video_ids=np.repeat(np.arange(v, dtype=np.int64), f),
        frame_ids=np.tile(np.arange(f, dtype=np.int64), v),
    )


def embed_dataset(checkpoint_path, dataset: VideoDataset,
                  space: str = "backbone") -> EmbeddingTable:
    """Load a checkpoint and embed every frame of the dataset."""
    pair, _, _ = load_checkpoint(checkpoint_path)
    return embed_pair(pair, dataset, space)


def video_level_table(table: EmbeddingTable) -> EmbeddingTable:
    """Collapse frame rows to one renormalized mean embedding per video."""
    vids = np.unique(table.video_ids)
    rows = np.empty((len(vids), table.rows.shape[1]), dtype=np.float32)
    labels = np.empty(len(vids), dtype=np.int64)
    for i, vid in enumerate(vids):
        mask = table.video_ids == vid
        mean = table.rows[mask].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm <= 1e-12:
            raise DegenerateInputError(f"video {vid} has a zero-norm mean embedding")
        rows[i] = mean / norm
        labels[i] = table.labels[mask][0]
    return EmbeddingTable(
        rows=rows,
        labels=labels,
        video_ids=vids.astype(np.int64),
        frame_ids=np.zeros(len(vids), dtype=np.int64),
    )


def linear_probe(train: EmbeddingTable, test: EmbeddingTable,
                 epochs: int = 200, lr: float = 0.1) -> float:
    """Multinomial logistic regression on frozen embeddings.

    Full-batch gradient descent from zero-initialized weights, no weight
    decay; with zero epochs the all-zero logits predict class 0. Returns
    test top-1 accuracy in [0, 1].
    """
    if epochs < 0:
        raise ParameterError(f"epochs must be >= 0, got {epochs}")
    if not lr > 0:
        raise ParameterError(f"lr must be > 0, got {lr}")
    classes = np.unique(train.labels)
    if len(classes) < 2:
        raise DegenerateInputError(
            f"linear probe needs >= 2 classes in the train table, got {len(classes)}"
        )
    num_classes = int(classes.max()) + 1
    x = train.rows.astype(np.float64)
    n = x.shape[0]
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), train.labels] = 1.0
    w = np.zeros((x.shape[1], num_classes))
    b = np.zeros(num_classes)
    for _ in range(epochs):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        p = e / e.sum(axis=1, keepdims=True)
        delta = (p - onehot) / n
        w -= lr * (x.T @ delta)
        b -= lr * delta.sum(axis=0)
    test_logits = test.rows.astype(np.float64) @ w + b
    pred = np.argmax(test_logits, axis=1)  # argmax takes the lowest index on ties
    return float(np.mean(pred == test.labels))


def knn_retrieval(query: EmbeddingTable, gallery: EmbeddingTable,
                  ks: list[int]) -> dict[int, float]:
    """Top-k class-hit rates under cosine ranking.

    A query counts as a hit for k if its class appears among the classes
    of its k nearest gallery rows. Gallery rows with the query's exact
    (video id, frame index) identity are excluded; ties rank the lower
    sample id first.
    """
    if gallery.rows.shape[0] == 0:
        raise ParameterError("gallery must be nonempty")
    ks = sorted(int(k) for k in ks)
    if ks[0] < 1:
        raise ParameterError(f"k must be >= 1, got {ks[0]}")
    if ks[-1] > gallery.rows.shape[0]:
        raise ParameterError(
            f"k {ks[-1]} exceeds gallery size {gallery.rows.shape[0]}"
        )
    # pre-sort the gallery by sample id so a stable similarity sort breaks
    # ties toward the lower id
    id_order = np.lexsort((gallery.frame_ids, gallery.video_ids))
    g_rows = gallery.rows[id_order]
    g_labels = gallery.labels[id_order]
    g_vids = gallery.video_ids[id_order]
    g_fids = gallery.frame_ids[id_order]

    sims = query.rows @ g_rows.T
    same = (query.video_ids[:, None] == g_vids[None, :]) & (
        query.frame_ids[:, None] == g_fids[None, :]
    )
    sims = np.where(same, -np.inf, sims)
    hits = {k: 0 for k in ks}
    for i in range(query.rows.shape[0]):
        order = np.argsort(-sims[i], kind="stable")
        ranked_labels = g_labels[order]
        for k in ks:
            if query.labels[i] in ranked_labels[:k]:
                hits[k] += 1
    n_q = query.rows.shape[0]
    return {k: hits[k] / n_q for k in ks}


def retrieval_report(query: EmbeddingTable, gallery: EmbeddingTable,
                     ks: list[int]) -> list[str]:
    rates = knn_retrieval(query, gallery, ks)
    return [f"top{k}_hit_rate = {rates[k]:.6f}" for k in sorted(rates)]
