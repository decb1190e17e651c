"""Contrastive objectives: intra-image, intra-video, and cross-video cycle.

All three share the same classification form: the positive similarity is
classified against negative similarities under a temperature-scaled
softmax. The cycle objective first builds a differentiable soft nearest
neighbor of the query inside a sampled neighbor set, then classifies that
reconstruction back to a frame of the query's own video.

Conventions: query-side inputs are tape tensors; keys and negatives are
stop-gradient constants (plain arrays or tensors without grad). All rows
except the soft nearest neighbor are expected to be unit-norm already;
the soft nearest neighbor is renormalized internally because a convex
combination of unit rows is generally not unit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParameterError
from .validation import check_unit_rows

BACKWARD_NEGATIVE_MODES = ("remainder", "neighbor_set")


@dataclass
class LossConfig:
    """Knobs shared by the three objectives.

    ``lam`` weighs the cycle term in the combined objective;
    ``backward_negatives`` picks the negative pool for the cycle
    classification (the bank remainder by default, or the neighbor set
    itself); ``top_k`` optionally restricts the forward step to the most
    similar neighbors; ``intra_image_weight`` adds an explicit same-frame
    term to the combined objective (off by default).
    """

    temperature: float = 0.07
    lam: float = 0.1
    include_self_view: bool = False
    backward_negatives: str = "remainder"
    top_k: int | None = None
    intra_image_weight: float = 0.0

    def validate(self) -> "LossConfig":
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.lam < 0:
            raise ParameterError(f"lam must be >= 0, got {self.lam}")
        if self.intra_image_weight < 0:
            raise ParameterError(
                f"intra_image_weight must be >= 0, got {self.intra_image_weight}"
            )
        if self.backward_negatives not in BACKWARD_NEGATIVE_MODES:
            raise ParameterError(
                f"backward_negatives must be one of {BACKWARD_NEGATIVE_MODES}, "
                f"got {self.backward_negatives!r}"
            )
        if self.top_k is not None and self.top_k <= 0:
            raise ParameterError(f"top_k must be >= 1, got {self.top_k}")
        return self


@dataclass
class SoftNeighborResult:
    """Soft nearest neighbor of each query plus its mixing weights."""

    q_hat: T.Tensor
    alpha: T.Tensor


def _as_const(x) -> T.Tensor:
    return x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x))


def _zero_like_scalar(q: T.Tensor) -> T.Tensor:
    return T.Tensor(np.zeros((), dtype=q.data.dtype))


def _infonce(q: T.Tensor, positive: T.Tensor, negatives: T.Tensor,
             temperature: float) -> T.Tensor:
    """Mean over rows of -log( exp(pos/t) / (exp(pos/t) + sum exp(neg/t)) ).

    ``q`` and ``positive`` are (n, d); ``negatives`` is (M, d) shared by
    every row. With no negatives the ratio is identically 1 and the loss 0.
    """
    if negatives.data.shape[0] == 0:
        return _zero_like_scalar(q)
    pos = T.rowwise_dot(q, positive)
    neg = T.matmul(q, T.Tensor(np.ascontiguousarray(negatives.data.T)))
    logits = T.concat_cols([pos, neg])
    targets = np.zeros(q.data.shape[0], dtype=np.int64)
    return T.cross_entropy_from_logits(logits, targets, temperature)


def intra_image_loss(q_i: T.Tensor, k_i, negatives, cfg: LossConfig) -> T.Tensor:
    """Classify each query against a second view of the same image."""
    cfg.validate()
    k_i = _as_const(k_i)
    negatives = _as_const(negatives)
    check_unit_rows(q_i.data, "q_i")
    check_unit_rows(k_i.data, "k_i")
    check_unit_rows(negatives.data, "negatives")
    return _infonce(q_i, k_i, negatives, cfg.temperature)


def intra_video_loss(q_i: T.Tensor, k_j, negatives, cfg: LossConfig) -> T.Tensor:
    """Classify each query against another frame of the same video.

    Identical contract to :func:`intra_image_loss`; only the provenance of
    the positive differs, so feeding the same-view key reduces one to the
    other exactly.
    """
    cfg.validate()
    k_j = _as_const(k_j)
    negatives = _as_const(negatives)
    check_unit_rows(q_i.data, "q_i")
    check_unit_rows(k_j.data, "k_j")
    check_unit_rows(negatives.data, "negatives")
    return _infonce(q_i, k_j, negatives, cfg.temperature)


def soft_nearest_neighbor(
    q_cycle: T.Tensor,
    neighbors: np.ndarray,
    cfg: LossConfig,
    selected: np.ndarray | None = None,
) -> SoftNeighborResult:
    """Build each query's soft nearest neighbor inside the neighbor set.

    Mixing weights are the temperature-softmaxed cosine similarities; the
    result is their convex combination of neighbor rows. Gradients flow
    into the queries only; neighbor rows are bank constants. ``selected``
    optionally restricts each row to its own top-k subset of neighbors.
    """
    cfg.validate()
    neighbors = np.asarray(neighbors)
    if neighbors.ndim != 2 or neighbors.shape[0] == 0:
        raise ParameterError(
            f"neighbor set must be a nonempty matrix, got shape {neighbors.shape}"
        )
    check_unit_rows(q_cycle.data, "q_cycle")
    check_unit_rows(neighbors, "neighbors")
    if selected is None:
        sims = T.matmul(q_cycle, T.Tensor(np.ascontiguousarray(neighbors.T)))
        alpha = T.softmax_rows(sims, cfg.temperature)
        q_hat = T.matmul(alpha, T.Tensor(neighbors))
    else:
        blocks = neighbors[selected]  # (n, k, d) constant gather
        sims = T.rows_dot_blocks(q_cycle, blocks)
        alpha = T.softmax_rows(sims, cfg.temperature)
        q_hat = T.rows_weighted_sum(alpha, blocks)
    return SoftNeighborResult(q_hat=q_hat, alpha=alpha)


def cycle_loss(
    q_hat: T.Tensor,
    k_j,
    negatives,
    cfg: LossConfig,
    extra_negatives: np.ndarray | None = None,
) -> T.Tensor:
    """Classify the soft nearest neighbor back to the query's video.

    ``q_hat`` is renormalized here, so similarities stay cosine even
    though the reconstruction is not unit-norm. ``extra_negatives`` is an
    optional per-row (n, E, d) block of additional negatives (the rows a
    top-k filter discarded).
    """
    cfg.validate()
    k_j = _as_const(k_j)
    negatives = _as_const(negatives)
    check_unit_rows(k_j.data, "k_j")
    check_unit_rows(negatives.data, "negatives")
    n_extra = 0 if extra_negatives is None else extra_negatives.shape[1]
    if negatives.data.shape[0] == 0 and n_extra == 0:
        return _zero_like_scalar(q_hat)
    qn = T.l2_normalize(q_hat)
    cols = [T.rowwise_dot(qn, k_j)]
    if negatives.data.shape[0] > 0:
        cols.append(T.matmul(qn, T.Tensor(np.ascontiguousarray(negatives.data.T))))
    if n_extra > 0:
        check_unit_rows(
            np.asarray(extra_negatives).reshape(-1, qn.data.shape[1]),
            "extra negatives",
        )
        cols.append(T.rows_dot_blocks(qn, extra_negatives))
    logits = T.concat_cols(cols)
    targets = np.zeros(qn.data.shape[0], dtype=np.int64)
    return T.cross_entropy_from_logits(logits, targets, cfg.temperature)


def combined_loss(
    intra_video: T.Tensor | None,
    cycle: T.Tensor | None,
    intra_image: T.Tensor | None,
    cfg: LossConfig,
) -> T.Tensor:
    """Total objective: intra-video plus lam * cycle, with an optional
    explicitly weighted intra-image term. Absent parts are skipped (the
    cycle term is absent while the bank is warming up)."""
    cfg.validate()
    parts = []
    if intra_video is not None:
        parts.append(intra_video)
    if cycle is not None:
        parts.append(T.scale(cycle, cfg.lam))
    if intra_image is not None and cfg.intra_image_weight > 0:
        parts.append(T.scale(intra_image, cfg.intra_image_weight))
    if not parts:
        raise ParameterError("combined_loss needs at least one loss part")
    total = parts[0]
    for part in parts[1:]:
        total = T.add(total, part)
    return total


def degeneracy_probe(q_cycle: T.Tensor, k_pp, k_j, negatives,
                     cfg: LossConfig) -> tuple[float, float]:
    """Evaluate the collapse case where the neighbor set is exactly one
    extra view of the query.

    With a single neighbor the soft nearest neighbor equals that view, so
    the cycle objective coincides with the intra-video objective evaluated
    at the extra view. Returns (cycle value, intra-video value); equality
    is the regression check.
    """
    cfg.validate()
    k_pp = np.asarray(k_pp)
    if k_pp.ndim != 2 or k_pp.shape[0] != q_cycle.data.shape[0]:
        raise ParameterError(
            f"k_pp must hold one row per query, got shape {k_pp.shape}"
        )
    snn = soft_nearest_neighbor(q_cycle, k_pp, cfg, selected=_row_identity(k_pp))
    cycle_val = cycle_loss(snn.q_hat, k_j, negatives, cfg)
    intra_val = intra_video_loss(T.Tensor(k_pp), k_j, negatives, cfg)
    return float(cycle_val.data), float(intra_val.data)


def _row_identity(rows: np.ndarray) -> np.ndarray:
    # each query's neighbor "set" is exactly its own row of k_pp
    return np.arange(rows.shape[0], dtype=np.int64)[:, None]
