"""The optimization loop: pair batches -> query/key encoding -> losses ->
SGD step -> EMA update -> queue update, with checkpointing and metrics.

Given identical configuration and dataset bytes, a run is bit-reproducible:
every random decision derives from the configured seed, and the metrics
CSV and checkpoints are byte-identical across repeats. Wall-clock timings
are therefore kept out of the CSV; they only appear in the run summary.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses as L
from . import tensor as T
from .encoder import (
    EncoderConfig,
    MomentumConfig,
    MomentumPair,
    encode,
    ema_update,
    init_params,
    parameters,
    read_checkpoint,
    write_checkpoint,
)
from .errors import ConfigError, NonFiniteLossError, ParameterError
from .memory import MemoryQueue, NeighborSplit, top_k_filter
from .rng import make_rng
from .videos import AugmentConfig, VideoDataset, sample_pair_batch

LOSS_MODES = ("full", "intra-video", "intra-image")

METRICS_COLUMNS = (
    "epoch",
    "step",
    "loss_total",
    "loss_intra_video",
    "loss_cycle",
    "loss_intra_image",
    "lr",
    "queue_fill",
)


@dataclass
class QueueConfig:
    capacity: int = 4096
    neighbor_size: int = 1024


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.015
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_schedule: str = "cosine"
    seed: int = 0
    loss_mode: str = "full"
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    queue: QueueConfig = field(default_factory=QueueConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    ema: MomentumConfig = field(default_factory=MomentumConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> "TrainConfig":
        if not self.lr > 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr_schedule not in ("cosine", "step"):
            raise ParameterError(
                f"lr_schedule must be 'cosine' or 'step', got {self.lr_schedule!r}"
            )
        if self.loss_mode not in LOSS_MODES:
            raise ParameterError(
                f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}"
            )
        if self.queue.neighbor_size < 1 or self.queue.capacity < 1:
            raise ParameterError("queue sizes must be >= 1")
        if 2 * self.queue.neighbor_size > self.queue.capacity:
            raise ParameterError(
                "cycle warm-up needs capacity >= 2*neighbor_size, got "
                f"capacity={self.queue.capacity}, neighbor_size={self.queue.neighbor_size}"
            )
        self.loss.validate()
        self.encoder.validate()
        self.ema.validate()
        self.augment.validate()
        return self


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    loss_total: float
    loss_intra_video: float | None
    loss_cycle: float | None
    loss_intra_image: float | None
    lr: float
    queue_fill: int
    wall_time: float


@dataclass
class StepDebug:
    """Per-step internals captured for invariant checks in tests."""

    query_vids: np.ndarray
    cycle_ran: bool
    fill_at_sample: int
    masked_count: int
    neighbor_slots: np.ndarray | None
    neighbor_vids: np.ndarray | None
    remainder_slots: np.ndarray | None
    remainder_vids: np.ndarray | None
    video_negative_vids: np.ndarray
    self_rows_in_neighbors: bool


@dataclass
class RunResult:
    checkpoint_path: Path
    metrics_path: Path
    summary_path: Path
    epoch_checkpoints: list[Path]
    records: list[MetricsRecord]


def lr_at(schedule: str, step: int, total_steps: int, base_lr: float) -> float:
    """Learning rate at a 0-based step of a run with ``total_steps`` steps."""
    if step > total_steps:
        raise ParameterError(f"step {step} exceeds total_steps {total_steps}")
    if schedule == "cosine":
        if total_steps == 0:
            return base_lr
        return base_lr * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))
    if schedule == "step":
        factor = 1.0
        if step >= 0.6 * total_steps:
            factor *= 0.1
        if step >= 0.8 * total_steps:
            factor *= 0.1
        return base_lr * factor
    raise ParameterError(f"unknown lr schedule {schedule!r}")


def _flatten(batch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(batch.reshape(batch.shape[0], -1))


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class Trainer:
    """Drives training; :meth:`step` is exposed so tests can inspect the
    state between iterations, :meth:`run` writes the full artifact set."""

    def __init__(self, config: TrainConfig, dataset: VideoDataset):
        self.config = config.validate()
        if (config.encoder.input_height, config.encoder.input_width) != (
            dataset.height,
            dataset.width,
        ):
            raise ConfigError(
                f"encoder expects {config.encoder.input_height}x"
                f"{config.encoder.input_width} frames, dataset has "
                f"{dataset.height}x{dataset.width}"
            )
        if config.batch_size > dataset.num_videos:
            raise ParameterError(
                f"batch_size {config.batch_size} exceeds "
                f"{dataset.num_videos} videos"
            )
        # training only ever touches the frames; labels stay with eval
        self._frames_view = VideoDataset(
            frames=dataset.frames,
            class_ids=np.zeros(dataset.num_videos, dtype=np.uint16),
            num_classes=dataset.num_classes,
            seed=dataset.seed,
        )
        self.pair: MomentumPair = init_params(config.encoder, config.seed)
        d = config.encoder.proj_dim
        self.video_queue = MemoryQueue(config.queue.capacity, d)
        self.cycle_queue = MemoryQueue(config.queue.capacity, d)
        self.velocities = [np.zeros_like(p.data) for p in parameters(self.pair.query)]
        self.step_index = 0
        self.steps_per_epoch = dataset.num_videos // config.batch_size
        self.total_steps = config.epochs * self.steps_per_epoch
        self.last_debug: StepDebug | None = None

    # -- pieces ----------------------------------------------------------

    def _sgd_update(self, lr: float) -> None:
        cfg = self.config
        mu = np.float32(cfg.momentum)
        wd = np.float32(cfg.weight_decay)
        lr32 = np.float32(lr)
        for p, v in zip(parameters(self.pair.query), self.velocities):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            g = g + wd * p.data
            v *= mu
            v += g
            p.data -= lr32 * v
            p.grad = None

    def _cycle_terms(self, q_c: T.Tensor, split: NeighborSplit,
                     k_self: np.ndarray | None):
        """Soft nearest neighbor and the cycle negatives for this step."""
        cfg = self.config.loss
        if cfg.top_k is not None:
            split = top_k_filter(q_c.data, split, min(cfg.top_k, split.neighbors.shape[0]))
        if k_self is not None:
            # per-query self view appended to the sampled set; a top-k
            # filter ranks only the shared sampled rows
            m = split.neighbors.shape[0]
            n = q_c.data.shape[0]
            pool = np.concatenate([split.neighbors, k_self.astype(np.float32)], axis=0)
            if split.selected is not None:
                base = split.selected
            else:
                base = np.broadcast_to(np.arange(m, dtype=np.int64), (n, m))
            selected = np.concatenate(
                [base, (m + np.arange(n, dtype=np.int64))[:, None]], axis=1
            )
            snn = L.soft_nearest_neighbor(q_c, pool, cfg, selected=selected)
        elif split.selected is not None:
            snn = L.soft_nearest_neighbor(q_c, split.neighbors, cfg,
                                          selected=split.selected)
        else:
            snn = L.soft_nearest_neighbor(q_c, split.neighbors, cfg)

        if cfg.backward_negatives == "neighbor_set":
            negatives = split.neighbors
            extra = None  # discarded rows are already in the neighbor set
        else:
            negatives = split.remainder
            extra = (
                split.neighbors[split.discarded]
                if split.discarded is not None and split.discarded.shape[1] > 0
                else None
            )
        return snn, negatives, extra

    # -- one optimization step -------------------------------------------

    def train_step(self) -> MetricsRecord:
        t0 = time.perf_counter()
        cfg = self.config
        step = self.step_index
        step_seed = int(
            np.random.SeedSequence([cfg.seed, 0x53544550, step]).generate_state(1)[0]
        )
        mode = cfg.loss_mode
        want_alt = mode == "intra-image" or (
            mode == "full" and cfg.loss.intra_image_weight > 0
        )
        want_self = mode == "full" and cfg.loss.include_self_view
        batch = sample_pair_batch(
            self._frames_view, cfg.batch_size, step_seed, aug=cfg.augment,
            want_alt=want_alt, want_self=want_self,
        )
        vids = batch.video_ids

        # key-side forwards run outside the tape: no gradients ever
        if mode == "intra-image":
            k_v, k_c = encode(self.pair.key, _flatten(batch.x_alt))
        else:
            k_v, k_c = encode(self.pair.key, _flatten(batch.x_j))
        k_alt_v = None
        if mode == "full" and cfg.loss.intra_image_weight > 0:
            k_alt_v, _ = encode(self.pair.key, _flatten(batch.x_alt))
        k_self_c = None
        if want_self:
            _, k_self_t = encode(self.pair.key, _flatten(batch.x_self))
            k_self_c = k_self_t.data

        video_negs, _ = self.video_queue.snapshot_excluding(vids)
        video_neg_vids = self.video_queue.video_ids[
            self.video_queue.unmasked_slots(vids)
        ].copy()

        split = None
        neighbor_vids = remainder_vids = None
        fill_at_sample = self.cycle_queue.fill
        if mode == "full" and self.cycle_queue.fill >= 2 * cfg.queue.neighbor_size:
            split = self.cycle_queue.sample_neighbor_split(
                cfg.queue.neighbor_size, vids, make_rng(step_seed, 0x554E49)
            )
            if split is not None:
                # capture slot tags now; this step's enqueue may overwrite them
                neighbor_vids = self.cycle_queue.video_ids[split.neighbor_slots].copy()
                remainder_vids = self.cycle_queue.video_ids[split.remainder_slots].copy()

        lr = lr_at(cfg.lr_schedule, step, self.total_steps, cfg.lr)
        intra_video_t = intra_image_t = cycle_t = None
        with T.Tape() as tape:
            q_v, q_c = encode(self.pair.query, _flatten(batch.x_i))
            if mode == "intra-image":
                intra_image_t = L.intra_image_loss(q_v, k_v, video_negs, cfg.loss)
                total_t = intra_image_t
            else:
                intra_video_t = L.intra_video_loss(q_v, k_v, video_negs, cfg.loss)
                if mode == "full" and k_alt_v is not None:
                    intra_image_t = L.intra_image_loss(
                        q_v, k_alt_v, video_negs, cfg.loss
                    )
                if split is not None:
                    snn, negatives, extra = self._cycle_terms(q_c, split, k_self_c)
                    cycle_t = L.cycle_loss(
                        snn.q_hat, k_c, negatives, cfg.loss, extra_negatives=extra
                    )
                if mode == "full":
                    total_t = L.combined_loss(
                        intra_video_t, cycle_t, intra_image_t, cfg.loss
                    )
                else:
                    total_t = intra_video_t

        values = [
            float(t.data)
            for t in (total_t, intra_video_t, cycle_t, intra_image_t)
            if t is not None
        ]
        if not all(np.isfinite(values)):
            raise NonFiniteLossError(
                f"non-finite loss at step {step} (batch seed {step_seed})",
                step=step,
                batch_seed=step_seed,
            )

        tape.backward(total_t)
        self._sgd_update(lr)
        ema_update(self.pair.key, self.pair.query, cfg.ema)
        self.video_queue.enqueue_dequeue(k_v.data, vids)
        self.cycle_queue.enqueue_dequeue(k_c.data, vids)

        self.last_debug = StepDebug(
            query_vids=vids.copy(),
            cycle_ran=split is not None,
            fill_at_sample=fill_at_sample,
            masked_count=split.masked_count if split is not None else 0,
            neighbor_slots=split.neighbor_slots.copy() if split is not None else None,
            neighbor_vids=neighbor_vids,
            remainder_slots=(
                split.remainder_slots.copy() if split is not None else None
            ),
            remainder_vids=remainder_vids,
            video_negative_vids=video_neg_vids,
            self_rows_in_neighbors=k_self_c is not None,
        )
        self.step_index += 1
        return MetricsRecord(
            epoch=step // self.steps_per_epoch if self.steps_per_epoch else 0,
            step=step,
            loss_total=float(total_t.data),
            loss_intra_video=(
                float(intra_video_t.data) if intra_video_t is not None else None
            ),
            loss_cycle=float(cycle_t.data) if cycle_t is not None else None,
            loss_intra_image=(
                float(intra_image_t.data) if intra_image_t is not None else None
            ),
            lr=float(lr),
            queue_fill=self.cycle_queue.fill,
            wall_time=time.perf_counter() - t0,
        )

    # -- full run ----------------------------------------------------------

    def checkpoint_bytes_trailer(self) -> bytes:
        return self.video_queue.to_bytes() + self.cycle_queue.to_bytes()

    def run(self, out_dir) -> RunResult:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        summary_path = out / "summary.json"
        final_path = out / "final.ckpt"
        epoch_paths: list[Path] = []
        records: list[MetricsRecord] = []
        started = time.perf_counter()

        with open(metrics_path, "w", newline="") as fh:
            fh.write(",".join(METRICS_COLUMNS) + "\n")
            for step in range(self.total_steps):
                rec = self.train_step()
                records.append(rec)
                row = (
                    rec.epoch, rec.step, rec.loss_total, rec.loss_intra_video,
                    rec.loss_cycle, rec.loss_intra_image, rec.lr, rec.queue_fill,
                )
                fh.write(",".join(_fmt_cell(v) for v in row) + "\n")
                if (step + 1) % self.steps_per_epoch == 0:
                    epoch = (step + 1) // self.steps_per_epoch
                    path = out / f"epoch_{epoch:03d}.ckpt"
                    write_checkpoint(path, self.pair, self.checkpoint_bytes_trailer())
                    epoch_paths.append(path)
        write_checkpoint(final_path, self.pair, self.checkpoint_bytes_trailer())

        per_epoch: dict[int, list[float]] = {}
        for rec in records:
            per_epoch.setdefault(rec.epoch, []).append(rec.loss_total)
        summary = {
            "steps": self.total_steps,
            "steps_per_epoch": self.steps_per_epoch,
            "loss_total_per_epoch": {
                str(e): float(np.mean(v)) for e, v in sorted(per_epoch.items())
            },
            "final_loss_total": records[-1].loss_total if records else None,
            "elapsed_seconds": time.perf_counter() - started,
            "wall_time_per_step_seconds": (
                float(np.mean([r.wall_time for r in records])) if records else None
            ),
        }
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return RunResult(
            checkpoint_path=final_path,
            metrics_path=metrics_path,
            summary_path=summary_path,
            epoch_checkpoints=epoch_paths,
            records=records,
        )


def fit(config: TrainConfig, dataset: VideoDataset, out_dir) -> RunResult:
    """Train per the configuration and write checkpoints plus metrics."""
    return Trainer(config, dataset).run(out_dir)


def load_queues_from_trailer(blob: bytes) -> tuple[MemoryQueue, MemoryQueue]:
    """Recover (video queue, cycle queue) from checkpoint trailing bytes."""
    video_q, offset = MemoryQueue.from_bytes(blob, 0)
    cycle_q, _ = MemoryQueue.from_bytes(blob, offset)
    return video_q, cycle_q


def load_checkpoint(path) -> tuple[MomentumPair, MemoryQueue | None, MemoryQueue | None]:
    """Read a checkpoint written by :meth:`Trainer.run`."""
    pair, trailer = read_checkpoint(path)
    if not trailer:
        return pair, None, None
    video_q, cycle_q = load_queues_from_trailer(trailer)
    return pair, video_q, cycle_q
