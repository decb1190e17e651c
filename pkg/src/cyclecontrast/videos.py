"""Procedural toy videos: labeled parametric shapes under smooth motion.

Each video draws a hidden class prototype (stripes, disks, crosses,
rings, ...) plus instance parameters (position, scale, rotation,
brightness), then renders a few frames along a smooth drift trajectory.
Class labels exist only for evaluation; the training path never sees
them. Everything is a pure function of the seed.

The on-disk format ("CCV1") is little-endian:

    magic            4 bytes  b"CCV1"
    version          u32      1
    num_videos       u32
    frames_per_video u32
    height           u32
    width            u32
    num_classes      u32
    seed             u64
    frames           num_videos*frames_per_video*height*width float32
    class labels     num_videos u16
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError
from .rng import make_rng

DATASET_MAGIC = b"CCV1"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIQ")

NUM_PROTOTYPES = 10


@dataclass
class VideoDataset:
    frames: np.ndarray  # (videos, frames, height, width) float32 in [0, 1]
    class_ids: np.ndarray  # (videos,) uint16; hidden labels for evaluation only
    num_classes: int
    seed: int
    instance_params: np.ndarray | None = None  # populated by generate(), not stored

    @property
    def num_videos(self) -> int:
        return self.frames.shape[0]

    @property
    def frames_per_video(self) -> int:
        return self.frames.shape[1]

    @property
    def height(self) -> int:
        return self.frames.shape[2]

    @property
    def width(self) -> int:
        return self.frames.shape[3]


@dataclass
class VideoSample:
    video_id: int
    class_id: int
    instance_params: np.ndarray | None
    frames: np.ndarray


@dataclass
class AugmentConfig:
    """Random resized crop, photometric jitter, and additive noise."""

    crop_scale: tuple[float, float] = (0.7, 1.0)
    noise_std: float = 0.03
    brightness: float = 0.15
    contrast: float = 0.15

    def validate(self) -> "AugmentConfig":
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ParameterError(f"crop_scale must lie in (0, 1], got {self.crop_scale}")
        if self.noise_std < 0:
            raise ParameterError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.brightness < 0 or self.contrast < 0:
            raise ParameterError("jitter ranges must be >= 0")
        return self


@dataclass
class PairBatch:
    """Two augmented views per sampled video, plus optional extra views of
    the first frame (used for same-image positives and self views)."""

    x_i: np.ndarray
    x_j: np.ndarray
    video_ids: np.ndarray
    x_alt: np.ndarray | None = None
    x_self: np.ndarray | None = None


def _grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    ys = (np.arange(height, dtype=np.float64) + 0.5) / height * 2.0 - 1.0
    xs = (np.arange(width, dtype=np.float64) + 0.5) / width * 2.0 - 1.0
    return np.meshgrid(ys, xs, indexing="ij")


def _prototype(class_id: int, uy: np.ndarray, ux: np.ndarray) -> np.ndarray:
    """Intensity of one class prototype over instance-frame coordinates."""
    r = np.sqrt(ux * ux + uy * uy)
    if class_id == 0:  # broad horizontal stripes
        img = 0.5 + 0.5 * np.sin(2.0 * np.pi * 1.6 * uy)
    elif class_id == 1:  # broad vertical stripes
        img = 0.5 + 0.5 * np.sin(2.0 * np.pi * 1.6 * ux)
    elif class_id == 2:  # fine diagonal stripes
        img = 0.5 + 0.5 * np.sin(2.0 * np.pi * 2.8 * (ux + uy) / np.sqrt(2.0))
    elif class_id == 3:  # filled disk
        img = 1.0 / (1.0 + np.exp((r - 0.55) / 0.05))
    elif class_id == 4:  # ring
        img = np.exp(-(((r - 0.6) / 0.09) ** 2))
    elif class_id == 5:  # axis-aligned cross
        img = np.exp(-((ux / 0.14) ** 2)) + np.exp(-((uy / 0.14) ** 2))
        img = np.clip(img, 0.0, 1.0) * np.exp(-((r / 0.95) ** 4))
    elif class_id == 6:  # diagonal cross
        a = (ux + uy) / np.sqrt(2.0)
        b = (ux - uy) / np.sqrt(2.0)
        img = np.exp(-((a / 0.14) ** 2)) + np.exp(-((b / 0.14) ** 2))
        img = np.clip(img, 0.0, 1.0) * np.exp(-((r / 0.95) ** 4))
    elif class_id == 7:  # checkerboard
        img = 0.5 + 0.5 * np.sin(2.0 * np.pi * 1.4 * ux) * np.sin(2.0 * np.pi * 1.4 * uy)
    elif class_id == 8:  # two blobs
        img = np.exp(-(((ux - 0.45) ** 2 + uy**2) / 0.22**2)) + np.exp(
            -(((ux + 0.45) ** 2 + uy**2) / 0.22**2)
        )
        img = np.clip(img, 0.0, 1.0)
    elif class_id == 9:  # square outline
        d = np.abs(np.maximum(np.abs(ux), np.abs(uy)) - 0.55)
        img = np.exp(-((d / 0.08) ** 2))
    else:  # pragma: no cover - guarded by generate()
        raise ParameterError(f"no prototype for class {class_id}")
    return img


def _background(
    height: int,
    width: int,
    waves: np.ndarray,
    phases: np.ndarray,
    amplitude: float,
) -> np.ndarray:
    """Smooth sinusoidal clutter; phases advance fast between frames, so
    the background is a nuisance only temporal invariance can remove."""
    py, px = _grid(height, width)
    img = np.zeros_like(py)
    for (ky, kx), phase in zip(waves, phases):
        img = img + np.sin(ky * py + kx * px + phase)
    return amplitude * img / len(waves)


def render_frame(
    class_id: int,
    height: int,
    width: int,
    center_y: float,
    center_x: float,
    scale: float,
    angle: float,
    amplitude: float,
    bg_waves: np.ndarray | None = None,
    bg_phases: np.ndarray | None = None,
    bg_amplitude: float = 0.0,
) -> np.ndarray:
    """Render one frame of one instance as float32 in [0, 1]."""
    py, px = _grid(height, width)
    ty = py - center_y
    tx = px - center_x
    cos_a, sin_a = np.cos(-angle), np.sin(-angle)
    uy = (cos_a * ty - sin_a * tx) / scale
    ux = (sin_a * ty + cos_a * tx) / scale
    img = _prototype(class_id, uy, ux) * amplitude
    if bg_waves is not None and bg_amplitude > 0.0:
        img = img + 0.5 * bg_amplitude + _background(
            height, width, bg_waves, bg_phases, bg_amplitude
        )
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate(
    num_videos: int,
    frames_per_video: int,
    num_classes: int,
    height: int,
    width: int,
    seed: int,
) -> VideoDataset:
    """Generate a dataset; deterministic per (seed, video_id, frame index)."""
    if num_videos < 1:
        raise ParameterError(f"num_videos must be >= 1, got {num_videos}")
    if frames_per_video < 2:
        raise ParameterError(
            f"frames_per_video must be >= 2 for pair sampling, got {frames_per_video}"
        )
    if not 1 <= num_classes <= NUM_PROTOTYPES:
        raise ParameterError(
            f"num_classes must be in [1, {NUM_PROTOTYPES}], got {num_classes}"
        )
    if height < 4 or width < 4:
        raise ParameterError(f"frame size {height}x{width} is too small")

    frames = np.empty((num_videos, frames_per_video, height, width), dtype=np.float32)
    class_ids = np.empty(num_videos, dtype=np.uint16)
    params = np.empty((num_videos, 9), dtype=np.float32)

    for vid in range(num_videos):
        rng = make_rng(seed, 0x564944, vid)
        cls = int(rng.integers(0, num_classes))
        cy, cx = rng.uniform(-0.25, 0.25, size=2)
        scale = rng.uniform(0.75, 1.25)
        angle = rng.uniform(-0.25, 0.25)
        amplitude = rng.uniform(0.6, 1.0)
        drift_speed = rng.uniform(0.015, 0.05)
        drift_dir = rng.uniform(0.0, 2.0 * np.pi)
        vy, vx = drift_speed * np.sin(drift_dir), drift_speed * np.cos(drift_dir)
        omega = rng.uniform(-0.06, 0.06)
        # clutter changes much faster than the shape moves, so frames of one
        # video share the shape but not the background
        bg_amplitude = rng.uniform(0.25, 0.45)
        bg_waves = rng.uniform(-1.0, 1.0, size=(3, 2)) * np.pi * 2.2
        bg_phases0 = rng.uniform(0.0, 2.0 * np.pi, size=3)
        bg_phase_vel = rng.uniform(1.2, 2.8, size=3) * rng.choice((-1.0, 1.0), size=3)
        class_ids[vid] = cls
        params[vid] = (cy, cx, scale, angle, amplitude, vy, vx, omega, bg_amplitude)
        for f in range(frames_per_video):
            frames[vid, f] = render_frame(
                cls, height, width,
                cy + f * vy, cx + f * vx,
                scale, angle + f * omega, amplitude,
                bg_waves=bg_waves,
                bg_phases=bg_phases0 + f * bg_phase_vel,
                bg_amplitude=bg_amplitude,
            )
    return VideoDataset(
        frames=frames,
        class_ids=class_ids,
        num_classes=num_classes,
        seed=seed,
        instance_params=params,
    )


def video_sample(dataset: VideoDataset, video_id: int) -> VideoSample:
    if not 0 <= video_id < dataset.num_videos:
        raise ParameterError(f"video_id {video_id} out of range")
    inst = None
    if dataset.instance_params is not None:
        inst = dataset.instance_params[video_id]
    return VideoSample(
        video_id=video_id,
        class_id=int(dataset.class_ids[video_id]),
        instance_params=inst,
        frames=dataset.frames[video_id],
    )


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; exact copy when sizes match."""
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.astype(np.float32, copy=True)
    src_y = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    src_x = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    src_y = np.clip(src_y, 0.0, in_h - 1.0)
    src_x = np.clip(src_x, 0.0, in_w - 1.0)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (src_y - y0)[:, None]
    wx = (src_x - x0)[None, :]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def augment(frame: np.ndarray, cfg: AugmentConfig, seed) -> np.ndarray:
    """Random resized crop, brightness/contrast jitter, Gaussian noise.

    Deterministic given the seed; output stays in [0, 1]. ``seed`` may be
    an integer or an already-derived generator.
    """
    cfg.validate()
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, 0x415547)
    frame = np.asarray(frame, dtype=np.float32)
    h, w = frame.shape

    lo, hi = cfg.crop_scale
    s = rng.uniform(lo, hi)
    ch = max(1, int(round(s * h)))
    cw = max(1, int(round(s * w)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    out = _resize_bilinear(frame[top:top + ch, left:left + cw], h, w)

    if cfg.contrast > 0 or cfg.brightness > 0:
        c = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast)
        b = rng.uniform(-cfg.brightness, cfg.brightness)
        out = (out - np.float32(0.5)) * np.float32(c) + np.float32(0.5 + b)
    if cfg.noise_std > 0:
        out = out + rng.normal(0.0, cfg.noise_std, size=out.shape).astype(np.float32)
    return np.clip(out, 0.0, 1.0)


def sample_pair_batch(
    dataset: VideoDataset,
    batch_size: int,
    seed: int,
    aug: AugmentConfig | None = None,
    want_alt: bool = False,
    want_self: bool = False,
) -> PairBatch:
    """Draw distinct videos and two distinct frames from each, augmenting
    every view independently.

    ``want_alt``/``want_self`` add further independent augmentations of the
    first frame (for same-image positives and query self views).
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > dataset.num_videos:
        raise ParameterError(
            f"batch_size {batch_size} exceeds {dataset.num_videos} videos"
        )
    aug = (aug or AugmentConfig()).validate()
    rng = make_rng(seed, 0x424154)
    vids = np.sort(rng.choice(dataset.num_videos, size=batch_size, replace=False))
    order = np.argsort(rng.random((batch_size, dataset.frames_per_video)), axis=1)
    f_i, f_j = order[:, 0], order[:, 1]

    h, w = dataset.height, dataset.width
    x_i = np.empty((batch_size, h, w), dtype=np.float32)
    x_j = np.empty((batch_size, h, w), dtype=np.float32)
    x_alt = np.empty_like(x_i) if want_alt else None
    x_self = np.empty_like(x_i) if want_self else None
    for b in range(batch_size):
        vid = int(vids[b])
        x_i[b] = augment(dataset.frames[vid, f_i[b]], aug, make_rng(seed, 0, b))
        x_j[b] = augment(dataset.frames[vid, f_j[b]], aug, make_rng(seed, 1, b))
        if x_alt is not None:
            x_alt[b] = augment(dataset.frames[vid, f_i[b]], aug, make_rng(seed, 2, b))
        if x_self is not None:
            x_self[b] = augment(dataset.frames[vid, f_i[b]], aug, make_rng(seed, 3, b))
    return PairBatch(
        x_i=x_i, x_j=x_j, video_ids=vids.astype(np.int64),
        x_alt=x_alt, x_self=x_self,
    )


def write_dataset(dataset: VideoDataset, path) -> None:
    header = _HEADER.pack(
        DATASET_MAGIC,
        DATASET_VERSION,
        dataset.num_videos,
        dataset.frames_per_video,
        dataset.height,
        dataset.width,
        dataset.num_classes,
        dataset.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(dataset.frames, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.class_ids, dtype="<u2").tobytes())


def read_dataset(path) -> VideoDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DATASET_MAGIC:
        raise FormatError(
            f"bad dataset magic {blob[:4]!r} at byte 0, expected {DATASET_MAGIC!r}"
        )
    if len(blob) < _HEADER.size:
        raise FormatError(f"dataset header truncated at byte {len(blob)}")
    _, version, nv, fpv, h, w, nc, seed = _HEADER.unpack_from(blob, 0)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version} at byte 4")
    frame_bytes = nv * fpv * h * w * 4
    label_bytes = nv * 2
    expected = _HEADER.size + frame_bytes + label_bytes
    if len(blob) != expected:
        raise FormatError(
            f"dataset payload length mismatch: expected {expected} bytes, "
            f"got {len(blob)} (frames end at byte {_HEADER.size + frame_bytes})"
        )
    frames = np.frombuffer(
        blob, dtype="<f4", count=nv * fpv * h * w, offset=_HEADER.size
    ).reshape(nv, fpv, h, w).copy()
    class_ids = np.frombuffer(
        blob, dtype="<u2", count=nv, offset=_HEADER.size + frame_bytes
    ).copy()
    return VideoDataset(
        frames=frames, class_ids=class_ids, num_classes=int(nc), seed=int(seed)
    )
