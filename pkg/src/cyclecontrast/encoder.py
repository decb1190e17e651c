"""Encoder networks: a small MLP backbone, two projection heads, and the
query/key momentum pair.

The key network is a structural copy of the query network that is only
ever updated by exponential moving average, never by gradients; callers
enforce the no-gradient rule by running the key forward pass outside any
recording tape.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, FormatError
from .rng import make_rng

CHECKPOINT_MAGIC = b"CCKP"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    """Shape of the encoder: flattened input -> hidden MLP -> embedding,
    plus the width of the two projection heads."""

    input_height: int = 32
    input_width: int = 32
    hidden_widths: tuple[int, ...] = (256, 128)
    embedding_dim: int = 64
    proj_dim: int = 64

    @property
    def input_dim(self) -> int:
        return self.input_height * self.input_width

    def validate(self) -> "EncoderConfig":
        widths = (self.input_dim, *self.hidden_widths, self.embedding_dim)
        if any(w < 1 for w in widths):
            raise ConfigError(f"all layer widths must be >= 1, got {widths}")
        if self.embedding_dim < 2 or self.proj_dim < 2:
            raise ConfigError("embedding_dim and proj_dim must be >= 2")
        return self


@dataclass
class MomentumConfig:
    """EMA coefficient for the key network: key <- m*key + (1-m)*query."""

    coefficient: float = 0.999

    def validate(self) -> "MomentumConfig":
        if not 0.0 <= self.coefficient <= 1.0:
            raise ConfigError(
                f"momentum coefficient must be in [0, 1], got {self.coefficient}"
            )
        return self


@dataclass
class AffineLayer:
    weight: T.Tensor
    bias: T.Tensor


@dataclass
class EncoderParams:
    """Backbone layer parameters plus a role tag ("query" or "key")."""

    layers: list[AffineLayer]
    role: str


@dataclass
class ProjectionHeads:
    """Two independent affine heads on top of the backbone feature."""

    video: AffineLayer
    cycle: AffineLayer


@dataclass
class ModelParams:
    encoder: EncoderParams
    heads: ProjectionHeads


@dataclass
class MomentumPair:
    """Query network (trained by SGD) and key network (trained by EMA)."""

    query: ModelParams
    key: ModelParams
    config: EncoderConfig = field(default_factory=EncoderConfig)


def _affine(fan_in: int, fan_out: int, rng: np.random.Generator,
            requires_grad: bool) -> AffineLayer:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)
    b = np.zeros((1, fan_out), dtype=np.float32)
    return AffineLayer(T.Tensor(w, requires_grad), T.Tensor(b, requires_grad))


def parameters(model: ModelParams) -> list[T.Tensor]:
    """All parameter tensors of a model, in fixed declaration order."""
    out: list[T.Tensor] = []
    for layer in model.encoder.layers:
        out.extend((layer.weight, layer.bias))
    for head in (model.heads.video, model.heads.cycle):
        out.extend((head.weight, head.bias))
    return out


def init_params(cfg: EncoderConfig, seed: int) -> MomentumPair:
    """Initialize a query/key pair.

    Weights are uniform with bound 1/sqrt(fan_in), biases zero. The key
    network starts as an exact copy of the query network and never
    requires gradients.
    """
    cfg.validate()
    rng = make_rng(seed, 0x454E43)
    widths = (cfg.input_dim, *cfg.hidden_widths, cfg.embedding_dim)

    def build(requires_grad: bool, role: str, source: ModelParams | None) -> ModelParams:
        if source is None:
            layers = [
                _affine(widths[i], widths[i + 1], rng, requires_grad)
                for i in range(len(widths) - 1)
            ]
            heads = ProjectionHeads(
                video=_affine(cfg.embedding_dim, cfg.proj_dim, rng, requires_grad),
                cycle=_affine(cfg.embedding_dim, cfg.proj_dim, rng, requires_grad),
            )
        else:
            layers = [
                AffineLayer(
                    T.Tensor(l.weight.data.copy(), requires_grad),
                    T.Tensor(l.bias.data.copy(), requires_grad),
                )
                for l in source.encoder.layers
            ]
            heads = ProjectionHeads(
                video=AffineLayer(
                    T.Tensor(source.heads.video.weight.data.copy(), requires_grad),
                    T.Tensor(source.heads.video.bias.data.copy(), requires_grad),
                ),
                cycle=AffineLayer(
                    T.Tensor(source.heads.cycle.weight.data.copy(), requires_grad),
                    T.Tensor(source.heads.cycle.bias.data.copy(), requires_grad),
                ),
            )
        return ModelParams(EncoderParams(layers, role), heads)

    query = build(True, "query", None)
    key = build(False, "key", query)
    return MomentumPair(query=query, key=key, config=cfg)


def backbone_features(model: ModelParams, batch: T.Tensor | np.ndarray) -> T.Tensor:
    """Run the MLP backbone: hidden layers with rectifier, linear output."""
    x = batch if isinstance(batch, T.Tensor) else T.Tensor(batch)
    expected = model.encoder.layers[0].weight.data.shape[0]
    if x.data.ndim != 2 or x.data.shape[1] != expected:
        raise DimensionError(
            f"batch shape {x.data.shape} does not match encoder input width {expected}"
        )
    n_layers = len(model.encoder.layers)
    for i, layer in enumerate(model.encoder.layers):
        x = T.add_bias(T.matmul(x, layer.weight), layer.bias)
        if i < n_layers - 1:
            x = T.relu(x)
    return x


def encode(model: ModelParams, batch: T.Tensor | np.ndarray) -> tuple[T.Tensor, T.Tensor]:
    """Encode a batch into the two projection spaces.

    Returns (z_video, z_cycle); both are l2-normalized per row so that dot
    products equal cosine similarities downstream.
    """
    feat = backbone_features(model, batch)
    z_video = T.l2_normalize(
        T.add_bias(T.matmul(feat, model.heads.video.weight), model.heads.video.bias)
    )
    z_cycle = T.l2_normalize(
        T.add_bias(T.matmul(feat, model.heads.cycle.weight), model.heads.cycle.bias)
    )
    return z_video, z_cycle


def _check_same_structure(key: ModelParams, query: ModelParams) -> None:
    kp, qp = parameters(key), parameters(query)
    if len(kp) != len(qp):
        raise ConfigError(
            f"key has {len(kp)} parameter tensors, query has {len(qp)}"
        )
    for i, (k, q) in enumerate(zip(kp, qp)):
        if k.data.shape != q.data.shape:
            raise ConfigError(
                f"parameter {i} shape mismatch: key {k.data.shape} vs query {q.data.shape}"
            )


def ema_update(key: ModelParams, query: ModelParams, cfg: MomentumConfig) -> None:
    """In-place update key <- m*key + (1-m)*query, elementwise.

    The query is untouched; the key never carries gradients.
    """
    cfg.validate()
    _check_same_structure(key, query)
    m = np.float32(cfg.coefficient)
    one_minus = np.float32(1.0) - m
    for k, q in zip(parameters(key), parameters(query)):
        k.data[...] = m * k.data + one_minus * q.data


# --- checkpoint format -------------------------------------------------
#
# Little-endian layout:
#   magic   4 bytes   b"CCKP"
#   version u32       1
#   config  u32 byte length, then UTF-8 "key = value" lines
#   tensors raw float32 row-major, query params then key params, each in
#           declaration order (weights before biases, backbone layers
#           first, then the video head, then the cycle head)
#   queues  zero or more blocks appended by the trainer (see memory.py)


def _config_block(cfg: EncoderConfig) -> bytes:
    lines = [
        f"input_height = {cfg.input_height}",
        f"input_width = {cfg.input_width}",
        f"hidden_widths = {','.join(str(w) for w in cfg.hidden_widths)}",
        f"embedding_dim = {cfg.embedding_dim}",
        f"proj_dim = {cfg.proj_dim}",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config_block(blob: bytes) -> EncoderConfig:
    values: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    try:
        return EncoderConfig(
            input_height=int(values["input_height"]),
            input_width=int(values["input_width"]),
            hidden_widths=tuple(
                int(w) for w in values["hidden_widths"].split(",") if w
            ),
            embedding_dim=int(values["embedding_dim"]),
            proj_dim=int(values["proj_dim"]),
        ).validate()
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint config block is invalid: {exc}") from exc


def write_checkpoint(path, pair: MomentumPair, trailing: bytes = b"") -> None:
    """Write the momentum pair (and optional trailing queue blocks)."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg_blob = _config_block(pair.config)
    buf.write(struct.pack("<I", len(cfg_blob)))
    buf.write(cfg_blob)
    for model in (pair.query, pair.key):
        for p in parameters(model):
            buf.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    buf.write(trailing)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_checkpoint(path) -> tuple[MomentumPair, bytes]:
    """Read a checkpoint; returns the pair and any trailing bytes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(
            f"bad checkpoint magic {blob[:4]!r} at byte 0, expected {CHECKPOINT_MAGIC!r}"
        )
    if len(blob) < 12:
        raise FormatError(f"checkpoint truncated at byte {len(blob)}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte 4")
    (cfg_len,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    if len(blob) < offset + cfg_len:
        raise FormatError(f"checkpoint truncated at byte {len(blob)} (config block)")
    cfg = _parse_config_block(blob[offset:offset + cfg_len])
    offset += cfg_len

    pair = init_params(cfg, seed=0)
    for model in (pair.query, pair.key):
        for p in parameters(model):
            nbytes = p.data.size * 4
            if len(blob) < offset + nbytes:
                raise FormatError(
                    f"checkpoint truncated at byte {len(blob)}: "
                    f"expected {nbytes} tensor bytes at offset {offset}"
                )
            arr = np.frombuffer(blob, dtype="<f4", count=p.data.size, offset=offset)
            p.data[...] = arr.reshape(p.data.shape)
            offset += nbytes
    return pair, blob[offset:]
