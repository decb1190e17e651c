"""Flat ``key = value`` run configuration.

One pair per line, ``#`` starts a comment, unknown keys are rejected, and
missing keys fall back to the documented defaults. Command-line flags
override file values; the fully merged configuration is echoed into every
run directory so results can be reproduced from the echo alone.
"""

from __future__ import annotations

from pathlib import Path

from .encoder import EncoderConfig, MomentumConfig
from .errors import ParameterError
from .losses import LossConfig
from .trainer import QueueConfig, TrainConfig

DEFAULTS: dict[str, str] = {
    "epochs": "20",
    "batch_size": "64",
    "lr": "0.015",
    "momentum": "0.9",
    "weight_decay": "0.0001",
    "lr_schedule": "cosine",
    "seed": "0",
    "loss": "full",
    "temperature": "0.07",
    "lambda": "0.1",
    "include_self_view": "false",
    "backward_negatives": "remainder",
    "top_k": "none",
    "intra_image_weight": "0.0",
    "K": "4096",
    "m_nb": "1024",
    "m_mom": "0.999",
    "hidden_widths": "256,128",
    "embedding_dim": "64",
    "proj_dim": "64",
    "data": "",
    "out": "",
}


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ParameterError(f"config key {key!r} expects a boolean, got {raw!r}")


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ParameterError(f"config key {key!r} expects an integer, got {raw!r}") from exc


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ParameterError(f"config key {key!r} expects a number, got {raw!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse raw key/value pairs, rejecting unknown keys."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParameterError(
                f"{source}:{lineno}: expected 'key = value', got {line!r}"
            )
        key = key.strip()
        if key not in DEFAULTS:
            raise ParameterError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def load_config_file(path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text, source=str(path))


def merge_config(file_values: dict[str, str] | None = None,
                 overrides: dict[str, str] | None = None) -> dict[str, str]:
    """defaults <- file <- flags, yielding one value per known key."""
    merged = dict(DEFAULTS)
    for layer in (file_values or {}, overrides or {}):
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ParameterError(f"unknown config key {key!r}")
            merged[key] = str(value)
    return merged


def render_config(flat: dict[str, str]) -> str:
    lines = [f"{key} = {flat[key]}" for key in DEFAULTS]
    return "\n".join(lines) + "\n"


def train_config_from_flat(flat: dict[str, str], input_height: int,
                           input_width: int) -> TrainConfig:
    """Materialize a TrainConfig from merged flat values."""
    top_k_raw = flat["top_k"].strip().lower()
    top_k = None if top_k_raw in ("", "none") else _parse_int("top_k", top_k_raw)
    hidden_raw = flat["hidden_widths"].strip()
    hidden = tuple(
        _parse_int("hidden_widths", w) for w in hidden_raw.split(",") if w.strip()
    )
    loss_mode = flat["loss"].strip()
    cfg = TrainConfig(
        epochs=_parse_int("epochs", flat["epochs"]),
        batch_size=_parse_int("batch_size", flat["batch_size"]),
        lr=_parse_float("lr", flat["lr"]),
        momentum=_parse_float("momentum", flat["momentum"]),
        weight_decay=_parse_float("weight_decay", flat["weight_decay"]),
        lr_schedule=flat["lr_schedule"].strip(),
        seed=_parse_int("seed", flat["seed"]),
        loss_mode=loss_mode,
        loss=LossConfig(
            temperature=_parse_float("temperature", flat["temperature"]),
            lam=_parse_float("lambda", flat["lambda"]),
            include_self_view=_parse_bool("include_self_view", flat["include_self_view"]),
            backward_negatives=flat["backward_negatives"].strip(),
            top_k=top_k,
            intra_image_weight=_parse_float(
                "intra_image_weight", flat["intra_image_weight"]
            ),
        ),
        queue=QueueConfig(
            capacity=_parse_int("K", flat["K"]),
            neighbor_size=_parse_int("m_nb", flat["m_nb"]),
        ),
        encoder=EncoderConfig(
            input_height=input_height,
            input_width=input_width,
            hidden_widths=hidden,
            embedding_dim=_parse_int("embedding_dim", flat["embedding_dim"]),
            proj_dim=_parse_int("proj_dim", flat["proj_dim"]),
        ),
        ema=MomentumConfig(coefficient=_parse_float("m_mom", flat["m_mom"])),
    )
    return cfg.validate()
