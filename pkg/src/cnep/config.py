"""INI config files with [model], [train], [data], [pid] and [obstacle]
sections; CLI flags override file values.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .geometry import ObstacleSpec
from .pid import PidConfig
from .training import TrainConfig

MODEL_KINDS = ("cnmp", "cnep")
DATA_FAMILIES = ("sines", "intersecting", "obstacle")


@dataclass(frozen=True)
class ModelSettings:
    """Topology settings before the data dimension is known.

    query_hidden=None means the CNMP query width is solved for parameter
    parity against the CNEP built from the same settings.
    """

    kind: str = "cnep"
    num_experts: int = 2
    latent_width: int = 128
    encoder_hidden: tuple[int, ...] = (128, 128)
    expert_hidden: tuple[int, ...] = (128, 128)
    gate_hidden: tuple[int, ...] = (64,)
    query_hidden: tuple[int, ...] | None = None
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}, expected {MODEL_KINDS}")


@dataclass(frozen=True)
class DataSettings:
    family: str = "sines"
    modes: int = 2
    samples_per_mode: int = 20
    grid: int = 200
    seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.family not in DATA_FAMILIES:
            raise ConfigError(f"unknown data family {self.family!r}, expected {DATA_FAMILIES}")


@dataclass(frozen=True)
class AppConfig:
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSettings = field(default_factory=DataSettings)
    pid: PidConfig = field(default_factory=PidConfig)
    obstacle: ObstacleSpec | None = None


def _parse_int(raw, key):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}")


def _parse_float(raw, key):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}")


def _parse_widths(raw, key):
    try:
        return tuple(int(w) for w in str(raw).split(",") if w.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated widths, got {raw!r}")


def _section_into(section, key_parsers, section_name):
    out = {}
    for key, raw in section.items():
        if key not in key_parsers:
            raise ConfigError(f"unknown key {key!r} in [{section_name}]")
        out[key_parsers[key][0]] = key_parsers[key][1](raw, f"[{section_name}] {key}")
    return out


def load_config(path) -> AppConfig:
    """Parse an INI config; unknown sections or keys are rejected."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from exc

    known = {"model", "train", "data", "pid", "obstacle"}
    for name in parser.sections():
        if name not in known:
            raise ConfigError(f"unknown config section [{name}]")

    cfg = AppConfig()
    if parser.has_section("model"):
        vals = _section_into(parser["model"], {
            "kind": ("kind", lambda r, k: str(r)),
            "experts": ("num_experts", _parse_int),
            "latent_width": ("latent_width", _parse_int),
            "encoder_hidden": ("encoder_hidden", _parse_widths),
            "expert_hidden": ("expert_hidden", _parse_widths),
            "gate_hidden": ("gate_hidden", _parse_widths),
            "query_hidden": ("query_hidden", _parse_widths),
            "activation": ("activation", lambda r, k: str(r)),
        }, "model")
        cfg = replace(cfg, model=replace(cfg.model, **vals))
    if parser.has_section("train"):
        vals = _section_into(parser["train"], {
            "batch_size": ("batch_size", _parse_int),
            "epochs": ("epochs", _parse_int),
            "n_max": ("n_max", _parse_int),
            "m_max": ("m_max", _parse_int),
            "alpha_rec": ("alpha_rec", _parse_float),
            "alpha_batch": ("alpha_batch", _parse_float),
            "alpha_ind": ("alpha_ind", _parse_float),
            "learning_rate": ("learning_rate", _parse_float),
            "optimizer": ("optimizer", lambda r, k: str(r)),
            "seed": ("seed", _parse_int),
            "validation_every": ("validation_every", _parse_int),
            "val_cond_time": ("val_cond_time", _parse_float),
        }, "train")
        alphas = list(cfg.train.alphas)
        for i, key in enumerate(("alpha_rec", "alpha_batch", "alpha_ind")):
            if key in vals:
                alphas[i] = vals.pop(key)
        cfg = replace(cfg, train=replace(cfg.train, alphas=tuple(alphas), **vals))
    if parser.has_section("data"):
        vals = _section_into(parser["data"], {
            "family": ("family", lambda r, k: str(r)),
            "modes": ("modes", _parse_int),
            "samples_per_mode": ("samples_per_mode", _parse_int),
            "grid": ("grid", _parse_int),
            "seed": ("seed", _parse_int),
            "path": ("path", lambda r, k: str(r) or None),
        }, "data")
        cfg = replace(cfg, data=replace(cfg.data, **vals))
    if parser.has_section("pid"):
        vals = _section_into(parser["pid"], {
            "kp": ("kp", _parse_float),
            "ki": ("ki", _parse_float),
            "kd": ("kd", _parse_float),
            "decay_window": ("decay_window", _parse_int),
            "dt": ("dt", lambda r, k: _parse_float(r, k) if str(r).strip() else None),
        }, "pid")
        cfg = replace(cfg, pid=replace(cfg.pid, **vals))
    if parser.has_section("obstacle"):
        vals = _section_into(parser["obstacle"], {
            "center_x": ("center_x", _parse_float),
            "center_y": ("center_y", _parse_float),
            "half_w": ("half_w", _parse_float),
            "half_h": ("half_h", _parse_float),
        }, "obstacle")
        try:
            box = ObstacleSpec(
                center=(vals.get("center_x", 0.0), vals.get("center_y", 0.0)),
                half_extents=(vals["half_w"], vals["half_h"]))
        except KeyError as exc:
            raise ConfigError(f"[obstacle] missing key {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"[obstacle]: {exc}") from exc
        cfg = replace(cfg, obstacle=box)
    return cfg


def save_obstacle_block(box: ObstacleSpec, path):
    """Write an obstacle as its own config block."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("[obstacle]\n")
        f.write(f"center_x = {box.center[0]!r}\n")
        f.write(f"center_y = {box.center[1]!r}\n")
        f.write(f"half_w = {box.half_extents[0]!r}\n")
        f.write(f"half_h = {box.half_extents[1]!r}\n")
