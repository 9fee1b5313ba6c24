"""Run configuration with three-layer precedence: defaults < config file < flags.

The config file is plain text, one `key = value` per line, `#` comments.
Keys are dotted (e.g. `sampling.method = global`); the full key set is the
KEY_MAP below.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    sampling_method: str = "global"
    sampling_num_frames: int = 5
    sampling_seed: int = 0
    instance_enabled: bool = True
    instance_provider: str = "oracle"
    instance_k_max: int = 8
    instance_score_threshold: float = 0.0
    instance_level: int = -1
    instance_multi_level_sum: bool = False
    instance_mask_encode: str = "mask"
    instance_masks_dir: str = ""
    block_self_layers: int = 1
    model_channels: int = 16
    model_heads: int = 2
    model_queries: int = 4
    model_dec_layers: int = 2
    train_steps: int = 500
    train_lr: float = 5e-3
    train_weight_decay: float = 1e-4
    train_accum: int = 2
    train_batch: int = 1
    refiner: str = "none"
    refiner_dir: str = ""
    refiner_threshold: float = -1.0  # negative means the adaptive default
    refiner_on_error: str = "keep_original"
    eval_tolerance: float = -1.0  # negative means the per-shape default
    ablate_steps: int = 300
    jobs: int = 1
    seed: int = 0

    def model_dims(self):
        from .backbone import ModelDims
        return ModelDims(channels=self.model_channels, heads=self.model_heads,
                         num_queries=self.model_queries,
                         level_channels=(self.model_channels,) * 3,
                         dec_layers=self.model_dec_layers,
                         block_self_layers=self.block_self_layers)

    def query_kwargs(self) -> dict:
        return {
            "k_max": self.instance_k_max,
            "score_threshold": self.instance_score_threshold,
            "level": self.instance_level,
            "multi_level_sum": self.instance_multi_level_sum,
            "mask_encode_mode": self.instance_mask_encode,
        }

    def tolerance_or_none(self) -> float | None:
        return None if self.eval_tolerance < 0 else self.eval_tolerance

    def refiner_threshold_or_none(self) -> float | None:
        return None if self.refiner_threshold < 0 else self.refiner_threshold


KEY_MAP = {
    "sampling.method": "sampling_method",
    "sampling.num_frames": "sampling_num_frames",
    "sampling.seed": "sampling_seed",
    "instance_init.enabled": "instance_enabled",
    "instance_init.provider": "instance_provider",
    "instance_init.k_max": "instance_k_max",
    "instance_init.score_threshold": "instance_score_threshold",
    "instance_init.level": "instance_level",
    "instance_init.multi_level_sum": "instance_multi_level_sum",
    "instance_init.mask_encode": "instance_mask_encode",
    "instance_init.masks_dir": "instance_masks_dir",
    "block.self_layers": "block_self_layers",
    "model.channels": "model_channels",
    "model.heads": "model_heads",
    "model.queries": "model_queries",
    "model.dec_layers": "model_dec_layers",
    "train.steps": "train_steps",
    "train.lr": "train_lr",
    "train.weight_decay": "train_weight_decay",
    "train.accum": "train_accum",
    "train.batch": "train_batch",
    "refiner.kind": "refiner",
    "refiner.dir": "refiner_dir",
    "refiner.threshold": "refiner_threshold",
    "refiner.on_error": "refiner_on_error",
    "eval.tolerance": "eval_tolerance",
    "ablate.steps": "ablate_steps",
    "jobs": "jobs",
    "seed": "seed",
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(field_name: str, raw: str):
    kind = _FIELD_TYPES[field_name]
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"invalid boolean {raw!r} for {field_name}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid {kind} {raw!r} for {field_name}") from exc
    return raw.strip()


def parse_config_file(path: str | Path) -> dict:
    """Dotted-key -> typed-value overrides from a config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file missing: {path}")
    overrides = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in KEY_MAP:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        overrides[KEY_MAP[key]] = _coerce(KEY_MAP[key], raw)
    return overrides


def build_config(config_file: str | Path | None = None,
                 flag_overrides: dict | None = None) -> RunConfig:
    """Layered config: dataclass defaults, then file, then CLI flags."""
    cfg = RunConfig()
    if config_file:
        for name, value in parse_config_file(config_file).items():
            setattr(cfg, name, value)
    for name, value in (flag_overrides or {}).items():
        if value is None:
            continue
        if name not in _FIELD_TYPES:
            raise ConfigError(f"unknown config field {name!r}")
        setattr(cfg, name, value)
    return cfg
