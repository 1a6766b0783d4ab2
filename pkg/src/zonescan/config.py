"""Flat ``key = value`` pipeline configuration.

Blank lines and ``#`` comments are ignored. Keys are the field names of
:class:`PipelineConfig`; values are coerced to the field's type. Paths left
empty resolve under ``work_dir``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints

from .errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class PipelineConfig:
    work_dir: str = "."
    volumes_dir: str = ""
    truth_dir: str = ""
    threat_table: str = ""
    masks_dir: str = ""
    zones_dir: str = ""
    dataset_dir: str = ""
    model_dir: str = ""
    eval_dir: str = ""
    reports_dir: str = ""
    zone_table: str = ""

    # synth
    bodies: int = 20
    threats: int = 3
    threat_fraction: float = 0.5
    synth_seed: int = 0
    nx: int = 64
    ny: int = 40
    nz: int = 48
    height: int = 44
    noise_sigma: float = 0.08
    threat_boost: float = 0.6

    # preprocess
    sigma: float = 1.0
    sauvola_window: int = 15
    sauvola_k: float = 0.2
    sauvola_R: float = 0.0  # 0: half the volume's intensity range
    global_floor: float = -1.0  # negative: Otsu threshold of the smoothed volume
    dilation_radius: int = 1
    min_area: int = 20
    connectivity: int = 8

    # segment
    write_points: bool = True

    # build-dataset
    train_ratio: float = 0.6
    val_ratio: float = 0.2
    test_ratio: float = 0.2
    split_seed: int = 0

    # train
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    train_seed: int = 0
    flip_threats: bool = True
    contrast: float = 0.8
    contrast_prob: float = 0.5
    dropout: float = 0.0

    # evaluate
    eval_split: str = "test"

    threads: int = 1

    def path(self, key: str) -> Path:
        value = getattr(self, key)
        if value:
            return Path(value)
        default = {"threat_table": "threats.csv"}.get(key, key.removesuffix("_dir"))
        return Path(self.work_dir) / default

    def set(self, key: str, raw) -> None:
        hints = get_type_hints(PipelineConfig)
        if key not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(self, key, _coerce(key, hints[key], raw))

    def update(self, values: dict) -> "PipelineConfig":
        for k, v in values.items():
            if v is not None:
                self.set(k, v)
        return self

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.val_ratio, self.test_ratio)


def _coerce(key: str, typ, raw):
    if not isinstance(raw, str):
        return typ(raw)
    s = raw.strip()
    try:
        if typ is bool:
            if s.lower() in _TRUE:
                return True
            if s.lower() in _FALSE:
                return False
            raise ValueError(s)
        return typ(s)
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {key} (expected {typ.__name__})") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        for k, v in parse_config_text(p.read_text(), str(p)).items():
            cfg.set(k, v)
    if overrides:
        cfg.update(overrides)
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))


__all__ = ["PipelineConfig", "load_config", "parse_config_text", "dump_config"]
