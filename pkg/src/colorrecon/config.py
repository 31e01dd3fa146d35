"""Run configuration shared by every CLI command.

Config files are INI with a single ``[run]`` section whose keys are the
field names of :class:`RunConfig`::

    [run]
    gray = lab_l
    bins_intensity = 32
    bins_mean = 16
    bins_std = 8
    std_max = 64
    mask_background = off        ; or an integer 0-255
    normalize = sum              ; or mean
    k = 1,1,1                    ; kL,kC,kH
    colormap_range = 0:50        ; or auto
    methods = ciede2000,hist,l2,ssim
    seed = 0
    jobs = 4
    manifest = out/manifest.json
    model = out/model.clkm

Precedence: command-line flag > config file > built-in default.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from colorrecon.reconstruct import GRAY_MODES, BinConfig
from colorrecon.render import ColormapSpec, parse_colormap_range
from colorrecon.scoring import METHODS


class ConfigError(Exception):
    pass


def _default_jobs() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RunConfig:
    gray: str = "lab_l"
    bins_intensity: int = 32
    bins_mean: int = 16
    bins_std: int = 8
    std_max: float = 64.0
    mask_background: int | None = None
    normalize: str = "sum"
    k: tuple[float, float, float] = (1.0, 1.0, 1.0)
    colormap_range: str = "0:50"
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    jobs: int = field(default_factory=_default_jobs)
    manifest: str | None = None
    model: str | None = None

    def validate(self) -> "RunConfig":
        if self.gray not in GRAY_MODES:
            raise ConfigError(f"gray must be one of {GRAY_MODES}, got {self.gray!r}")
        if self.normalize not in ("sum", "mean"):
            raise ConfigError(f"normalize must be sum or mean, got {self.normalize!r}")
        if self.mask_background is not None and not 0 <= self.mask_background <= 255:
            raise ConfigError(f"mask_background must be off or 0-255, got {self.mask_background}")
        if len(self.k) != 3 or min(self.k) <= 0:
            raise ConfigError(f"k needs three positive factors, got {self.k}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            self.bin_config
            self.colormap
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    @property
    def bin_config(self) -> BinConfig:
        return BinConfig(self.bins_intensity, self.bins_mean, self.bins_std, self.std_max)

    @property
    def colormap(self) -> ColormapSpec:
        return parse_colormap_range(self.colormap_range)


def _parse_value(name: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if name in ("bins_intensity", "bins_mean", "bins_std", "seed", "jobs"):
            return int(raw)
        if name == "std_max":
            return float(raw)
        if name == "mask_background":
            return None if raw.lower() == "off" else int(raw)
        if name == "k":
            return tuple(float(v) for v in raw.split(","))
        if name == "methods":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from None
    return raw


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    extra = [s for s in parser.sections() if s != "run"]
    if extra:
        raise ConfigError(f"{path}: unknown sections {extra}")
    if not parser.has_section("run"):
        return {}
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for key, raw in parser.items("run"):
        if key not in known:
            raise ConfigError(f"{path}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def resolve_config(config_path: str | os.PathLike | None,
                   flags: Mapping[str, Any]) -> RunConfig:
    """Merge defaults, the optional config file and non-None flags, then validate."""
    cfg = RunConfig()
    if config_path is not None:
        file_values = read_config_file(config_path)
        base = Path(config_path).resolve().parent
        for key in ("manifest", "model"):
            if file_values.get(key):
                file_values[key] = str(base / file_values[key])
        cfg = replace(cfg, **file_values)
    known = {f.name for f in fields(RunConfig)}
    overrides = {k: _parse_value(k, v) for k, v in flags.items() if v is not None and k in known}
    return replace(cfg, **overrides).validate()
