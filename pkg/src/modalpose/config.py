"""Flat ``key = value`` pipeline configuration."""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .contour import AffineMap, ScoringConfig
from .fem import MaterialParams
from .shape_db import FilterConfig

ENV_VAR = "MODALPOSE_CONFIG"


class ConfigError(ValueError):
    pass


def _int_list(text):
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass
class PipelineConfig:
    mesh: Path | None = None
    anchors: tuple = ()
    constraints: tuple = ()
    plane_tolerance: float | None = None
    youngs_modulus: float = 6000.0
    poisson_ratio: float = 0.49
    density: float = 1040.0
    xi: float = 0.1
    zeta: float = 0.01
    modes: int = 30
    samples: int = 1000
    max_disp: float | None = None
    seed: int = 0
    eps: float = 1e-6
    warp: bool = False
    backtrack_tol: float = 0.0
    alpha: float = 0.8
    beta: float = 0.2
    resample_n: int = 12
    msd_guard: float = 1e-9
    penalty_guard: float = 1e-9
    image_scale_x: float = 1.0
    image_scale_y: float = 1.0
    image_offset_x: float = 0.0
    image_offset_y: float = 0.0
    out: Path = field(default_factory=lambda: Path("modalpose_out"))
    jobs: int = 1

    @property
    def material(self):
        return MaterialParams(self.youngs_modulus, self.poisson_ratio, self.density)

    @property
    def scoring(self):
        return ScoringConfig(self.resample_n, self.alpha, self.beta, self.msd_guard, self.penalty_guard)

    @property
    def filter(self):
        return FilterConfig(self.backtrack_tol)

    @property
    def affine(self):
        return AffineMap(self.image_scale_x, self.image_scale_y, self.image_offset_x, self.image_offset_y)

    def validate(self):
        if self.modes < 1:
            raise ConfigError("modes must be >= 1")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.max_disp is not None and self.max_disp < 0:
            raise ConfigError("max_disp must be >= 0")
        if self.eps < 0:
            raise ConfigError("eps must be >= 0")
        if self.jobs == 0:
            raise ConfigError("jobs must be nonzero")
        self.material
        self.scoring
        return self

    def updated(self, **overrides):
        """Copy with non-None overrides applied (command-line flags)."""
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


_CONVERTERS = {
    "mesh": Path,
    "anchors": _int_list,
    "constraints": _int_list,
    "warp": _bool,
    "out": Path,
}


def _converter(f):
    if f.name in _CONVERTERS:
        return _CONVERTERS[f.name]
    if f.name in ("plane_tolerance", "max_disp"):
        return float
    return {"int": int, "float": float}.get(str(f.type), float)


def parse_config(text, base_dir=None):
    """Parse config text; relative ``mesh``/``out`` paths resolve against ``base_dir``."""
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
        interpolation=None,
    )
    try:
        parser.read_string("[modalpose]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    known = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for key, raw in parser["modalpose"].items():
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _converter(known[key])(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    if base_dir is not None:
        for key in ("mesh", "out"):
            if key in values and not values[key].is_absolute():
                values[key] = Path(base_dir) / values[key]
    return PipelineConfig(**values)


def load_config(path=None):
    """Read ``path``, or the file named by $MODALPOSE_CONFIG, or return defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if not path:
        return PipelineConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text(), base_dir=path.parent)
