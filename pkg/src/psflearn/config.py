"""Run configuration: one YAML file with a section per pipeline stage."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .deblur import DeblurConfig
from .estimate import ConfigError, EstimationConfig
from .measure import ChartSpec, ROIConfig


@dataclass
class LensSpec:
    """Ground-truth lens drawn by ``synthetic.random_lens``."""

    seed: int | None = None
    n_bands: int = 80
    strength: float = 1.0


@dataclass
class CaptureSpec:
    width: int = 2048
    height: int = 2048
    square_size: int = 96
    tilt_deg: float = 5.0
    contrast: tuple = (0.1, 0.9)
    pose_tilts_deg: tuple = (0.0, 45.0)
    pose_shifts: tuple = (0.0, 0.5)
    noise_sigma: float = 0.0
    frames: int = 16
    render_pupil_n: int = 128
    tile: int = 64
    fade: int = 16

    def chart(self) -> ChartSpec:
        return ChartSpec(self.square_size, np.deg2rad(self.tilt_deg), 0, tuple(self.contrast))


@dataclass
class MeasureSpec:
    phis_deg: tuple = (0.0, 45.0, 90.0, 135.0)
    half_window: float = 8.0
    roi: dict = field(default_factory=dict)

    def roi_config(self) -> ROIConfig:
        kw = dict(self.roi)
        if "phi_tol_deg" in kw:
            kw["phi_tol"] = np.deg2rad(kw.pop("phi_tol_deg"))
        return ROIConfig(**kw)


@dataclass
class EvalSpec:
    H_rows: tuple = (0.0, 0.7, 1.0)
    phis_deg: tuple = (0.0, 90.0, 180.0, 270.0)
    stack_H: int = 21
    stack_phi: int = 16
    deblur_images: int = 10
    deblur_size: int = 512
    deblur_noise: float = 0.002


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "run"
    lens: LensSpec = field(default_factory=LensSpec)
    capture: CaptureSpec = field(default_factory=CaptureSpec)
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    deblur: DeblurConfig = field(default_factory=DeblurConfig)
    evaluate: EvalSpec = field(default_factory=EvalSpec)
    paths: dict = field(default_factory=dict)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def path(self, key: str, default: str) -> Path:
        """Input/output path; relative names resolve inside ``output_dir``."""
        p = Path(self.paths.get(key, default))
        return p if p.is_absolute() else self.out / p

    @property
    def lens_seed(self) -> int:
        return self.seed if self.lens.seed is None else self.lens.seed

    def validate(self):
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        c = self.capture
        if c.noise_sigma < 0 or c.frames < 1:
            raise ConfigError("capture.noise_sigma must be >= 0 and capture.frames >= 1")
        if min(c.width, c.height) < 4 * c.square_size:
            raise ConfigError("capture image must span at least four chart squares")
        c.chart().validate()
        if c.render_pupil_n < 32 or c.render_pupil_n % 2:
            raise ConfigError("capture.render_pupil_n must be even and >= 32")
        self.measure.roi_config()
        self.estimation.validate()
        self.deblur.validate()
        if any(not 0 <= h <= 1 for h in self.evaluate.H_rows):
            raise ConfigError("evaluate.H_rows must lie in [0, 1]")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimation"] = self.estimation.to_dict()
        return _plain(d)


def _plain(x):
    """Tuples and numpy scalars to YAML-safe builtins."""
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _build(cls, data: dict | None, section: str):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    for k, v in data.items():
        if isinstance(v, list):
            data[k] = tuple(v)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def config_from_dict(d: dict | None) -> RunConfig:
    d = dict(d or {})
    sections = {"lens": LensSpec, "capture": CaptureSpec, "measure": MeasureSpec,
                "estimation": EstimationConfig, "deblur": DeblurConfig, "evaluate": EvalSpec}
    top = {k: v for k, v in d.items() if k not in sections}
    unknown = set(top) - {"seed", "output_dir", "paths"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    if "phi_set_deg" in (d.get("estimation") or {}):
        est = dict(d["estimation"])
        est["phi_set"] = tuple(np.deg2rad(est.pop("phi_set_deg")))
        d["estimation"] = est
    parts = {k: _build(cls, d.get(k), k) for k, cls in sections.items()}
    cfg = RunConfig(seed=int(top.get("seed", 0)), output_dir=str(top.get("output_dir", "run")),
                    paths=dict(top.get("paths") or {}), **parts)
    return cfg.validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
