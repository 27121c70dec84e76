"""Configuration and the per-image landmark pipeline.

Stage order defaults to crop, despike, smooth; curvature and landmark
detection always follow.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .core import AxisConvention, RangeImage, RangePoseError
from .curvature import curvature_field
from .landmarks import LandmarkSet, detect_eye_corners, find_nose_tip
from .pose import PoseThresholds
from .preprocess import ellipse_crop, gaussian_smooth, ransac_despike

STAGES = ("crop", "despike", "smooth")


class ConfigError(RangePoseError):
    pass


class PipelineError(RangePoseError):
    """A stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PreprocessConfig:
    order: tuple[str, ...] = STAGES
    crop_scale: float = 2.5
    smooth_sigma: float = 1.0
    smooth_radius: int = 2
    despike_window: int = 11
    despike_stride: int = 5
    despike_iters: int = 100
    despike_inlier_tol: float = 2.0
    seed: int = 0


@dataclass(frozen=True)
class CurvatureConfig:
    radius: int = 2
    edge_margin: int = 2
    eps_h: float = 1e-6
    eps_k: float = 1e-6


@dataclass(frozen=True)
class LandmarkConfig:
    k_thresh: float = 1e-4
    min_sep: int = 8


@dataclass(frozen=True)
class PoseConfig:
    e: int = 2
    m: int = 3
    eye_axis: str = "rows"

    @property
    def thresholds(self) -> PoseThresholds:
        return PoseThresholds(self.e, self.m)

    @property
    def convention(self) -> AxisConvention:
        return AxisConvention(self.eye_axis)


@dataclass(frozen=True)
class EvalConfig:
    workers: int = 1


@dataclass(frozen=True)
class Config:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    curvature: CurvatureConfig = field(default_factory=CurvatureConfig)
    landmarks: LandmarkConfig = field(default_factory=LandmarkConfig)
    pose: PoseConfig = field(default_factory=PoseConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["preprocess"]["order"] = list(d["preprocess"]["order"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        sections = {}
        for f in fields(cls):
            sub = data.get(f.name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"config section {f.name!r} must be a mapping")
            sections[f.name] = _build(f.default_factory, sub, f.name)
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(**sections)
        cfg.check()
        return cfg

    @classmethod
    def loads(cls, text: str) -> "Config":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Config":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    def override(self, dotted: str, value) -> "Config":
        """Return a copy with ``section.key`` set to ``value`` (parsed as JSON if a string)."""
        section, _, key = dotted.partition(".")
        if isinstance(value, str):
            try:
                value = json.loads(value)
            except json.JSONDecodeError:
                pass
        d = self.to_dict()
        if section not in d or key not in d[section]:
            raise ConfigError(f"unknown config key {dotted!r}")
        d[section][key] = value
        return Config.from_dict(d)

    def check(self) -> None:
        bad = [s for s in self.preprocess.order if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown preprocessing stages {bad}; choose from {list(STAGES)}")


def _build(factory, values: dict, name: str):
    default = factory()
    known = {f.name for f in fields(default)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    if "order" in values:
        values = dict(values, order=tuple(values["order"]))
    return replace(default, **values)


def preprocess_image(img: RangeImage, cfg: PreprocessConfig) -> RangeImage:
    for stage in cfg.order:
        try:
            if stage == "crop":
                img = ellipse_crop(img, cfg.crop_scale)
            elif stage == "despike":
                img, _ = ransac_despike(
                    img,
                    window=cfg.despike_window,
                    stride=cfg.despike_stride,
                    iters=cfg.despike_iters,
                    inlier_tol=cfg.despike_inlier_tol,
                    seed=cfg.seed,
                )
            elif stage == "smooth":
                img = gaussian_smooth(img, cfg.smooth_sigma, cfg.smooth_radius)
        except (RangePoseError, ValueError) as exc:
            raise PipelineError(stage, exc) from exc
    return img


def run_pipeline(img: RangeImage, cfg: Config | None = None) -> LandmarkSet:
    """Preprocess, then locate the nose tip and the two inner eye corners."""
    cfg = cfg or Config()
    img = preprocess_image(img, cfg.preprocess)
    try:
        field_ = curvature_field(img, cfg.curvature.radius, cfg.curvature.edge_margin)
    except RangePoseError as exc:
        raise PipelineError("curvature", exc) from exc
    try:
        nose = find_nose_tip(img)
        corners = detect_eye_corners(field_, cfg.landmarks.k_thresh, cfg.landmarks.min_sep)
    except RangePoseError as exc:
        raise PipelineError("landmarks", exc) from exc
    return LandmarkSet(nose, corners)
