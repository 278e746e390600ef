"""Pipeline configuration: one committed INI file plus CLI flag overrides.

Every hyperparameter of the calibrate/synthesize/plan/evaluate stages lives
here so a run is reproducible from (config file, seed) alone.  Flags win
over file values; file values win over defaults.
"""

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from viewlift.batching import CurriculumConfig, SamplerConfig
from viewlift.calibration import CalibrationConfig
from viewlift.errors import ValidationError
from viewlift.losses import LossWeights
from viewlift.synthesis import Direction, PerturbationConfig


@dataclass
class PipelineConfig:
    manifest: str = ""
    background_dir: str = ""
    output_dir: str = "out"
    render_width: int = 256
    render_height: int = 512
    up_axis: str = "z"
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    direction: Direction = Direction.GROUND_TO_AERIAL
    views_per_source: int = 4
    feather_radius: int = 2
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    distance_metric: str = "cosine"
    max_rank: int = 50
    seed: int = 0

    def validate(self):
        if self.views_per_source < 1:
            raise ValidationError("views_per_source must be >= 1")
        if self.render_width < 1 or self.render_height < 1:
            raise ValidationError("render resolution must be positive")
        if self.feather_radius < 0:
            raise ValidationError("feather_radius must be >= 0")
        if self.up_axis not in ("z", "y"):
            raise ValidationError("up_axis must be 'z' or 'y'")
        if self.distance_metric not in ("cosine", "euclidean"):
            raise ValidationError("distance metric must be cosine or euclidean")


def _get(parser, section, key, cast, default):
    if parser.has_option(section, key):
        raw = parser.get(section, key)
        try:
            return cast(raw)
        except ValueError as exc:
            raise ValidationError(f"[{section}] {key}: cannot parse {raw!r}") from exc
    return default


def _floats(raw: str) -> tuple:
    return tuple(float(tok) for tok in raw.replace(",", " ").split())


def load_config(path=None) -> PipelineConfig:
    """Read a key = value INI config; missing keys keep their defaults."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read(path)

    cfg.manifest = _get(parser, "paths", "manifest", str, cfg.manifest)
    cfg.background_dir = _get(parser, "paths", "background_dir", str, cfg.background_dir)
    cfg.output_dir = _get(parser, "paths", "output_dir", str, cfg.output_dir)

    cfg.render_width = _get(parser, "render", "width", int, cfg.render_width)
    cfg.render_height = _get(parser, "render", "height", int, cfg.render_height)
    cfg.up_axis = _get(parser, "render", "up_axis", str, cfg.up_axis)

    cal = cfg.calibration
    cfg.calibration = CalibrationConfig(
        azimuth_step_deg=_get(parser, "calibration", "azimuth_step_deg", float, cal.azimuth_step_deg),
        elevation_min_deg=_get(parser, "calibration", "elevation_min_deg", float, cal.elevation_min_deg),
        elevation_max_deg=_get(parser, "calibration", "elevation_max_deg", float, cal.elevation_max_deg),
        elevation_step_deg=_get(parser, "calibration", "elevation_step_deg", float, cal.elevation_step_deg),
        radius_candidates=_get(parser, "calibration", "radius_candidates", _floats, cal.radius_candidates),
        max_iterations=_get(parser, "calibration", "max_iterations", int, cal.max_iterations),
        tolerance=_get(parser, "calibration", "tolerance", float, cal.tolerance),
        tau_iou=_get(parser, "calibration", "tau_iou", float, cal.tau_iou),
        fov_deg=_get(parser, "calibration", "fov_deg", float, cal.fov_deg),
    )

    per = cfg.perturbation
    cfg.perturbation = PerturbationConfig(
        delta_theta_max=_get(parser, "perturbation", "delta_theta_max", float, per.delta_theta_max),
        delta_phi_max=_get(parser, "perturbation", "delta_phi_max", float, per.delta_phi_max),
    )
    direction = _get(parser, "perturbation", "direction", str, cfg.direction.value)
    try:
        cfg.direction = Direction(direction)
    except ValueError as exc:
        raise ValidationError(f"direction must be g2a or a2g, got {direction!r}") from exc
    cfg.views_per_source = _get(parser, "perturbation", "views_per_source", int, cfg.views_per_source)
    cfg.feather_radius = _get(parser, "perturbation", "feather_radius", int, cfg.feather_radius)

    sam = cfg.sampler
    cfg.seed = _get(parser, "pipeline", "seed", int, cfg.seed)
    cfg.sampler = SamplerConfig(
        identities_per_batch=_get(parser, "sampler", "identities_per_batch", int, sam.identities_per_batch),
        instances_per_identity=_get(parser, "sampler", "instances_per_identity", int, sam.instances_per_identity),
        real_per_identity=_get(parser, "sampler", "real_per_identity", int, sam.real_per_identity),
        synthetic_per_identity=_get(parser, "sampler", "synthetic_per_identity", int, sam.synthetic_per_identity),
        seed=cfg.seed,
    )

    cur = cfg.curriculum
    cfg.curriculum = CurriculumConfig(
        warmup_epochs=_get(parser, "curriculum", "warmup_epochs", int, cur.warmup_epochs),
        delta_theta_max=_get(parser, "curriculum", "delta_theta_max", float, cur.delta_theta_max),
    )

    wts = cfg.weights
    cfg.weights = LossWeights(
        lambda_id=_get(parser, "losses", "lambda_id", float, wts.lambda_id),
        lambda_tri=_get(parser, "losses", "lambda_tri", float, wts.lambda_tri),
        lambda_dom=_get(parser, "losses", "lambda_dom", float, wts.lambda_dom),
    )

    cfg.distance_metric = _get(parser, "metrics", "distance", str, cfg.distance_metric)
    cfg.max_rank = _get(parser, "metrics", "max_rank", int, cfg.max_rank)
    cfg.validate()
    return cfg


def apply_overrides(cfg: PipelineConfig, seed=None, direction=None, views=None) -> PipelineConfig:
    """Apply CLI flag overrides (flags win over file values)."""
    if seed is not None:
        cfg.seed = seed
        cfg.sampler = SamplerConfig(
            identities_per_batch=cfg.sampler.identities_per_batch,
            instances_per_identity=cfg.sampler.instances_per_identity,
            real_per_identity=cfg.sampler.real_per_identity,
            synthetic_per_identity=cfg.sampler.synthetic_per_identity,
            seed=seed,
        )
    if direction is not None:
        cfg.direction = Direction(direction)
    if views is not None:
        cfg.views_per_source = views
    cfg.validate()
    return cfg
