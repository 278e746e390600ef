"""Novel-view generation: pose perturbation, compositing, color alignment.

A calibrated orbit pose is perturbed within direction-constrained elevation
and azimuth ranges (toward the nadir for ground-to-aerial, toward the
horizon for aerial-to-ground), rendered, composited onto a real background
plate through its own silhouette, and finally color-aligned to a real
reference image with a global statistical transfer in the log-opponent
(l-alpha-beta) color space.  The color stage is a deterministic stand-in for
a generative harmonization module and is deliberately pluggable: anything
with the same (composite, reference) -> image signature can replace it.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from viewlift.assets import TexturedMesh
from viewlift.errors import EmptyViewError, MaskError
from viewlift.renderer import OrbitCamera, render, silhouette


class Direction(Enum):
    GROUND_TO_AERIAL = "g2a"
    AERIAL_TO_GROUND = "a2g"


@dataclass(frozen=True)
class PerturbationConfig:
    delta_theta_max: float = 30.0
    delta_phi_max: float = 30.0

    def __post_init__(self):
        if self.delta_theta_max <= 0 or self.delta_phi_max <= 0:
            raise ValueError("perturbation ranges must be positive")


@dataclass
class SynthesizedView:
    image: np.ndarray         # (H, W, 3) uint8
    fg_mask: np.ndarray       # (H, W) uint8 in {0, 255}
    delta_theta: float
    delta_phi: float
    identity: str = ""
    source_record: str = ""


def sample_perturbation(rng: np.random.Generator, direction: Direction,
                        cfg: PerturbationConfig = PerturbationConfig()):
    """Draw (delta_theta, delta_phi) for one novel view.

    Elevation shifts are one-sided: uniform on [0, max] toward the nadir for
    ground-to-aerial, uniform on [-max, 0] for aerial-to-ground.  Azimuth is
    uniform on [-max, max].  Consumes exactly two draws from `rng`.
    """
    if direction is Direction.GROUND_TO_AERIAL:
        delta_theta = rng.uniform(0.0, cfg.delta_theta_max)
    else:
        delta_theta = rng.uniform(-cfg.delta_theta_max, 0.0)
    delta_phi = rng.uniform(-cfg.delta_phi_max, cfg.delta_phi_max)
    return float(delta_theta), float(delta_phi)


def perturb_pose(cam: OrbitCamera, delta_theta: float, delta_phi: float) -> OrbitCamera:
    """Shift elevation (clamped to [-90, 90]) and azimuth (mod 360)."""
    elevation = min(90.0, max(-90.0, cam.elevation_deg + delta_theta))
    azimuth = (cam.azimuth_deg + delta_phi) % 360.0
    return cam.with_pose(azimuth_deg=azimuth, elevation_deg=elevation)


def synthesize_view(mesh: TexturedMesh, calibrated: OrbitCamera,
                    delta_theta: float, delta_phi: float,
                    identity: str = "", source_record: str = "") -> SynthesizedView:
    """Render the mesh at the perturbed pose; raises EmptyViewError if the
    perturbation pushed the mesh entirely out of frame."""
    view = render(mesh, perturb_pose(calibrated, delta_theta, delta_phi))
    fg_mask = silhouette(view)
    if not fg_mask.any():
        raise EmptyViewError(
            f"perturbation ({delta_theta:+.2f}, {delta_phi:+.2f}) produced an empty view")
    return SynthesizedView(
        image=view.color[:, :, :3].copy(),
        fg_mask=fg_mask,
        delta_theta=delta_theta,
        delta_phi=delta_phi,
        identity=identity,
        source_record=source_record,
    )


def feather_edges(mask: np.ndarray, radius: int) -> np.ndarray:
    """Box-blur a binary mask into a soft [0, 1] matte.

    Kernel is (2 radius + 1)^2 with edge replication at the borders; radius 0
    returns the binary mask as float {0, 1} unchanged.
    """
    if radius < 0:
        raise ValueError("feather radius must be >= 0")
    soft = (np.asarray(mask) > 0).astype(np.float64)
    if radius == 0:
        return soft
    k = 2 * radius + 1
    padded = np.pad(soft, radius, mode="edge")
    # Separable box filter: sliding-window sums from a zero-prefixed cumsum.
    for axis in (0, 1):
        zshape = list(padded.shape)
        zshape[axis] = 1
        csum = np.concatenate([np.zeros(zshape), np.cumsum(padded, axis=axis)], axis=axis)
        hi = np.take(csum, np.arange(k, csum.shape[axis]), axis=axis)
        lo = np.take(csum, np.arange(0, csum.shape[axis] - k), axis=axis)
        padded = hi - lo
    return padded / float(k * k)


def composite(fg: SynthesizedView, background: np.ndarray,
              feather_radius: int = 2) -> np.ndarray:
    """Blend the rendered foreground onto a background plate.

    out = fg * m + background * (1 - m) with m the feathered silhouette,
    evaluated in 8-bit space with rounding half up.  With feather radius 0
    this is the exact pointwise mask equation.
    """
    background = np.asarray(background)
    if background.shape[:2] != fg.image.shape[:2] or background.ndim != 3:
        raise MaskError(
            f"background {background.shape} does not match foreground {fg.image.shape}")
    m = feather_edges(fg.fg_mask, feather_radius)[:, :, None]
    blended = fg.image.astype(np.float64) * m + background.astype(np.float64) * (1.0 - m)
    return np.floor(blended + 0.5).astype(np.uint8)


# --- statistical color transfer ----------------------------------------------

# RGB -> LMS cone response (Reinhard et al. color-transfer basis).
_RGB_TO_LMS = np.array([
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
])
_LMS_TO_RGB = np.linalg.inv(_RGB_TO_LMS)

# log-LMS -> decorrelated opponent axes (achromatic, blue-yellow, red-green).
_LOG_LMS_TO_OPP = np.diag([1.0 / math.sqrt(3.0), 1.0 / math.sqrt(6.0),
                           1.0 / math.sqrt(2.0)]) @ np.array([
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -2.0],
    [1.0, -1.0, 0.0],
])
_OPP_TO_LOG_LMS = np.linalg.inv(_LOG_LMS_TO_OPP)

_LMS_FLOOR = 1e-6


def rgb_to_opponent(img: np.ndarray) -> np.ndarray:
    """Map an (H, W, 3) uint8 RGB image into log-opponent space (float64)."""
    rgb = np.asarray(img, dtype=np.float64) / 255.0
    lms = rgb @ _RGB_TO_LMS.T
    log_lms = np.log10(np.maximum(lms, _LMS_FLOOR))
    return log_lms @ _LOG_LMS_TO_OPP.T


def opponent_to_rgb(opp: np.ndarray) -> np.ndarray:
    """Invert rgb_to_opponent; returns uint8 clamped to [0, 255]."""
    log_lms = opp @ _OPP_TO_LOG_LMS.T
    lms = np.power(10.0, log_lms)
    rgb = lms @ _LMS_TO_RGB.T
    return np.floor(np.clip(rgb * 255.0, 0.0, 255.0) + 0.5).astype(np.uint8)


def match_opponent_stats(opp: np.ndarray, ref_mean: np.ndarray,
                         ref_std: np.ndarray) -> np.ndarray:
    """Affine per-channel map making opp's mean/std equal the reference's.

    Channels with zero input deviation collapse onto the reference mean.
    """
    mean = opp.reshape(-1, 3).mean(axis=0)
    std = opp.reshape(-1, 3).std(axis=0)
    out = np.empty_like(opp)
    for c in range(3):
        if std[c] == 0.0:
            out[..., c] = ref_mean[c]
        else:
            out[..., c] = (opp[..., c] - mean[c]) * (ref_std[c] / std[c]) + ref_mean[c]
    return out


def color_align(composite_img: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Globally align the composite's color statistics to the reference.

    Both images are mapped to log-opponent space; each channel of the
    composite is shifted/scaled to the reference mean and standard
    deviation, then mapped back to RGB and clamped.  Idempotent up to one
    intensity level per channel.
    """
    opp = rgb_to_opponent(composite_img)
    ref = rgb_to_opponent(reference).reshape(-1, 3)
    return opponent_to_rgb(match_opponent_stats(opp, ref.mean(axis=0), ref.std(axis=0)))
