"""Silhouette-IoU camera pose recovery and the mesh fidelity gate.

The calibrated pose maximizes intersection-over-union between the observed
foreground mask and the silhouette of the mesh rendered under an orbit
camera.  Rasterized IoU is piecewise constant in the pose parameters, so the
search is derivative-free: an exhaustive coarse grid over (azimuth,
elevation, radius) followed by Nelder-Mead simplex refinement over
(azimuth, elevation, radius, target_x, target_y) with the field of view held
fixed (fov and radius are nearly confounded in silhouette matching).

Meshes whose best IoU falls below `tau_iou` are rejected by the caller.
"""

from dataclasses import dataclass, field

import numpy as np

from viewlift.assets import TexturedMesh
from viewlift.errors import MaskError
from viewlift.renderer import OrbitCamera, render_silhouette


@dataclass(frozen=True)
class CalibrationConfig:
    azimuth_step_deg: float = 15.0
    elevation_min_deg: float = -30.0
    elevation_max_deg: float = 60.0
    elevation_step_deg: float = 15.0
    radius_candidates: tuple = (1.5, 2.0, 2.5)   # multiples of mesh extent
    max_iterations: int = 200
    tolerance: float = 1e-4
    tau_iou: float = 0.7
    fov_deg: float = 40.0

    def __post_init__(self):
        if self.azimuth_step_deg <= 0 or self.elevation_step_deg <= 0:
            raise ValueError("grid steps must be positive")
        if not 0.0 <= self.tau_iou <= 1.0:
            raise ValueError("tau_iou must lie in [0, 1]")


@dataclass
class CalibrationResult:
    pose: OrbitCamera
    iou: float
    accepted: bool


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks of equal size.

    Both-empty masks score 0, not 1: an empty render can never count as
    aligned.
    """
    if a.shape != b.shape:
        raise MaskError(f"mask dimension mismatch: {a.shape} vs {b.shape}")
    fa = a > 0
    fb = b > 0
    union = np.logical_or(fa, fb).sum()
    if union == 0:
        return 0.0
    inter = np.logical_and(fa, fb).sum()
    return float(inter) / float(union)


# Initial simplex edge lengths for (azimuth, elevation, radius, tx, ty).
_SIMPLEX_STEPS = np.array([5.0, 5.0, 0.1, 0.05, 0.05])


def _canonical_params(x: np.ndarray) -> np.ndarray:
    """Map an unconstrained simplex vertex onto valid orbit parameters."""
    out = np.array(x, dtype=np.float64)
    out[0] = out[0] % 360.0
    out[1] = min(90.0, max(-90.0, out[1]))
    out[2] = max(out[2], 1e-6)
    return out


def _nelder_mead(objective, x0: np.ndarray, steps: np.ndarray,
                 max_iterations: int, tolerance: float):
    """Minimize `objective` with a deterministic Nelder-Mead simplex.

    Standard reflection/expansion/contraction/shrink coefficients
    (1, 2, 0.5, 0.5).  Vertices are stable-sorted by value, so ties keep
    their insertion order and the whole search is reproducible.  Stops when
    the simplex value spread drops below `tolerance` (no further improvement
    available at that scale) or after `max_iterations` iterations.  The best
    vertex is never discarded, so the result never regresses below the
    starting point.
    """
    n = len(x0)
    simplex = [np.array(x0, dtype=np.float64)]
    for i in range(n):
        v = np.array(x0, dtype=np.float64)
        v[i] += steps[i]
        simplex.append(v)
    values = [objective(v) for v in simplex]

    for _ in range(max_iterations):
        order = sorted(range(n + 1), key=lambda k: values[k])
        simplex = [simplex[k] for k in order]
        values = [values[k] for k in order]
        if values[-1] - values[0] < tolerance:
            break
        centroid = np.mean(simplex[:-1], axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = objective(xr)
        if values[0] <= fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
        elif fr < values[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = objective(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
        else:
            if fr < values[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = objective(xc)
            if fc < min(fr, values[-1]):
                simplex[-1], values[-1] = xc, fc
            else:
                best = simplex[0]
                for k in range(1, n + 1):
                    simplex[k] = best + 0.5 * (simplex[k] - best)
                    values[k] = objective(simplex[k])

    order = sorted(range(n + 1), key=lambda k: values[k])
    return simplex[order[0]], values[order[0]]


def calibrate(mesh: TexturedMesh, observed: np.ndarray,
              cfg: CalibrationConfig = CalibrationConfig()) -> CalibrationResult:
    """Recover the orbit pose whose silhouette best matches `observed`.

    `observed` must be a non-empty binary mask at the desired render
    resolution; the mesh should be normalized (the radius grid scales with
    its actual extent either way).  Stage 1 scans the full (azimuth,
    elevation, radius) grid with the target at the origin, breaking IoU ties
    toward the lexicographically smallest grid point; stage 2 refines with
    Nelder-Mead over 5 parameters.  The returned iou is recomputed at the
    returned pose, so re-rendering it reproduces the reported value exactly.
    """
    observed = np.asarray(observed)
    if observed.ndim != 2:
        raise MaskError("observed mask must be a 2-D array")
    if not (observed > 0).any():
        raise MaskError("observed mask is empty")
    height, width = observed.shape
    extent = mesh.extent

    def iou_at(params) -> float:
        p = _canonical_params(params)
        cam = OrbitCamera(
            azimuth_deg=p[0], elevation_deg=p[1], radius=p[2],
            target=(p[3], p[4], 0.0), fov_deg=cfg.fov_deg,
            width=width, height=height)
        sil = render_silhouette(mesh, cam)
        return mask_iou(sil, observed)

    azimuths = np.arange(0.0, 360.0, cfg.azimuth_step_deg)
    elevations = np.arange(cfg.elevation_min_deg,
                           cfg.elevation_max_deg + 1e-9, cfg.elevation_step_deg)
    radii = [c * extent for c in cfg.radius_candidates]

    best_iou = -1.0
    best = None
    for az in azimuths:
        for el in elevations:
            for r in radii:
                iou = iou_at((az, el, r, 0.0, 0.0))
                if iou > best_iou:
                    best_iou = iou
                    best = np.array([az, el, r, 0.0, 0.0])

    x, neg = _nelder_mead(lambda p: -iou_at(p), best, _SIMPLEX_STEPS,
                          cfg.max_iterations, cfg.tolerance)
    params = _canonical_params(x)
    pose = OrbitCamera(
        azimuth_deg=params[0], elevation_deg=params[1], radius=params[2],
        target=(params[3], params[4], 0.0), fov_deg=cfg.fov_deg,
        width=width, height=height)
    iou = mask_iou(render_silhouette(mesh, pose), observed)
    return CalibrationResult(pose=pose, iou=iou, accepted=iou >= cfg.tau_iou)
