"""Deterministic software rasterizer for foreground-only orbit-camera views.

Coordinate conventions
----------------------
World space is right-handed and Z-up.  An orbit camera is parameterized by
azimuth (degrees around +Z, 0 along +X), elevation (0 = horizontal,
+90 = nadir looking straight down), radius, and a look-at target.  Camera
space has x right, y up, and z pointing backward, so geometry in front of
the camera has negative z; positive scalar depth is ``w = -z``.

Image space puts pixel (row 0, col 0) at the top left; pixel centers sit at
(col + 0.5, row + 0.5).  Intrinsics use a vertical field of view with the
principal point at the image center.

Rendering is flat texture lookup only (no lighting, no anti-aliasing), with
z-buffering, perspective-correct barycentric interpolation, and bilinear
clamp-to-edge texture sampling.  Backface culling is disabled because
single-view reconstructions often have inconsistent winding.  Output is
bit-deterministic: triangles are processed in face order and depth ties keep
the earlier face.
"""

import math
from dataclasses import dataclass

import numpy as np

from viewlift.assets import TexturedMesh


@dataclass(frozen=True)
class OrbitCamera:
    """Azimuth/elevation/radius orbit about a target point.

    Azimuth is normalized into [0, 360) at construction, which also makes
    renders at az and az+360 byte-identical whenever az+360 is exactly
    representable.
    """

    azimuth_deg: float
    elevation_deg: float
    radius: float
    target: tuple = (0.0, 0.0, 0.0)
    fov_deg: float = 40.0
    width: int = 256
    height: int = 512

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise ValueError(f"elevation_deg out of [-90, 90]: {self.elevation_deg}")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov_deg out of (0, 180): {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        object.__setattr__(self, "azimuth_deg", float(self.azimuth_deg) % 360.0)
        object.__setattr__(self, "target", tuple(float(c) for c in self.target))

    def with_pose(self, azimuth_deg=None, elevation_deg=None, radius=None, target=None):
        return OrbitCamera(
            azimuth_deg=self.azimuth_deg if azimuth_deg is None else azimuth_deg,
            elevation_deg=self.elevation_deg if elevation_deg is None else elevation_deg,
            radius=self.radius if radius is None else radius,
            target=self.target if target is None else target,
            fov_deg=self.fov_deg,
            width=self.width,
            height=self.height,
        )


@dataclass
class CameraPose:
    """Extrinsics + pinhole intrinsics derived from an OrbitCamera.

    `rotation` rows are the camera axes (right, up, backward) in world
    coordinates; a world point maps to camera space as R @ p + t.
    """

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float

    @property
    def eye(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        return -self.rotation[2]

    def matrix(self) -> np.ndarray:
        """3x4 [R | t] world-to-camera matrix."""
        return np.hstack([self.rotation, self.translation[:, None]])


@dataclass
class RenderedView:
    """RGBA color plus per-pixel depth (+inf where nothing was drawn)."""

    color: np.ndarray   # (H, W, 4) uint8
    depth: np.ndarray   # (H, W) float64, +inf for empty pixels

    def validate(self):
        covered = self.color[:, :, 3] > 0
        finite = np.isfinite(self.depth)
        if not np.array_equal(covered, finite):
            raise AssertionError("alpha > 0 must coincide with finite depth")


_POLE_ELEVATION = 89.0


def pose_from_orbit(cam: OrbitCamera) -> CameraPose:
    """Build world-to-camera extrinsics and intrinsics for an orbit camera.

    eye = target + r * (cos el cos az, cos el sin az, sin el); the view axis
    points from eye to target; up is world +Z except within 1 degree of the
    poles, where up = (-cos az, -sin az, 0) keeps the frame continuous.
    """
    az = math.radians(cam.azimuth_deg)
    el = math.radians(cam.elevation_deg)
    target = np.asarray(cam.target, dtype=np.float64)
    eye = target + cam.radius * np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])

    if abs(cam.elevation_deg) >= _POLE_ELEVATION:
        up = np.array([-math.cos(az), -math.sin(az), 0.0])
    else:
        up = np.array([0.0, 0.0, 1.0])

    zaxis = eye - target
    zaxis = zaxis / np.linalg.norm(zaxis)
    xaxis = np.cross(up, zaxis)
    xaxis = xaxis / np.linalg.norm(xaxis)
    yaxis = np.cross(zaxis, xaxis)

    rotation = np.stack([xaxis, yaxis, zaxis])
    translation = -rotation @ eye
    focal = (cam.height / 2.0) / math.tan(math.radians(cam.fov_deg) / 2.0)
    return CameraPose(
        rotation=rotation,
        translation=translation,
        fx=focal,
        fy=focal,
        cx=cam.width / 2.0,
        cy=cam.height / 2.0,
        width=cam.width,
        height=cam.height,
        near=0.01 * cam.radius,
        far=100.0 * cam.radius,
    )


def _clip_triangles(verts_cam: np.ndarray, faces: np.ndarray, face_uvs: np.ndarray,
                    near: float):
    """Near-plane clip; yields (cam_pts (3,3), uvs (3,2)) per surviving triangle.

    The far plane is recorded in CameraPose but never binding for normalized
    meshes (far = 100 r), so fragments are not far-tested; this keeps the
    textured and silhouette-only paths exactly coincident in coverage.
    """
    z = verts_cam[:, 2]
    front = z <= -near
    front_count = front[faces].sum(axis=1)
    out = []
    for fi in np.nonzero(front_count > 0)[0]:
        tri = faces[fi]
        if front_count[fi] == 3:
            out.append((verts_cam[tri], face_uvs[fi]))
            continue
        # Sutherland-Hodgman against z = -near, lerping position and UV.
        poly = [(verts_cam[tri[c]], face_uvs[fi, c]) for c in range(3)]
        clipped = []
        for c in range(3):
            (pa, ta), (pb, tb) = poly[c], poly[(c + 1) % 3]
            a_in = pa[2] <= -near
            b_in = pb[2] <= -near
            if a_in:
                clipped.append((pa, ta))
            if a_in != b_in:
                s = (-near - pa[2]) / (pb[2] - pa[2])
                clipped.append((pa + s * (pb - pa), ta + s * (tb - ta)))
        for c in range(1, len(clipped) - 1):
            pts = np.stack([clipped[0][0], clipped[c][0], clipped[c + 1][0]])
            uvs = np.stack([clipped[0][1], clipped[c][1], clipped[c + 1][1]])
            out.append((pts, uvs))
    return out


def _project(pose: CameraPose, cam_pts: np.ndarray):
    w = -cam_pts[:, 2]
    u = pose.cx + pose.fx * cam_pts[:, 0] / w
    v = pose.cy - pose.fy * cam_pts[:, 1] / w
    return u, v, w


def _sample_texture(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear clamp-to-edge sampling (align-corners texel mapping)."""
    th, tw = texture.shape[:2]
    tx = np.clip(uv[:, 0], 0.0, 1.0) * (tw - 1)
    ty = (1.0 - np.clip(uv[:, 1], 0.0, 1.0)) * (th - 1)
    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    x1 = np.minimum(x0 + 1, tw - 1)
    y1 = np.minimum(y0 + 1, th - 1)
    ax = (tx - x0)[:, None]
    ay = (ty - y0)[:, None]
    tex = texture.astype(np.float64)
    c = ((1 - ay) * ((1 - ax) * tex[y0, x0] + ax * tex[y0, x1])
         + ay * ((1 - ax) * tex[y1, x0] + ax * tex[y1, x1]))
    return np.floor(c + 0.5).astype(np.uint8)


def _raster_setup(pose, cam_pts):
    """Project one clipped triangle; returns None for degenerate/offscreen."""
    u, v, w = _project(pose, cam_pts)
    area = (u[1] - u[0]) * (v[2] - v[0]) - (u[2] - u[0]) * (v[1] - v[0])
    if area == 0.0:
        return None
    jmin = max(0, int(math.floor(u.min() - 0.5)))
    jmax = min(pose.width - 1, int(math.ceil(u.max() - 0.5)))
    imin = max(0, int(math.floor(v.min() - 0.5)))
    imax = min(pose.height - 1, int(math.ceil(v.max() - 0.5)))
    if jmin > jmax or imin > imax:
        return None
    px = np.arange(jmin, jmax + 1, dtype=np.float64) + 0.5
    py = np.arange(imin, imax + 1, dtype=np.float64) + 0.5
    gx = px[None, :]
    gy = py[:, None]
    e0 = (u[2] - u[1]) * (gy - v[1]) - (v[2] - v[1]) * (gx - u[1])
    e1 = (u[0] - u[2]) * (gy - v[2]) - (v[0] - v[2]) * (gx - u[2])
    e2 = (u[1] - u[0]) * (gy - v[0]) - (v[1] - v[0]) * (gx - u[0])
    b0 = e0 / area
    b1 = e1 / area
    b2 = e2 / area
    inside = (b0 >= 0.0) & (b1 >= 0.0) & (b2 >= 0.0)
    if not inside.any():
        return None
    return (imin, imax, jmin, jmax), (b0, b1, b2), w, inside


def render(mesh: TexturedMesh, cam: OrbitCamera) -> RenderedView:
    """Rasterize `mesh` from `cam` into a foreground-only RGBA view.

    Pixels not covered by any triangle have alpha 0 and infinite depth.  A
    mesh entirely behind the camera yields a fully transparent view.  The
    output is a pure function of (mesh, cam), byte-identical across runs.
    """
    pose = pose_from_orbit(cam)
    verts_cam = mesh.vertices @ pose.rotation.T + pose.translation
    color = np.zeros((pose.height, pose.width, 4), dtype=np.uint8)
    depth = np.full((pose.height, pose.width), np.inf, dtype=np.float64)

    for cam_pts, uvs in _clip_triangles(verts_cam, mesh.faces, mesh.face_uvs, pose.near):
        setup = _raster_setup(pose, cam_pts)
        if setup is None:
            continue
        (imin, imax, jmin, jmax), (b0, b1, b2), w, inside = setup
        invw = 1.0 / w
        denom = b0 * invw[0] + b1 * invw[1] + b2 * invw[2]
        zbuf = depth[imin:imax + 1, jmin:jmax + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            frag_depth = np.where(inside, 1.0 / denom, np.inf)
        win = inside & (frag_depth < zbuf)
        if not win.any():
            continue
        pb0 = (b0 * invw[0])[win] * frag_depth[win]
        pb1 = (b1 * invw[1])[win] * frag_depth[win]
        pb2 = (b2 * invw[2])[win] * frag_depth[win]
        uv = (pb0[:, None] * uvs[0] + pb1[:, None] * uvs[1] + pb2[:, None] * uvs[2])
        rgb = _sample_texture(mesh.texture, uv)
        zbuf[win] = frag_depth[win]
        block = color[imin:imax + 1, jmin:jmax + 1]
        block[win, :3] = rgb
        block[win, 3] = 255
    return RenderedView(color=color, depth=depth)


def render_silhouette(mesh: TexturedMesh, cam: OrbitCamera) -> np.ndarray:
    """Coverage-only rasterization; equals silhouette(render(mesh, cam)).

    Skips the z-buffer and texture sampling, which makes the calibration
    search roughly an order of magnitude cheaper than full renders.
    """
    pose = pose_from_orbit(cam)
    verts_cam = mesh.vertices @ pose.rotation.T + pose.translation
    covered = np.zeros((pose.height, pose.width), dtype=bool)
    for cam_pts, _ in _clip_triangles(verts_cam, mesh.faces, mesh.face_uvs, pose.near):
        setup = _raster_setup(pose, cam_pts)
        if setup is None:
            continue
        (imin, imax, jmin, jmax), _, _, inside = setup
        covered[imin:imax + 1, jmin:jmax + 1] |= inside
    return np.where(covered, 255, 0).astype(np.uint8)


def silhouette(view: RenderedView) -> np.ndarray:
    """Binary coverage mask of a rendered view: 255 where alpha > 0."""
    return np.where(view.color[:, :, 3] > 0, 255, 0).astype(np.uint8)
