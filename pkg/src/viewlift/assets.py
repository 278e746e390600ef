"""File-based inputs: textured meshes, images, masks, and dataset manifests.

Meshes arrive as a Wavefront-OBJ triangle subset (``v``/``vt``/``f`` with one
diffuse-textured material); images and masks as PNG; manifests as JSON Lines.
Everything returned here is treated as immutable after construction and is
safe to share across threads.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from viewlift.errors import (
    DegenerateGeometryError,
    FaceIndexError,
    ManifestError,
    MaskError,
    MeshFormatError,
    MissingTextureError,
    NonTriangularFaceError,
)

REAL = "real"
SYNTHETIC = "synthetic"

# Row ordering of manifest JSON objects; parse/serialize round-trips
# byte-identically when input rows follow it.
_MANIFEST_FIELDS = ("identity", "image", "mask", "mesh", "domain", "view",
                    "delta_theta", "delta_phi")


@dataclass
class TexturedMesh:
    """Triangle mesh with a per-face-corner UV mapping into one RGB texture.

    vertices:  (N, 3) float64, model units
    faces:     (F, 3) int32 vertex indices
    face_uvs:  (F, 3, 2) float64 texture coordinates in [0, 1]^2
    texture:   (Ht, Wt, 3) uint8
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_uvs: np.ndarray
    texture: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int32)
        self.face_uvs = np.asarray(self.face_uvs, dtype=np.float64)
        self.texture = np.asarray(self.texture, dtype=np.uint8)
        self.validate()

    def validate(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3 or len(self.vertices) < 3:
            raise MeshFormatError("vertices must be an (N, 3) array with N >= 3")
        if not np.isfinite(self.vertices).all():
            raise MeshFormatError("vertex coordinates must be finite")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3 or len(self.faces) < 1:
            raise MeshFormatError("faces must be an (F, 3) array with F >= 1")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise FaceIndexError(
                f"face index out of range [0, {len(self.vertices) - 1}]")
        if self.face_uvs.shape != (len(self.faces), 3, 2):
            raise MeshFormatError("face_uvs must have shape (F, 3, 2)")
        if self.face_uvs.min() < 0.0 or self.face_uvs.max() > 1.0:
            raise MeshFormatError("UV coordinates must lie in [0, 1]")
        if self.texture.ndim != 3 or self.texture.shape[2] != 3:
            raise MeshFormatError("texture must be an RGB (H, W, 3) array")
        if self.texture.shape[0] < 1 or self.texture.shape[1] < 1:
            raise MeshFormatError("texture must be at least 1x1")

    @property
    def extent(self) -> float:
        """Largest axis-aligned bounding-box extent."""
        spans = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(spans.max())


def load_mesh(path, up_axis: str = "z") -> TexturedMesh:
    """Parse an OBJ triangle mesh and its single diffuse texture.

    Supported subset: `v x y z`, `vt u v`, triangular `f` entries of the form
    v/vt or v/vt/vn, `mtllib`/`usemtl` with one material whose MTL declares
    `map_Kd`.  Anything else (quads, missing UVs, out-of-range indices,
    unreachable textures) raises a distinct error naming the offending line.

    up_axis "y" rotates a Y-up mesh into the Z-up convention used everywhere
    else in the toolkit.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    if up_axis not in ("z", "y"):
        raise MeshFormatError(f"unsupported up_axis {up_axis!r} (use 'z' or 'y')")

    vertices = []
    uvs = []
    faces = []
    face_uv_idx = []
    mtllibs = []
    used_materials = []

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            key = tok[0]
            if key == "v":
                if len(tok) < 4:
                    raise MeshFormatError(f"{path.name}:{lineno}: vertex needs 3 components")
                vertices.append([float(tok[1]), float(tok[2]), float(tok[3])])
            elif key == "vt":
                if len(tok) < 3:
                    raise MeshFormatError(f"{path.name}:{lineno}: vt needs 2 components")
                uvs.append([float(tok[1]), float(tok[2])])
            elif key == "f":
                corners = tok[1:]
                if len(corners) != 3:
                    raise NonTriangularFaceError(
                        f"{path.name}:{lineno}: face has {len(corners)} corners, only triangles supported")
                vidx = []
                tidx = []
                for corner in corners:
                    parts = corner.split("/")
                    v = int(parts[0])
                    if v <= 0:
                        raise FaceIndexError(
                            f"{path.name}:{lineno}: non-positive/relative indices unsupported")
                    if len(parts) < 2 or not parts[1]:
                        raise MeshFormatError(
                            f"{path.name}:{lineno}: face corner missing texture coordinate")
                    t = int(parts[1])
                    if t <= 0:
                        raise FaceIndexError(
                            f"{path.name}:{lineno}: non-positive/relative indices unsupported")
                    vidx.append(v - 1)
                    tidx.append(t - 1)
                faces.append((vidx, lineno))
                face_uv_idx.append(tidx)
            elif key == "mtllib":
                mtllibs.append(line.split(None, 1)[1])
            elif key == "usemtl":
                used_materials.append(tok[1] if len(tok) > 1 else "")
            # vn / s / o / g and other statements are ignored

    if len(vertices) < 3 or not faces:
        raise MeshFormatError(f"{path.name}: needs at least 3 vertices and 1 face")

    nv, nt = len(vertices), len(uvs)
    for (vidx, lineno), tidx in zip(faces, face_uv_idx):
        for v in vidx:
            if v >= nv:
                raise FaceIndexError(
                    f"{path.name}:{lineno}: vertex index {v + 1} > vertex count {nv}")
        for t in tidx:
            if t >= nt:
                raise FaceIndexError(
                    f"{path.name}:{lineno}: vt index {t + 1} > vt count {nt}")

    texture = _load_obj_texture(path, mtllibs, used_materials)

    verts = np.asarray(vertices, dtype=np.float64)
    if up_axis == "y":
        # Y-up -> Z-up: (x, y, z) -> (x, -z, y)
        verts = np.stack([verts[:, 0], -verts[:, 2], verts[:, 1]], axis=1)
    uv_arr = np.asarray(uvs, dtype=np.float64)
    face_arr = np.asarray([vidx for vidx, _ in faces], dtype=np.int32)
    face_uvs = uv_arr[np.asarray(face_uv_idx, dtype=np.int32)]
    face_uvs = np.clip(face_uvs, 0.0, 1.0)
    return TexturedMesh(verts, face_arr, face_uvs, texture)


def _load_obj_texture(obj_path: Path, mtllibs, used_materials) -> np.ndarray:
    if not mtllibs:
        raise MissingTextureError(f"{obj_path.name}: no mtllib statement")
    texture_file = None
    wanted = used_materials[0] if used_materials else None
    for lib in mtllibs:
        mtl_path = obj_path.parent / lib
        if not mtl_path.is_file():
            raise MissingTextureError(f"{obj_path.name}: material library {lib} not found")
        current = None
        for raw in open(mtl_path, "r", encoding="utf-8"):
            tok = raw.strip().split()
            if not tok:
                continue
            if tok[0] == "newmtl":
                current = tok[1] if len(tok) > 1 else ""
            elif tok[0] == "map_Kd" and len(tok) > 1:
                if wanted is None or current == wanted or texture_file is None:
                    texture_file = mtl_path.parent / tok[-1]
                    if wanted is not None and current == wanted:
                        break
    if texture_file is None:
        raise MissingTextureError(f"{obj_path.name}: no map_Kd diffuse texture in materials")
    if not texture_file.is_file():
        raise MissingTextureError(f"{obj_path.name}: texture image {texture_file.name} not found")
    return load_image(texture_file)


def save_mesh(mesh: TexturedMesh, path) -> None:
    """Write mesh as OBJ + MTL + PNG texture next to each other.

    Vertex and UV coordinates are written with 8 decimals, so a load/save
    round trip agrees within 1e-5 per component.
    """
    path = Path(path)
    stem = path.stem
    mtl_name = stem + ".mtl"
    tex_name = stem + "_texture.png"

    # Deduplicate per-corner UVs into a shared vt table.
    uv_index = {}
    vt_lines = []
    corner_uv = np.empty((len(mesh.faces), 3), dtype=np.int64)
    for fi in range(len(mesh.faces)):
        for ci in range(3):
            key = (round(mesh.face_uvs[fi, ci, 0], 8), round(mesh.face_uvs[fi, ci, 1], 8))
            if key not in uv_index:
                uv_index[key] = len(vt_lines)
                vt_lines.append(f"vt {key[0]:.8f} {key[1]:.8f}\n")
            corner_uv[fi, ci] = uv_index[key]

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"mtllib {mtl_name}\n")
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}\n")
        fh.writelines(vt_lines)
        fh.write("usemtl material0\n")
        for fi, face in enumerate(mesh.faces):
            fh.write("f " + " ".join(
                f"{face[ci] + 1}/{corner_uv[fi, ci] + 1}" for ci in range(3)) + "\n")
    with open(path.parent / mtl_name, "w", encoding="utf-8") as fh:
        fh.write("newmtl material0\n")
        fh.write(f"map_Kd {tex_name}\n")
    save_image(mesh.texture, path.parent / tex_name)


def normalize_mesh(mesh: TexturedMesh) -> TexturedMesh:
    """Center at the AABB center and scale the largest extent to 1.

    Idempotent, and invariant to input translation and uniform scaling;
    topology, UVs, and texture are shared with the input, not copied.
    """
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    span = float((hi - lo).max())
    if span <= 0.0:
        raise DegenerateGeometryError("mesh has zero extent in all axes")
    center = (lo + hi) / 2.0
    verts = (mesh.vertices - center) / span
    return TexturedMesh(verts, mesh.faces, mesh.face_uvs, mesh.texture)


# --- images and masks -------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Load an image file as an (H, W, 3) uint8 RGB array."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image file not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MaskError(f"zero-area image: {path}")
    return arr


def save_image(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError("save_image expects uint8 data")
    mode = {2: "L", 3: None}[arr.ndim]
    Image.fromarray(arr, mode=mode).save(Path(path), format="PNG")


def load_mask(path) -> np.ndarray:
    """Load a mask image, binarizing at >127, as (H, W) uint8 in {0, 255}."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mask file not found: {path}")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise MaskError(f"unreadable mask {path}: {exc}") from exc
    if arr.size == 0 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MaskError(f"zero-area mask: {path}")
    return np.where(arr > 127, 255, 0).astype(np.uint8)


def resize_mask(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    """Nearest-neighbor resize keeping the mask binary."""
    out = Image.fromarray(mask, mode="L").resize((width, height), Image.NEAREST)
    return np.asarray(out, dtype=np.uint8)


def resize_image(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of an RGB image."""
    out = Image.fromarray(img).resize((width, height), Image.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


# --- manifests ---------------------------------------------------------------

@dataclass
class SampleRecord:
    """One identity-labeled image row of a dataset manifest.

    `record_id` (the image path) is the stable key used to derive per-row
    random streams and to join rows with calibration reports.
    """

    identity: str
    image: str
    domain: str
    view: str = ""
    mask: str | None = None
    mesh: str | None = None
    delta_theta: float = 0.0
    delta_phi: float = 0.0

    @property
    def record_id(self) -> str:
        return self.image

    def validate(self, delta_theta_max: float | None = None):
        if not self.identity:
            raise ManifestError(f"record {self.image!r}: empty identity label")
        if self.domain not in (REAL, SYNTHETIC):
            raise ManifestError(f"record {self.image!r}: bad domain {self.domain!r}")
        if not (np.isfinite(self.delta_theta) and np.isfinite(self.delta_phi)):
            raise ManifestError(f"record {self.image!r}: non-finite delta angles")
        if self.domain == REAL and (self.delta_theta != 0.0 or self.delta_phi != 0.0):
            raise ManifestError(f"record {self.image!r}: real rows must have zero deltas")
        if delta_theta_max is not None and abs(self.delta_theta) > delta_theta_max:
            raise ManifestError(
                f"record {self.image!r}: |delta_theta| {abs(self.delta_theta)} "
                f"exceeds configured max {delta_theta_max}")

    def to_json(self) -> str:
        obj = {
            "identity": self.identity,
            "image": self.image,
            "mask": self.mask,
            "mesh": self.mesh,
            "domain": self.domain,
            "view": self.view,
            "delta_theta": self.delta_theta,
            "delta_phi": self.delta_phi,
        }
        obj = {k: obj[k] for k in _MANIFEST_FIELDS if obj[k] is not None}
        return json.dumps(obj, separators=(", ", ": "))

    @classmethod
    def from_json(cls, line: str) -> "SampleRecord":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"bad manifest line: {exc}") from exc
        try:
            return cls(
                identity=obj["identity"],
                image=obj["image"],
                domain=obj["domain"],
                view=obj.get("view", ""),
                mask=obj.get("mask"),
                mesh=obj.get("mesh"),
                delta_theta=float(obj.get("delta_theta", 0.0)),
                delta_phi=float(obj.get("delta_phi", 0.0)),
            )
        except KeyError as exc:
            raise ManifestError(f"manifest row missing field {exc}") from exc


@dataclass
class DatasetManifest:
    """Ordered collection of SampleRecords with JSONL persistence."""

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def validate(self, delta_theta_max: float | None = None):
        for rec in self.records:
            rec.validate(delta_theta_max)

    def real_records(self):
        return [r for r in self.records if r.domain == REAL]

    def synthetic_records(self):
        return [r for r in self.records if r.domain == SYNTHETIC]

    def identities(self):
        seen = []
        known = set()
        for r in self.records:
            if r.identity not in known:
                known.add(r.identity)
                seen.append(r.identity)
        return seen

    def by_id(self) -> dict:
        return {r.record_id: r for r in self.records}

    @classmethod
    def load(cls, path, delta_theta_max: float | None = None) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"manifest not found: {path}")
        records = []
        for line in open(path, "r", encoding="utf-8"):
            if line.strip():
                records.append(SampleRecord.from_json(line))
        manifest = cls(records)
        manifest.validate(delta_theta_max)
        return manifest

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")

    def to_jsonl(self) -> str:
        return "".join(rec.to_json() + "\n" for rec in self.records)
