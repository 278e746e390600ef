import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from meshes import blob_mesh, box_mesh  # noqa: E402

from viewlift import assets  # noqa: E402
from viewlift.renderer import OrbitCamera, render_silhouette  # noqa: E402


@pytest.fixture
def cube_obj(tmp_path):
    """Unit-cube OBJ fixture on disk: 8 vertices, 12 triangles, checkerboard."""
    path = tmp_path / "cube.obj"
    assets.save_mesh(box_mesh(), path)
    return path


@pytest.fixture
def pipeline_fixture(tmp_path):
    """Self-consistent 3-row dataset: blob meshes, self-rendered masks,
    noise source images, and a small background pool."""
    return build_pipeline_fixture(tmp_path, rows=3, size=96)


def build_pipeline_fixture(root: Path, rows=3, size=96, seed=7):
    rng = np.random.default_rng(seed)
    data = root / "data"
    (data / "bg").mkdir(parents=True)
    records = []
    for i in range(rows):
        mesh = blob_mesh(seed=200 + i, subdiv=1)
        mesh_path = data / f"mesh_{i}.obj"
        assets.save_mesh(mesh, mesh_path)
        cam = OrbitCamera(azimuth_deg=float(rng.uniform(0, 360)),
                          elevation_deg=float(rng.uniform(0, 40)),
                          radius=2.0, width=size, height=size)
        mask = render_silhouette(mesh, cam)
        assets.save_image(mask, data / f"mask_{i}.png")
        image = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
        assets.save_image(image, data / f"img_{i}.png")
        records.append(assets.SampleRecord(
            identity=f"id{i % 2}", image=f"img_{i}.png", mask=f"mask_{i}.png",
            mesh=f"mesh_{i}.obj", domain=assets.REAL, view="ground"))
    for b in range(2):
        bg = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
        assets.save_image(bg, data / "bg" / f"bg_{b}.png")
    manifest_path = data / "manifest.jsonl"
    assets.DatasetManifest(records).save(manifest_path)

    config_path = root / "pipeline.ini"
    config_path.write_text(
        "[paths]\n"
        f"manifest = {manifest_path}\n"
        f"background_dir = {data / 'bg'}\n"
        f"output_dir = {root / 'out'}\n"
        "[render]\n"
        f"width = {size}\n"
        f"height = {size}\n"
        "[calibration]\n"
        "max_iterations = 60\n"
        "[perturbation]\n"
        "views_per_source = 2\n"
        "direction = g2a\n"
        "[sampler]\n"
        "identities_per_batch = 2\n"
        "instances_per_identity = 4\n"
        "real_per_identity = 2\n"
        "synthetic_per_identity = 2\n"
        "[pipeline]\n"
        "seed = 11\n",
        encoding="utf-8")
    return {"root": root, "data": data, "manifest": manifest_path,
            "config": config_path, "out": root / "out", "size": size}
