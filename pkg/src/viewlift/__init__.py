"""viewlift: geometry-consistent novel-view training data for cross-view re-id.

The toolkit takes single-view textured meshes plus foreground masks, recovers
the virtual camera pose that re-renders each mesh into alignment with its
source photo, perturbs that pose to synthesize novel views, composites them
onto real background plates, and plans curriculum-scheduled, identity-balanced
training epochs over the mixed real/synthetic corpus.  A retrieval evaluation
engine (mAP / Rank-1 / CMC) and reference loss computations round out the
training-data plane.
"""

__version__ = "0.1.0"

from viewlift.assets import DatasetManifest, SampleRecord, TexturedMesh
from viewlift.calibration import CalibrationConfig, CalibrationResult, calibrate, mask_iou
from viewlift.renderer import OrbitCamera, RenderedView, pose_from_orbit, render, silhouette

__all__ = [
    "__version__",
    "CalibrationConfig",
    "CalibrationResult",
    "DatasetManifest",
    "OrbitCamera",
    "RenderedView",
    "SampleRecord",
    "TexturedMesh",
    "calibrate",
    "mask_iou",
    "pose_from_orbit",
    "render",
    "silhouette",
]
