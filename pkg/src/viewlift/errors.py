"""Error taxonomy shared by the library, the CLI, and the binding layer.

The class name doubles as the machine-readable error category: the CLI prints
``error: <category>: <message>`` and external bindings re-raise using the same
string, so there is a single source of truth for failure kinds.
"""


class PipelineError(Exception):
    """Base class for all toolkit errors."""

    @property
    def category(self) -> str:
        return type(self).__name__


class ValidationError(PipelineError):
    """Bad inputs or configuration (CLI exit code 1)."""


class AssetError(ValidationError):
    """A file-based input failed to load or violates its invariants."""


class MeshFormatError(AssetError):
    """OBJ/MTL content outside the supported triangle subset."""


class NonTriangularFaceError(MeshFormatError):
    pass


class FaceIndexError(MeshFormatError):
    """Face references a vertex or UV index outside the declared range."""


class MissingTextureError(MeshFormatError):
    """No material/texture reachable from the OBJ file."""


class DegenerateGeometryError(AssetError):
    """Mesh has zero spatial extent and cannot be normalized."""


class MaskError(AssetError):
    """Mask image unreadable, empty, or dimensionally inconsistent."""


class ManifestError(AssetError):
    """Dataset manifest row missing fields or violating invariants."""


class EmptyViewError(PipelineError):
    """A synthesized view rendered to an empty silhouette."""
