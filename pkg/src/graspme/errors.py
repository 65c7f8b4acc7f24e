"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes, so every error raised on purpose
derives from :class:`GraspMEError`.
"""


class GraspMEError(Exception):
    """Base class for all toolkit errors."""


class DegenerateGeometryError(GraspMEError, ValueError):
    pass


class PreconditionError(GraspMEError, ValueError):
    pass


class MeshFormatError(GraspMEError, ValueError):
    """Malformed or inconsistent Wavefront OBJ input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AnnotationError(GraspMEError, ValueError):
    """Invalid grasp-manifold annotation or keypoint list."""


class SchemaError(GraspMEError, ValueError):
    """A JSON document does not follow its schema.

    ``path`` is a dotted/indexed location such as ``annotations[3].bbox``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DanglingReferenceError(SchemaError):
    pass


class SceneError(GraspMEError):
    """Scene generation could not place any object."""
