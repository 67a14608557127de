class VolumetryError(Exception):
    """Base exception for all volumetry pipeline errors."""


class GeometryError(VolumetryError):
    """Raised when a grid, index or resampling target is geometrically invalid."""

    def __init__(self, message: str, axis: int | None = None):
        if axis is not None:
            message = f"{message} (axis {'xyz'[axis]})"
        super().__init__(message)
        self.axis = axis


class EmptyMaskError(VolumetryError):
    """Raised when an operation needs at least one labelled voxel and gets none."""

    def __init__(self, what: str = "mask"):
        super().__init__(f"empty mask: {what} contains no labelled voxels")
        self.what = what


class StationOverlapError(VolumetryError):
    """Raised when two stations neither overlap nor abut along the longitudinal axis."""

    def __init__(self, gap_mm: float, spacing_mm: float):
        super().__init__(f"stations do not overlap (gap {gap_mm:.3f} mm, slice spacing {spacing_mm:.3f} mm)")
        self.gap_mm = gap_mm
        self.spacing_mm = spacing_mm


class VolumeFormatError(VolumetryError):
    """Raised when a volume file is unreadable, truncated or outside the supported format subset."""

    def __init__(self, path: str, details: str):
        super().__init__(f"Cannot read volume '{path}': {details}")
        self.path = path
        self.details = details


class MaskNotFound(VolumetryError):
    """Raised when the external mask for a station does not exist."""

    def __init__(self, subject_id: str, station: int, path: str):
        super().__init__(f"No mask for subject '{subject_id}' station {station} at {path}")
        self.subject_id = subject_id
        self.station = station
        self.path = path


class MaskShapeMismatch(VolumetryError):
    """Raised when an external mask does not match the station it labels."""

    def __init__(self, expected: tuple[int, ...], actual: tuple[int, ...]):
        super().__init__(f"Mask shape {actual} does not match station shape {expected}")
        self.expected = expected
        self.actual = actual


class PhantomSpecError(VolumetryError):
    """Raised for phantom specifications that cannot be rendered."""


class ManifestError(VolumetryError):
    """Raised when a cohort manifest is malformed or references missing files."""


class ConfigError(VolumetryError):
    """Raised when the pipeline configuration file is invalid."""


class StageError(VolumetryError):
    """
    Raised by the subject runner when one pipeline stage fails.
    Carries the stage tag so the cohort run can emit a structured failure row.
    """

    def __init__(self, subject_id: str, stage: str, original_error: Exception):
        super().__init__(f"Subject '{subject_id}' failed at stage '{stage}': {original_error}")
        self.subject_id = subject_id
        self.stage = stage
        self.original_error = original_error
