"""
Exception hierarchy for the contouring toolkit

Every error raised on purpose by the library derives from PipelineError so
batch commands can isolate per-case failures without swallowing bugs.
"""
from typing import Iterable, Optional, Sequence


class PipelineError(Exception):
    """Base class for all expected pipeline failures"""


# NIfTI codec

class NiftiFormatError(PipelineError, ValueError):
    """Header is not a single-file NIfTI-1 header"""


class NiftiUnsupportedError(PipelineError, ValueError):
    """Header is valid but uses a feature this codec does not read"""


class NiftiTruncationError(PipelineError, ValueError):
    """Byte stream ends before the declared header or data extent"""


class NiftiCapacityError(PipelineError, ValueError):
    """Volume does not fit the 16-bit dimension fields of the header"""


# Geometry

class GeometryError(PipelineError, ValueError):
    """Two grids differ in shape, or a geometry is malformed"""

    def __init__(self, message: str, axis: Optional[str] = None):
        super().__init__(message)
        self.axis = axis


class RegistrationError(PipelineError, ValueError):
    """Two grids share a shape but their physical placement deviates"""

    def __init__(self, message: str, axes: Sequence[str] = ()):
        super().__init__(message)
        self.axes = tuple(axes)


class VolumeKindError(PipelineError, ValueError):
    """Operation received a label volume where intensities were expected, or vice versa"""


# Processing

class DegenerateStatisticsError(PipelineError, ValueError):
    """Volume has (near) zero variance and cannot be standardized"""


class EmptyMaskError(PipelineError, ValueError):
    """Operation needs at least one foreground voxel"""


class BoundsError(PipelineError, IndexError):
    """Bounding box does not fit the volume"""


class RecordMismatchError(PipelineError, ValueError):
    """Cropped volume does not match its crop record"""


class UnknownLabelError(PipelineError, ValueError):
    """Volume holds label ids that the merge map does not know"""

    def __init__(self, labels: Iterable[int]):
        self.labels = tuple(sorted(int(label) for label in labels))
        super().__init__(f"Unknown label ids: {list(self.labels)}")


class LabelSchemaError(PipelineError, ValueError):
    """Label schema file violates the merge map invariants"""


class ParameterError(PipelineError, ValueError):
    """Numeric parameter outside its admissible range"""


class EmptyInputError(PipelineError, ValueError):
    """Aggregation received no scores"""


class PhantomSpecError(PipelineError, ValueError):
    """Phantom description violates its invariants"""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class RuleConflictError(PipelineError, ValueError):
    """Threshold rules have overlapping HU intervals"""


class ConfigError(PipelineError, ValueError):
    """Pipeline configuration is invalid"""


class CaseSetMismatchError(PipelineError, ValueError):
    """Prediction and reference directories hold different case sets"""

    def __init__(self, only_pred: Iterable[str], only_ref: Iterable[str]):
        self.only_pred = sorted(only_pred)
        self.only_ref = sorted(only_ref)
        super().__init__(
            f"Case sets differ: only in predictions {self.only_pred}, "
            f"only in references {self.only_ref}"
        )
