from enum import Enum, IntEnum, StrEnum


class Axis(IntEnum):
    """
    Fixed axis convention for every grid in a run.

    X is lateral and increases toward the subject's anatomical left, Y is anterior-posterior,
    Z is longitudinal and increases toward the head.
    """

    X = 0
    Y = 1
    Z = 2


class Side(Enum):
    LEFT = "left"
    RIGHT = "right"


class SegmenterKind(Enum):
    EXTERNAL_MASKS = "external_masks"
    THRESHOLD_BASELINE = "threshold_baseline"


class Rating(StrEnum):
    """Quality-cost ratings; higher is worse for every one of them."""

    IMAGE_FUSION = "image_fusion"
    SEGMENTATION_FUSION = "segmentation_fusion"
    LOCATION = "location"
    SMOOTHNESS = "smoothness"
    SCRAP = "scrap"


# Neck-to-knee station geometry (stations 2 and 3)
STATION_DIMS = (224, 174, 44)
STATION_SPACING = (2.232, 2.232, 4.5)
DEFAULT_OVERLAP_SLICES = 18

# Network input contract
N_TRIM = 3
CLIP_FRACTION = 0.01
PAD_SHAPE = (224, 192)

LABEL_THRESHOLD = 0.5
MM3_PER_CM3 = 1000.0

# Empty segmentations get this location cost so they always rank worst
EMPTY_SEGMENTATION_COST = 1.0e6

STATION_INDICES = (2, 3)
