from .events import CLIP_DURATION, Event, EventList, read_events, read_weak, write_events, write_weak
from .postprocess import class_windows, decode, median_filter, median_filter_1d, weak_mask
from .psds import (
    MatchResult,
    OperatingPoint,
    PSDSParams,
    PSDSResult,
    default_thresholds,
    intersection_match,
    psds,
    psds_from_detections,
    psds_from_operating_points,
)
