"""Trajectory editing, residual data generation and failure detection for
interactive imitation learning on contact-rich insertion."""

from .alignment import AlignmentResult, AlignmentWeights, nearest_point
from .detector import CalibrationError, DetectorConfig, LabeledEpisode, Metric, calibrate, detect, evaluate
from .editor import EditConfig, EditResult, EditWeights, assemble_corrected, optimize_segment
from .geometry import Pose, Trajectory, Wrench, resample, slerp
from .residuals import Region, Residual, ResidualSample, generate_samples

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult", "AlignmentWeights", "nearest_point",
    "CalibrationError", "DetectorConfig", "LabeledEpisode", "Metric", "calibrate", "detect", "evaluate",
    "EditConfig", "EditResult", "EditWeights", "assemble_corrected", "optimize_segment",
    "Pose", "Trajectory", "Wrench", "resample", "slerp",
    "Region", "Residual", "ResidualSample", "generate_samples",
]
