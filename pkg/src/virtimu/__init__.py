"""Virtual IMU data for human activity recognition.

Motion files (BVH or joint CSV) go through inverse kinematics and a sensor model
to become simulated accelerometer and gyroscope streams. Those streams, real
recordings and augmented copies are windowed and summarized with ECDF features.
A random forest is then cross-validated under several training-data configurations.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .augment import AugmentParams, augment_dataset
from .classifier import ForestModel, TrainParams, predict, train_forest
from .dataset import Dataset, SegmentMatrix, WindowSpec
from .evaluation import EvalReport, FoldSpec, macro_f1, run_experiment_matrix
from .features import EcdfSpec, ecdf_features, featurize_dataset
from .imu_sim import ImuTrace, SensorConfig, simulate_imu
from .kinematics import RotationTrack, angular_velocity, inverse_kinematics
from .motion_io import MotionSequence, Skeleton, parse_bvh, parse_joint_csv
from .provenance import Provenance

__all__ = [
    "AugmentParams", "Dataset", "EcdfSpec", "EvalReport", "FoldSpec", "ForestModel", "ImuTrace",
    "MotionSequence", "Provenance", "RotationTrack", "SegmentMatrix", "SensorConfig", "Skeleton",
    "TrainParams", "WindowSpec", "angular_velocity", "augment_dataset", "ecdf_features",
    "featurize_dataset", "inverse_kinematics", "macro_f1", "parse_bvh", "parse_joint_csv", "predict",
    "run_experiment_matrix", "simulate_imu", "train_forest",
]
