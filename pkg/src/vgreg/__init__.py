"""Point cloud registration that combines visual and geometric correspondences
through a transformation-consistency filter."""

from .core import (
    CorrespondenceSet,
    PointCloud,
    Provenance,
    RigidTransform,
    procrustes_cost,
    voxel_downsample,
    weighted_procrustes,
)
from .errors import (
    DegenerateInput,
    EmptyInlierSet,
    EmptyInput,
    EmptyNeighborhood,
    InsufficientCorrespondences,
    InvalidArgument,
    NoConsensus,
    ParseError,
    RegistrationError,
    UnsupportedFormat,
)
from .features import NeighborIndex, compute_fpfh, estimate_normals, lowe_ratio_filter, match_features
from .filtering import ErrorModel, FilterConfig, FilterOutcome, SkipReason, run_filter
from .fitting import FittingConfig, fit_transform
from .metrics import PairEvaluation, chamfer_distance, evaluate_pair, rotation_error, summarize, translation_error
from .pipeline import PipelineConfig, register_correspondences, register_frames
from .ransac import RansacConfig, ransac_transform
from .rgbd import CameraIntrinsics, DepthImage, PixelMatch, backproject, lift_pixel_matches

__version__ = "0.1.0"
