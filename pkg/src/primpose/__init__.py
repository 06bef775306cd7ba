"""Primitive-based 6D object pose machinery: geometry, the rotational
primitive, software rendering, loss kernels with gradient checks, PnP,
translation recovery, evaluation metrics, synthetic datasets and an oracle
end-to-end pipeline."""

from .dataset import Dataset, DatasetSample, GenConfig, generate_dataset, load_dataset
from .exceptions import (BehindCameraError, ConfigError, DatasetParseError, DegenerateInputError,
                         EmptyObjectError, InvalidDepthError, InvalidInputError, NoConsensusError,
                         NoSolutionError, NumericalError, PrimPoseError)
from .geometry import BoundingBox, CameraIntrinsics, Pose, rotation_geodesic_deg
from .localize import detect_axis_tips, estimate_center, refine_translation_fixed_rotation
from .mesh import MeshModel, cube_mesh, load_obj, save_obj
from .metrics import MetricReport, add_metric, adds_metric, evaluate_poses, projection2d_error
from .pipeline import NoiseModel, PnPEstimator, PrimitivePoseEstimator, estimate_sample
from .pnp import PnPResult, refine_pnp_lm, solve_pnp_dlt, solve_pnp_ransac
from .primitive import PrimitiveSpec, primitive_corners_3d, project_keypoints
from .render import RenderOutput, render_mesh, render_primitive

__version__ = "0.1.0"
