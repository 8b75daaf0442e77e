"""Cost-volume-free multi-view stereo via iterative binary traversal of inverse depth."""

from .cloud import FusionParams, PointCloud, consistency_check, fuse_cloud, read_ply, write_ply
from .decision import (ConstantOracle, GroundTruthOracle, NeuralOracle, SoftMask, ZnccOracle,
                       ground_truth_oracle, photoconsistency_oracle)
from .engine import (EngineConfig, HypothesisMap, Trace, init_hypothesis, run, step_size,
                     update_hypothesis)
from .errors import InvariantError
from .fusion import (EntropyWeightOracle, UniformWeightOracle, entropy, fuse_hypotheses,
                     heuristic_weight, naive_fuse, weight_from_logit)
from .geometry import (Camera, GeometryError, InverseDepthInterval, PixelCoord, back_project,
                       bilinear_sample, epipolar_unit_step, make_interval, project)
from .metrics import (CloudMetrics, LossWeights, bce, cloud_accuracy_completeness,
                      depth_error_stats, gt_mask, masked_bce_loss, multiscale_loss)
from .sampler import EpipolarKernel, SampleGrid, build_sample_grid, gather
from .scenegen import SceneBundle, SceneSpec, View, occlusion_mask, render

__version__ = "0.1.0"
