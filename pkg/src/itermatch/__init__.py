"""Iterative feature matching and relative pose estimation with adaptive
keypoint pooling, plus a synthetic two-view benchmark harness."""

from .attention import AttentionState, KeypointSet
from .driver import IterationTrace, PipelineConfig, pose_guided_match, run_pair, stop_check
from .epipolar import (CameraIntrinsics, CheiralityTieError, DegenerateConfigurationError,
                       EpipolarPose, InsufficientMatchesError, ScoredMatch,
                       decompose_essential, essential_from_fundamental, pose_error,
                       ransac_fundamental, sampson_distance, weighted_eight_point)
from .losses import (GroundTruth, combined_loss, epipolar_consistency_losses,
                     matching_loss, pose_loss, total_loss)
from .numerics import (MlpParams, WeightStore, init_random_weights, load_weights,
                       mlp_forward, save_weights)
from .pooling import adaptive_sample, attention_scores, pose_uncertainty, r50_sample
from .synthbench import (EvalReport, SceneParams, SyntheticScene, TIERS, auc_exact,
                         generate_scene, generate_repeated_texture_scene, match_metrics,
                         run_benchmark, synthetic_pipeline_config)
from .transport import MatchMatrix, extract_matches, pairwise_distance, sinkhorn

__version__ = "0.1.0"
