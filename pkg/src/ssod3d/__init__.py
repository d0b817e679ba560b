"""Class-aware soft-target assignment and reliability weighting for semi-supervised 3D detection."""
from .analysis import ap_at_40, assignment_pr, loss_mass_report, subregion_classify
from .assignment import Assignment, Assignments, Category, assign_targets, match_max_iou
from .config import ClassConfig, ConfigError, ExperimentConfig, NoiseModel, load_config
from .detections import Detection, Detections
from .ema import ema_update
from .geometry import Box3D, Polygon2D, bev_footprint, convex_intersection, iou_3d, iou_bev, iou_matrix, nms_rotated
from .pseudo_labels import filter_pseudo_labels
from .reliability import SCHEMES, WeightingScheme, WeightRule, compute_weights, weighted_cls_loss
from .sampler import balanced_random_sample, topk_sample

__version__ = "0.1.0"
