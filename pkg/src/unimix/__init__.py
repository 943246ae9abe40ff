"""Adverse-weather LiDAR simulation, universal point-cloud mixing and two-stage
teacher-student domain adaptation for point-wise semantic segmentation."""
from .cloud import (
    CloudError,
    CylinderCoords,
    LabelArray,
    NormalizedAxis,
    PointCloud,
    concat,
    filter_by_mask,
    normalize_axis,
    to_cylinder,
)
from .config import MixConfig, RunConfig, WeatherConfig
from .domain import DomainDataset
from .metrics import ConfusionMatrix, accumulate, iou, miou
from .mixing import MixMask, intensity_masks, mix, mix_bidirectional, mix_pair, semantic_masks, spatial_masks
from .model import (
    FeatureSpec,
    ModelParams,
    dice_loss,
    ema_update,
    featurize,
    forward,
    gradient,
    init_params,
    pseudo_labels,
    sgd_step,
)
from .pipeline import StageReport, evaluate, run_pipeline, train_stage1, train_stage2, warmup
from .weather import (
    BridgeSample,
    PulseModel,
    WeatherParams,
    generate_bridge,
    received_power,
    simulate_fog,
    simulate_precipitation,
    wet_ground,
)

__version__ = "0.1.0"
