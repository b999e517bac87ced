"""Hierarchy-flow image-to-image translation: invertible hierarchical coupling
layers with AdaIN style injection, perceptual losses, training, and metrics."""

from .config import BlockSpec, ModelConfig, make_config, mini_config, variant_config
from .errors import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    HierarchyFlowError,
    NumericalError,
)
from .flow import (
    AffineCache,
    HierarchyBlock,
    HierarchyFlow,
    adain,
    coupling_forward,
    coupling_reverse,
    normalize_channels,
    recover_source,
    spatial_stats,
    squeeze,
    unsqueeze,
)
from .nets import AffineNet, StyleNet, build_model, init_params, param_count_breakdown
from .perceptual import (
    FeatureExtractor,
    FeatureTaps,
    LossConfig,
    aligned_style_loss,
    aligned_style_loss_from_taps,
    content_loss,
    content_loss_from_taps,
    total_loss,
    vanilla_style_loss_from_taps,
)

__version__ = "0.1.0"
