"""Single-Gaussian feature modeling with PCA whitening and component heatmaps.

The package fits one multivariate Gaussian to pixel-wise feature vectors
pooled across a stack of feature maps, scores pixels by squared Mahalanobis
distance computed as the squared norm of PCA-whitened coordinates, evaluates
localization quality (AUROC / AUPR / AUPRO), and renders per-component
heatmap pages.
"""

from .config import PipelineConfig, load_config
from .core_stats import (
    MvgModel,
    ScoreMap,
    WhitenedStack,
    build_model,
    fit_covariance,
    fit_mean,
    flatten,
    mahalanobis_sq_direct,
    score_map,
    unflatten,
    whiten,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateScaleError,
    FormatError,
    MetricUndefinedError,
    MvgWhitenError,
    NumericError,
    ShapeError,
)
from .metrics import MetricsReport, aupr, aupro, auroc, evaluate, rank_components
from .tensor_io import (
    DatasetManifest,
    FeatureStack,
    PixelLabels,
    load_manifest,
    read_array,
    read_masks,
    read_tensor,
    write_array,
    write_tensor,
)
from .viz import (
    ColorScale,
    RenderSpec,
    alpha_blend,
    apply_colormap,
    color_scale,
    render_tile,
    upsample_bilinear,
)

__version__ = "0.1.0"

__all__ = [
    "ColorScale",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "DegenerateScaleError",
    "FeatureStack",
    "FormatError",
    "MetricUndefinedError",
    "MetricsReport",
    "MvgModel",
    "MvgWhitenError",
    "NumericError",
    "PipelineConfig",
    "PixelLabels",
    "RenderSpec",
    "ScoreMap",
    "ShapeError",
    "WhitenedStack",
    "alpha_blend",
    "apply_colormap",
    "aupr",
    "aupro",
    "auroc",
    "build_model",
    "color_scale",
    "evaluate",
    "fit_covariance",
    "fit_mean",
    "flatten",
    "load_config",
    "load_manifest",
    "mahalanobis_sq_direct",
    "rank_components",
    "read_array",
    "read_masks",
    "read_tensor",
    "render_tile",
    "score_map",
    "unflatten",
    "upsample_bilinear",
    "whiten",
    "write_array",
    "write_tensor",
]
