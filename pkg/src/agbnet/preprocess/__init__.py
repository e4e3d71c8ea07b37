from .bands import (
    ConfigurationError,
    calibrate_palsar,
    db_ratio,
    focal_mean,
    latlon_planes,
    resample_bicubic,
    spectral_index,
    temporal_ndvi_stats,
)
from .dataset import (
    PATCH_SIZE,
    ROSTER,
    PatchSample,
    StandardizationStats,
    destandardize_labels,
    load_patches,
    patchify,
    save_patches,
    stack_channels,
    standardize_apply,
    standardize_fit,
    standardize_invert,
    standardize_labels,
)
from .footprints import (
    FilterReport,
    FootprintGeometryError,
    agb_from_rh80,
    filter_footprints,
    footprint_mean,
    footprint_weights,
    geolocation_filter,
    rasterize_footprints,
    rh80_from_agb,
)
from .pipeline import SOURCES, build_feature_stack, build_labels
