"""Joint demosaicking and fisheye rectification via graph Laplacian regularization."""

from .baselines import BaselineKind, demosaic_bilinear, demosaic_hql, rectify_bilinear, run_baseline
from .camera import (
    Calibration,
    ConfigError,
    MappingTable,
    build_mapping_table,
    identity_calibration,
    load_calibration,
    make_synthetic_calibration,
    map_pixel,
    pair_endpoints,
    save_calibration,
)
from .graph import (
    BayerPairField,
    ChannelCorrelation,
    GradientObservation,
    PatchGraph,
    build_laplacian,
    collect_observations,
    compute_correlation,
    edge_weight,
    mle_gradient,
    rebuild_from_signal,
)
from .imgcore import (
    BayerImage,
    CFALayout,
    NoiseSpec,
    PlanarImage,
    add_noise,
    mosaic,
    read_image,
    read_plane,
    write_image,
    write_plane,
)
from .interp import InterpOperator, apply_H, build_H, gather_window
from .metrics import MetricReport, psnr, ssim
from .pipeline import (
    PipelineConfig,
    PRESETS,
    ReconstructionResult,
    aggregate,
    reconstruct,
    tile,
)
from .scenes import SceneSpec, make_case, render_scene, scene_function
from .solver import GlrProblem, SolveResult, objective, solve

__version__ = "0.1.0"
