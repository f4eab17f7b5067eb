"""Parallax-tolerant two-image stitching via multi-homography warping."""

from .config import RunConfig, build_config
from .errors import (
    CanvasOverflow,
    DecodeError,
    DegenerateConfiguration,
    DimensionMismatch,
    EmptyOverlap,
    EmptyRegion,
    EmptyResult,
    InvalidSpec,
    NoModelFound,
    OutOfBounds,
    PointAtInfinity,
    SingularMap,
    SingularUpdate,
    StitchError,
)
from .geometry import (
    FundamentalMatrix,
    Homography,
    MatchSet,
    Similarity,
    estimate_fundamental,
    estimate_homography_dlt,
    estimate_similarity,
    fundamental_inlier_filter,
    homography_point_jacobian,
    refine_homography_lm,
    robust_fundamental,
    sampson_distance,
    symmetric_transfer_error,
)
from .image import Image, sample_bilinear
from .labeling import (
    AnchorSet,
    NonOverlapMesh,
    OverlapLabeling,
    build_nonoverlap_mesh,
    global_homography,
    label_overlap_contents,
    photometric_error,
    sample_anchors,
    select_similarity,
)
from .metrics import MetricReport, metric_report, psnr_overlap, ssim_overlap
from .multifit import (
    EnergyBreakdown,
    EnergyParams,
    ModelSet,
    NeighborGraph,
    build_neighborhood,
    energy,
    expand_labels,
    fit,
    init_models_iterative_ransac,
)
from .segmentation import (
    ContentPartition,
    LabelMap,
    OverlapMask,
    assign_points_to_contents,
    compute_overlap,
    load_label_map,
    normalize_partition,
)
from .synthscene import (
    GroundTruth,
    PlaneSpec,
    SceneSpec,
    generate,
    interleaved_scene,
    occlusion_scene,
    plane_homography,
    rotation_matrix,
    three_plane_scene,
    two_plane_scene,
)
from .warping import (
    Canvas,
    ErrorBuffer,
    StitchArtifacts,
    WarpReport,
    backward_render,
    blend_linear,
    compute_canvas,
    forward_claim,
    place_reference,
    stitch,
    stitch_pipeline,
)

__version__ = "0.1.0"
