"""Robot-centric 2.5D elevation mapping.

Point clouds are fused into a fixed-size layered grid with a gated
per-cell Kalman update, cleaned with ray casting, corrected for vertical
pose drift and post-processed for locomotion (inpainting, smoothing,
plane segmentation). An analytic scene simulator provides ground truth.
"""
from .grid import (
    CellIndex,
    ElevationMap,
    GridSpec,
    OutOfMap,
    add_time_variance,
    index_to_world,
    recenter,
    world_to_index,
)
from .sensing import (
    ExclusionParams,
    InvalidPose,
    PointCloud,
    RigidTransform,
    SensorNoiseParams,
    is_excluded,
    point_variance,
    transform_cloud,
)
from .drift import DriftEstimate, DriftParams, apply_height_offset, compute_drift_error
from .raycast import CleanupParams, RayCell, traverse_cells, update_upper_bound, visibility_cleanup
from .analysis import (
    ConvLayer,
    ConvNetSpec,
    InvalidModel,
    OverlapParams,
    TraversabilityParams,
    compute_normals,
    conv_filter_inference,
    overlap_clearance,
    traversability_geometric,
)
from .integration import (
    PHASES,
    Disposition,
    InvalidVariance,
    ScanStats,
    UpdateParams,
    integrate_scan,
    kalman_update_cell,
    precount_scan,
)
from .postprocess import (
    DegeneratePlane,
    FilterChainSpec,
    FilterStep,
    NothingToInpaint,
    PlanarRegion,
    PlaneSegParams,
    fit_plane,
    inpaint_min,
    segment_planes,
    smooth_chain,
)

__version__ = "0.1.0"
