"""Semantic part detection for rigid objects by matching feature grids
against renderings of an annotated 3D proxy model."""

from .detection import Detection, detect
from .evaluation import EvalReport, average_precision, evaluate, iou, occlude_grid
from .geometry import (
    BehindCameraError,
    Mesh3D,
    ProjectedPart,
    Viewpoint,
    is_visible,
    load_obj,
    normalize_mesh,
    project_vertex,
    render_part_projections,
    save_obj,
    visible_vertices,
)
from .grid import (
    FeatureGrid,
    GridMeta,
    PartAnnotation,
    cell_center,
    grids_equal,
    normalize,
    read_annotations,
    read_grid,
    write_annotations,
    write_grid,
)
from .matching import (
    MatchConfig,
    MatchPair,
    MatchSet,
    candidate_pairs,
    consistency_graph,
    match_images,
    matching_loss,
    max_clique,
)
from .part_model import (
    ConsistencyConfig,
    PartInstance,
    PartModel3D,
    TrainingSample,
    back_project,
    cluster_parts,
    consistency_loss,
    overall_loss,
    read_model,
    train,
    write_model,
)
from .synthetic import (
    SceneReference,
    SyntheticScene,
    make_proxy_mesh,
    make_scene,
    synth_dataset,
    synth_feature_grid,
)
from .transfer import NoSupportError, TransferredAnnotation, transfer_box, transfer_point
from .viewpoint import (
    NoViewpointError,
    ViewpointEnergyConfig,
    predict_viewpoint,
    viewpoint_energy,
)

__version__ = "0.1.0"
