"""Optical-flow surface roughness, texton appearance learning, and
landing-spot selection on synthetic nadir scenes."""

from .appearance import (
    PatchConfig,
    TextonDictionary,
    extract_histogram,
    nearest_texton,
    sample_patches,
    train_dictionary,
)
from .errors import (
    ConfigError,
    DegenerateDataError,
    DegenerateGeometryError,
    NoConsensusError,
    NoSafeRegionError,
    UndefinedMetricError,
)
from .flowfit import (
    FlowFitResult,
    PlanarFlowParams,
    RansacConfig,
    ThresholdQuery,
    default_ransac_config,
    derotate,
    evaluate_params,
    ls_fit,
    ransac_fit,
    roughness,
    roughness_threshold,
)
from .flowsim import (
    BoxObstacle,
    CameraIntrinsics,
    EgoState,
    FlowObservation,
    Material,
    Scene,
    ScenePlane,
    observe_flow,
    render_view,
    scan_trajectory,
)
from .harness import (
    FoldPlan,
    PipelineConfig,
    RocCurve,
    benchmark_pipeline,
    build_dataset,
    classification_error,
    derive_seed,
    make_fold_plan,
    roc,
    run_kfold,
    tp_fp_rates,
)
from .landing import (
    GridDecision,
    RoughnessMap,
    SafetyFrame,
    ScanDecision,
    classify_safety,
    grid_select,
    project_distance,
    segment,
    select_grid_region,
    select_scan_waypoint,
)
from .learn import (
    C_CLEAR,
    C_OBSTACLE,
    NaiveBayesModel,
    RegressionModel,
    entropy,
    fit_naive_bayes,
    fit_regression,
    label,
    nrmse,
    posterior,
    predict,
)

__version__ = "0.1.0"
