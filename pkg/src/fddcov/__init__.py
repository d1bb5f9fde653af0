"""Downlink covariance estimation from uplink measurements for FDD systems
with dual-polarized planar arrays and 3D propagation."""

from .geometry import (
    AngularGrid,
    Direction,
    ElementPattern,
    SteeringResponse,
    UePatternConfig,
    UpaGeometry,
    array_response,
    bs_element_field,
    element_positions,
    make_grid,
    ue_response,
)
from .channel import (
    ClusterParams,
    ScenarioDistribution,
    ScenarioDraw,
    SubpathRealization,
    WidebandConfig,
    aps_from_scenario,
    draw_scenario,
    draw_subpaths,
    mean_inverse_xpr,
    mean_inverse_xpr_mc,
    synthesize_channel,
    synthesize_ofdm_channel,
)
from .covariance import (
    PolarizedAps,
    StructureViolation,
    covariance_from_aps,
    full_devectorize,
    full_vectorize,
    psd_projection,
    read_covariance,
    sample_covariance,
    structured_devectorize,
    structured_length,
    structured_vectorize,
    upa_average,
    write_covariance_binary,
    write_covariance_text,
)
from .conversion import (
    ConversionOperator,
    EapmParams,
    EapmResult,
    KernelOperator,
    algorithm1,
    algorithm2_eapm,
    build_conversion_operator,
    build_kernel,
    convert,
    load_operator,
    project_onto_cone,
    project_onto_variety,
    save_operator,
)
from .metrics import SquaredErrorRecord, grassmann_se, normalized_frobenius_se
from .simharness import CampaignConfig, ConfigError, parse_config, run_campaign, run_trial

__version__ = "0.1.0"
