"""Component-based topology optimization and labeled dataset generation."""

from .geometry import (
    ComponentGeom,
    ComponentPose,
    GeometryError,
    Grid,
    GroundStructure,
    TdfParams,
    derive_pose,
    tdf_component,
    tdf_exact_max,
    tdf_structure,
)
from .fea import (
    AnalysisResult,
    FeaError,
    FeaModel,
    HeavisideParams,
    analyze_design,
    assemble_and_solve,
    binarize_structure,
    element_density,
    heaviside,
    reanalyze_image,
    volume_fraction,
)
from .sensitivity import (
    GradientVector,
    dks_weight,
    dphi_dparam,
    finite_difference_gradient,
    full_gradient,
)
from .optimizer import OptimizationConfig, OptimizationHistory, run_optimization, update_design
from .strategies import BaseCellSpec, strategy1, strategy2, strategy3
from .metrics import (
    CANTILEVER_BINNING,
    LBEAM_BINNING,
    ComplexityBinning,
    TopologySummary,
    betti0,
    complexity_level,
    count_holes,
    euler_number,
    genus,
    m_nd,
)
from .problems import ProblemSpec, attach_ground, cantilever, l_beam, problem_from_config
from .dataset import (
    DatasetManifest,
    GenerationPlan,
    generate_samples,
    inverse_resize,
    load_manifest,
    resize_to_square,
    summarize,
)

__version__ = "0.1.0"
