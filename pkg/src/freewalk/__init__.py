"""Green-function calculus and ratio-limit boundaries on free products.

The group is a free product of lattices Z^{d_1} * ... * Z^{d_k}; the
walk is an adapted measure, a weighted mix of one symmetric step measure
per factor.  From the factor Green functions alone the package assembles
the product Green function, locates the spectral radius, classifies the
walk's degeneracy, and studies the ratio-limit kernel and its boundary:
finite-step ratios, iterated-sum ratios, Martin kernels along rays,
triple-point factorization constants, local limit exponents, and the
kernel's radical.  Everything numeric is cross-checked through at least
two independent routes.
"""

from .groups import (
    IDENTITY,
    BudgetExceededError,
    Element,
    FactorSpec,
    FreeProductSpec,
    ball,
    common_prefix_length,
    enumerate_ball,
    format_element,
    generators,
    inverse,
    multiply,
    normalize,
    parse,
    prefix,
    prefix_points,
    random_element,
    relative_length,
    word_length,
)
from .measures import (
    AdaptedMeasure,
    ConvolutionTable,
    LatticeMeasure,
    lazy_spectral_radius,
)
from .factor_green import (
    DivergenceError,
    FactorGreenEvaluator,
    TorusQuadrature,
)
from .product_green import (
    GerlEstimate,
    GreenTrie,
    PhiPsiSystem,
    SpectralReport,
    TuneReport,
    ZetaCurve,
    direct_series_green,
    gerl_R_estimate,
    homogeneous_dimension,
    tune_alpha,
)
from .boundary import (
    KernelProfile,
    LltFit,
    MetricConfig,
    RadicalScan,
    RaySpec,
    RegimeError,
    boundary_metric,
    h_finite_n,
    h_many_via_sums,
    h_via_sums,
    harmonicity_residual,
    hk_ratio_along_ray,
    llt_fit,
    radical_scan,
)
from .ancona import (
    AnconaReport,
    DecayFit,
    TripleSample,
    cross_ratio,
    one_room_scan,
    perturbed_triple_sampler,
    prefix_triple_sampler,
    shared_prefix_pair_sampler,
    strong_ancona_fit,
    weak_ancona_scan,
)
from .extrapolate import (
    geometric_decay_fit,
    power_law_fit,
    ratio_limit_last3,
    richardson_limit,
)
from .experiments import (
    ARTIFACT_VERSION,
    CacheError,
    ConfigError,
    ExperimentConfig,
    InconsistencyError,
    RunManifest,
    canned_config,
    experiment_kinds,
    list_canned,
    parse_config,
    parse_config_dict,
    run,
)

__version__ = ARTIFACT_VERSION

__all__ = [
    "ARTIFACT_VERSION",
    "AdaptedMeasure",
    "AnconaReport",
    "BudgetExceededError",
    "CacheError",
    "ConfigError",
    "ConvolutionTable",
    "DecayFit",
    "DivergenceError",
    "Element",
    "ExperimentConfig",
    "FactorGreenEvaluator",
    "FactorSpec",
    "FreeProductSpec",
    "GerlEstimate",
    "GreenTrie",
    "IDENTITY",
    "InconsistencyError",
    "KernelProfile",
    "LatticeMeasure",
    "LltFit",
    "MetricConfig",
    "PhiPsiSystem",
    "RadicalScan",
    "RaySpec",
    "RegimeError",
    "RunManifest",
    "SpectralReport",
    "TorusQuadrature",
    "TripleSample",
    "TuneReport",
    "ZetaCurve",
    "__version__",
    "ball",
    "boundary_metric",
    "canned_config",
    "common_prefix_length",
    "cross_ratio",
    "direct_series_green",
    "enumerate_ball",
    "experiment_kinds",
    "format_element",
    "generators",
    "geometric_decay_fit",
    "gerl_R_estimate",
    "h_finite_n",
    "h_many_via_sums",
    "h_via_sums",
    "harmonicity_residual",
    "hk_ratio_along_ray",
    "homogeneous_dimension",
    "inverse",
    "lazy_spectral_radius",
    "list_canned",
    "llt_fit",
    "multiply",
    "normalize",
    "one_room_scan",
    "parse",
    "parse_config",
    "parse_config_dict",
    "perturbed_triple_sampler",
    "power_law_fit",
    "prefix",
    "prefix_points",
    "prefix_triple_sampler",
    "radical_scan",
    "random_element",
    "ratio_limit_last3",
    "relative_length",
    "richardson_limit",
    "run",
    "shared_prefix_pair_sampler",
    "strong_ancona_fit",
    "tune_alpha",
    "weak_ancona_scan",
    "word_length",
]
