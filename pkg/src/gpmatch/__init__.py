"""Dense geometric matching as GP regression over embedded coordinates."""

from .embedding import (
    CosSqBasis,
    FourierBasis,
    IdentityBasis,
    SEBasis,
    embed,
    empirical_kernel,
    metamer_separation,
    sample_basis,
)
from .geometry import (
    CameraPose,
    Homography,
    NormalizedGrid,
    WarpField,
    apply_homography,
    clip_to_grid,
    homography_to_warp,
    make_grid,
)
from .kernel import GramMatrix, KernelSpec, eval_kernel, gram, regularized_solve
from .pipeline import MatchResult, PipelineConfig, match_feature_maps, match_pair
from .regress import (
    GPPosterior,
    GPRegressor,
    KernelSmoother,
    NearestNeighbour,
    RegressorOutput,
    SupportSet,
    attach_variance_neighbourhood,
    gp_posterior,
    kernel_smoother,
    nearest_neighbour,
)

__version__ = "0.1.0"
