"""Normalized latent measure factor models for grouped data.

Groups share a pool of latent random measures; each group's distribution is a
normalized nonnegative combination of them.  The package covers the full
workflow: prior analytics, Gibbs sampling with adaptive factor truncation,
determinant-one post-processing transforms, label alignment, and posterior
summaries, plus a CLI that chains the stages reproducibly.
"""

from .align import (
    NormalizedMeasure,
    PermutationMatrix,
    Template,
    align_chain,
    align_draw,
    l2_dissimilarity,
    ls_wasserstein_dissimilarity,
    select_template,
    transformed_measures,
)
from .gibbs import (
    CarSettings,
    ChainRecord,
    ChainSettings,
    GibbsState,
    GroupedData,
    MgpSettings,
    log_joint,
    run_chain,
)
from .measures import (
    Atom,
    DensityGrid,
    TruncatedCoRM,
    atom_inner_matrix,
    evaluate_on_grid,
    gaussian_l2_inner,
    gram_matrix,
    group_weights,
    mixture_density,
)
from .priors import CarPrior, MgpHyper, NigBase, nig_posterior, sample_gig
from .slopt import (
    AlmState,
    RattleConfig,
    SlPoint,
    TransformResult,
    alm_solve,
    augmented_loss,
    interp_loss,
    project_sl,
    rattle_minimize,
    sl_expm,
    transform_chain,
)
from .summaries import (
    PosteriorSummary,
    aligned_means,
    cluster_loadings,
    convex_scores,
    discretize_density,
    importance_scores,
    kl_to_truth,
    residual_densities,
    waic,
)
from .synthdata import generate_dirichlet_mix, generate_spatial_lattice

__version__ = "0.1.0"

__all__ = [
    "Atom",
    "TruncatedCoRM",
    "DensityGrid",
    "gaussian_l2_inner",
    "atom_inner_matrix",
    "mixture_density",
    "evaluate_on_grid",
    "group_weights",
    "gram_matrix",
    "NigBase",
    "nig_posterior",
    "MgpHyper",
    "CarPrior",
    "sample_gig",
    "GroupedData",
    "MgpSettings",
    "CarSettings",
    "ChainSettings",
    "ChainRecord",
    "GibbsState",
    "run_chain",
    "log_joint",
    "SlPoint",
    "RattleConfig",
    "AlmState",
    "TransformResult",
    "project_sl",
    "sl_expm",
    "interp_loss",
    "augmented_loss",
    "rattle_minimize",
    "alm_solve",
    "transform_chain",
    "NormalizedMeasure",
    "Template",
    "PermutationMatrix",
    "transformed_measures",
    "select_template",
    "l2_dissimilarity",
    "ls_wasserstein_dissimilarity",
    "align_draw",
    "align_chain",
    "PosteriorSummary",
    "aligned_means",
    "convex_scores",
    "importance_scores",
    "residual_densities",
    "discretize_density",
    "waic",
    "kl_to_truth",
    "cluster_loadings",
    "generate_dirichlet_mix",
    "generate_spatial_lattice",
    "__version__",
]
