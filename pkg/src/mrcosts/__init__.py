"""Multi-resolution coherent spatiotemporal scale separation.

Fits constrained optimized-DMD models over sliding windows at multiple
window lengths, clusters the fitted eigenvalues into frequency bands locally
and globally, and reconstructs each band's contribution to the field.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .archive import load_model, save_model
from .clustering import (
    ClusterResult,
    OmegaFeatures,
    SweepResult,
    inverse_transform,
    kmeans,
    silhouette,
    sweep_clusters,
    transform_omega,
)
from .data import SnapshotMatrix, WindowFit, WindowSpec, load_matrix, save_matrix
from .level import (
    LevelConfig,
    LevelDecomposition,
    fit_level,
    lowpass_handoff,
    reconstruct_local_band,
)
from .model import (
    MrCostsModel,
    aggregate_bands,
    band_table,
    fit,
    global_separation,
    interpolate_omega_global,
    reconstruct_full,
    reconstruct_global_band,
    relative_error,
)
from .synth import (
    ComponentSpec,
    StandingPattern,
    TravelingPattern,
    generate,
    oracle_exact_dmd,
    oracle_fft_peaks,
)
from .varpro import (
    EigConstraint,
    VarproResult,
    VarproSettings,
    init_eigenvalues,
    jacobian_check,
    varpro_solve,
)
from .windows import (
    demean_window,
    make_windows,
    overlap_reconstruct,
    overlap_reconstruct_with_residue,
    window_weights,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "SnapshotMatrix",
    "WindowSpec",
    "WindowFit",
    "load_matrix",
    "save_matrix",
    "load_model",
    "save_model",
    "EigConstraint",
    "VarproSettings",
    "VarproResult",
    "init_eigenvalues",
    "varpro_solve",
    "jacobian_check",
    "make_windows",
    "demean_window",
    "window_weights",
    "overlap_reconstruct",
    "overlap_reconstruct_with_residue",
    "OmegaFeatures",
    "ClusterResult",
    "SweepResult",
    "transform_omega",
    "inverse_transform",
    "kmeans",
    "silhouette",
    "sweep_clusters",
    "LevelConfig",
    "LevelDecomposition",
    "fit_level",
    "reconstruct_local_band",
    "lowpass_handoff",
    "MrCostsModel",
    "fit",
    "interpolate_omega_global",
    "global_separation",
    "reconstruct_global_band",
    "reconstruct_full",
    "aggregate_bands",
    "relative_error",
    "band_table",
    "ComponentSpec",
    "StandingPattern",
    "TravelingPattern",
    "generate",
    "oracle_exact_dmd",
    "oracle_fft_peaks",
    "__version__",
]
