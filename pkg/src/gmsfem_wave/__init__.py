"""Mixed generalized multiscale finite elements for the first-order acoustic wave equation.

The package builds a staggered two-level triangulation, local spectral
velocity/pressure bases with a block-diagonal coarse velocity mass, and an
explicit leap-frog solver, together with a fine-grid reference scheme, an
absorbing layer and numerical checks of the method's properties.
"""

__version__ = "0.1.0"

from .mesh import StaggeredMesh, build_staggered_mesh  # noqa: E402
from .medium import MediumField, SourceConfig, constant_medium, layered_random_medium  # noqa: E402
from .fem import assemble_forms, build_spaces  # noqa: E402
from .basis import (OfflineSpace, Selection, assemble_offline_space, build_offline_basis,  # noqa: E402
                    identity_offline_space, load_offline, save_offline, selection_from_counts)
from .solver import (History, WaveState, reduce_system, run_fine_reference, run_gmsfem,  # noqa: E402
                     run_coupled_rt0, stable_dt)
from .pml import PmlConfig, build_pml_system, run_pml  # noqa: E402
from .analysis import compare_to_reference, lemma_residuals  # noqa: E402

__all__ = [
    "__version__",
    "StaggeredMesh",
    "build_staggered_mesh",
    "MediumField",
    "SourceConfig",
    "constant_medium",
    "layered_random_medium",
    "assemble_forms",
    "build_spaces",
    "OfflineSpace",
    "Selection",
    "assemble_offline_space",
    "build_offline_basis",
    "identity_offline_space",
    "load_offline",
    "save_offline",
    "selection_from_counts",
    "History",
    "WaveState",
    "reduce_system",
    "run_fine_reference",
    "run_gmsfem",
    "run_coupled_rt0",
    "stable_dt",
    "PmlConfig",
    "build_pml_system",
    "run_pml",
    "compare_to_reference",
    "lemma_residuals",
]
