"""Split implicit/explicit multiscale time stepping for parabolic problems
with parameterized sources, plus a reduced-order network surrogate that
replaces the implicit solves after training.
"""

from .assembly import (
    assemble_mass,
    assemble_nonlinear_stiffness,
    assemble_stiffness,
    coarse_load,
    restrict,
)
from .config import ExperimentConfig, load_config_file
from .errors import ErrorSeries, average_series, compute_errors
from .field import ScalarCellField, generate_channel_field, load_field, save_field
from .grid import (
    CoarseDecomposition,
    FineGrid,
    build_coarse_decomposition,
    build_fine_grid,
    build_partition_of_unity,
)
from .mlp import MlpModel, ParameterSampler, TrainConfig, predict_trajectory, train
from .pipeline import PipelineContext, run_pipeline
from .pod import PodBasis, build_snapshot_matrix, compute_pod
from .sources import SourceSpec, discretize_source, make_source, source_eval
from .spaces import MultiscaleSpaces, SpacesConfig, assemble_spaces, build_operators
from .stability import cfl_bound, estimate_gamma, stability_report, verify_continuity_bound
from .stepping import (
    Trajectory,
    backward_euler_fine,
    first_coarse_step,
    run_partially_explicit,
)

__version__ = "0.1.0"
