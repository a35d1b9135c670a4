"""Jointly wide-sense stationary time-vertex processes."""

from .errors import ConvergenceWarning, SolverError, ValidationError
from .graph import (
    GraphSpectrum,
    GraphTopology,
    build_laplacian,
    chebyshev_apply,
    eigendecompose,
    estimate_lambda_max,
    random_geometric_graph,
)
from .harmonic import (
    JointDomain,
    JointFilterSpec,
    TimeGrid,
    apply_joint_filter_exact,
    apply_joint_filter_fast,
    ijft,
    jft,
)
from .process import JpsdModel, ProcessEnsemble, generate_jwss, sirs_simulate
from .psd import EstimatorConfig, PsdEstimate, WindowSpec, center, convolutional_jpsd, fast_jpsd, sample_jpsd
from .recovery import RecoveryProblem, SolverConfig, make_mask, mmse_recover

__version__ = "0.1.0"
