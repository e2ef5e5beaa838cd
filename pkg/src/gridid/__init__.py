"""Admittance-matrix identification for poly-phase distribution grids.

Identifies the complex bus admittance matrix (parameters + operational
topology) from synchronized voltage/current phasor data, handles the
rank-deficient regime by recovering a trusted submatrix, and tracks
admittance-changing events online.  A synthetic feeder simulator provides
ground truth for verification.
"""

from .exceptions import (
    DataError,
    GridIdError,
    NetworkError,
    RankDeficiencyError,
    SolverError,
)
from .netmodel import (
    AdmittanceMatrix,
    GridEvent,
    Line,
    Network,
    Node,
    Switch,
    apply_event,
    assemble_ybus,
    event_delta,
    load_network,
    load_ybus,
    save_network,
    save_ybus,
)
from .phasors import PhasorDataset, add_noise, load_phasor_csv, numerical_rank, save_phasor_csv
from .solvers import (
    CVResult,
    LinearOperator,
    SparseSolution,
    adaptive_lasso,
    complex_soft_threshold,
    cross_validate,
    default_gamma_grid,
    default_lambda_grid,
    lasso,
    lasso_path_solve,
    ols,
    ridge,
)
from .identify import (
    BasisSelection,
    PartialIdentification,
    PriorModel,
    design_operator,
    error_metrics,
    estimate_basis_coeff,
    identify_wellposed,
    lowrank_identify,
    recover_y12,
    recover_y22_y11,
    refine_with_prior,
    select_basis,
)
from .events import (
    DetectorState,
    LocalizationResult,
    TurningPointResult,
    detect_step,
    localize,
    prediction_error,
    run_detector,
    samples_needed,
    turning_point_test,
)
from .simkit import (
    FeederSpec,
    GroundTruth,
    LoadSpec,
    ScenarioSpec,
    generate_feeder,
    generate_loads,
    run_scenario,
    solve_steady_state,
)

__version__ = "0.1.0"
