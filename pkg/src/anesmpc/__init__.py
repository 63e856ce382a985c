"""Constrained tracking MPC for two-drug (propofol/remifentanil) hypnosis
control: patient PK/PD modeling, slow-state disturbance compensation,
terminal-ingredient computation, the tracking QP with artificial
steady-state variables, and a nominal closed-loop simulator."""

__version__ = "0.1.0"

from .compensation import (
    CompensationGain,
    InputBox,
    compensation_gain,
    disturbance_bound,
    tracking_input_set,
)
from .errors import AnesMpcError, GeometryError, ModelConfigError, SolverInfeasibleError
from .geometry import Polyhedron, contains, lp_max, remove_redundant
from .mpc import (
    Controller,
    ControlOutput,
    MpcConfig,
    SteadyInputSet,
    VdSpec,
    build_controller,
    build_steady_input_set,
    load_controller_config,
    steady_segment,
)
from .pkpd import (
    ContinuousDynamics,
    DiscreteDynamics,
    DrugPkParams,
    PatientModel,
    PdParams,
    bis_output,
    build_continuous,
    discretize_euler,
    hill_invert,
    load_patient,
    steady_output_row,
)
from .qp import QpProblem, QpSolution, qp_solve
from .sim import Metrics, SimLog, compute_metrics, simulate_closed_loop
from .terminal import (
    TerminalIngredients,
    build_W_lambda,
    compute_terminal_ingredients,
    controllability_index,
    extended_dynamics,
    max_admissible_invariant_set,
    solve_dare,
)
