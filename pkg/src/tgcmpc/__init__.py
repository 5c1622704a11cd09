"""Tube-based guaranteed-cost MPC for constrained linear systems with
structured norm-bounded multiplicative uncertainty.

Offline phase: LMI syntheses of a guaranteed-cost state feedback and of
ellipsoidal robust positive invariant level-sets.  Online phase: a
second-order cone program that plans a nominal trajectory together with a
homothetically scaled invariant tube around it.
"""

from importlib import resources

from .model import (UncertaintyStructure, UncertainSystem, CostSpec,
                    PolytopeConstraints, Problem, make_cost, factorize_cost,
                    evaluate_uncertainty, validate_system, load_problem,
                    parse_problem)
from .conic import ConeProgram, SolveSettings, Solution, solve, max_violation
from .synthesis import (GccSolution, RpiSolution, InfeasibleError, SolverFailure,
                        build_gcc_lmi, synthesize_gcc, compute_rbar, rpi_step,
                        synthesize_mrpi, synthesize_approx_mrpi,
                        line_search_a_alpha)
from .tube import (TubeConstants, TubeProblem, TubeSolution,
                   precompute_tube_constants, build_tube_socp, solve_tube,
                   control_input, cost_bound, terminal_shape_from_rpi)
from .sim import (DisturbanceModel, SimTrace, GccOnlyController,
                  TubeMpcController, sample_delta, run_closed_loop,
                  rollout_open_loop, realized_cost, feasibility_sweep)

__version__ = "0.1.0"


def bundled_problem_path():
    """Path of the packaged three-state example problem file."""
    return resources.files(__package__) / "data" / "example_system.json"


def load_bundled_problem():
    return load_problem(bundled_problem_path())
