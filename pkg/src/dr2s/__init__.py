"""Distributionally robust two-stage stochastic mixed-integer second-order-
cone programming by decomposition branch-and-cut.

The package splits into: problem data and validation (`model`), an embedded
interior-point solver for mixed box/linear/second-order-cone programs
(`conic`), branch-and-cut over the integer second-stage variables (`misocp`),
leaf-dual and disjunctive cut generation (`cuts`), worst-case distribution
selection (`ambiguity`), the decomposition main loop (`driver`), and a
command-line front end with instance generators (`cli`).
"""

from .model import (AmbiguitySet, FirstStage, Instance, ScenarioData,
                    ScenarioSoc, SolveOptions, augment_with_slacks,
                    instance_from_json, instance_to_json, load_instance,
                    save_instance, validate)
from .conic import (ConeProgram, ConicSolution, SocRow, check_strong_duality,
                    solve_conic)
from .misocp import (AssumptionViolation, BcResult, LeafRecord, NodeBox,
                     SolverNumericalError, solve_monolithic, solve_subproblem)
from .cuts import (AggregatedCut, NodeCut, ScenarioCut, aggregate,
                   build_and_solve_disjunctive_lp, node_cut_from_duals)
from .ambiguity import WorstCaseResult, worst_case_distribution
from .driver import MasterState, SolveTrace, run
from .cli import RflParams, build_extensive_form, gen_illustrative, gen_rfl

__version__ = "0.1.0"

__all__ = [
    "AggregatedCut", "AmbiguitySet", "AssumptionViolation", "BcResult",
    "ConeProgram", "ConicSolution", "FirstStage", "Instance", "LeafRecord",
    "MasterState", "NodeBox", "NodeCut", "RflParams", "ScenarioCut",
    "ScenarioData", "ScenarioSoc", "SocRow", "SolveOptions", "SolveTrace",
    "SolverNumericalError", "WorstCaseResult", "aggregate",
    "augment_with_slacks", "build_and_solve_disjunctive_lp",
    "build_extensive_form", "check_strong_duality", "gen_illustrative",
    "gen_rfl", "instance_from_json", "instance_to_json", "load_instance",
    "node_cut_from_duals", "run", "save_instance", "solve_conic",
    "solve_monolithic", "solve_subproblem", "validate", "worst_case_distribution",
    "__version__",
]
