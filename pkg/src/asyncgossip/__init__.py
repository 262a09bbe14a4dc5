"""Asynchronous gossip simulation: weighted averaging, relative value
iteration, CSMA-driven updates, multihop and importance-sampled pulls, and
gossip computation of Perron eigenvectors, each checked against dense
reference solvers."""

from .errors import GossipError, IrreducibilityError, NumericAbort, ValidationError
from .netgraph import (
    Graph,
    NonnegativeMatrixModel,
    StochasticMatrixModel,
    erdos_renyi_model,
    perron_eigenpair,
    second_eigenvalue_modulus,
    solve_poisson,
    stationary_distribution,
)
from .engine import (
    ActivationProcess,
    AggregateSummary,
    NoiseModel,
    RngStream,
    RunTrace,
    StepRule,
    StepSchedule,
    multi_seed_aggregate,
    run,
    run_many,
)
from .avg_gossip import VanillaGossip, rate_weighted_consensus, wrong_consensus_experiment
from .rvi_gossip import RviErrorModel, RviGossip
from .csma import ActivationFamily, csma_rvi_run, csma_simulate, learn_multipliers, solve_entropy_program
from .variants import ImportanceGossip, MultihopGossip, optimal_importance_matrix

__version__ = "0.1.0"
