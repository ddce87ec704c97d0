"""Adaptive offline/online replay mixing for tabular Q-learning, plus numerical checks of the
mixing-ratio hypergradient and the overestimation-bias result."""

from road.bandit import BanditState, make_bandit, record, select_arm, ucb_values
from road.config import ExperimentConfig, load_config
from road.harness import RunRecord, export_metrics, run_experiment, run_seed
from road.mdp import Mdp, build_chain_mdp, exact_occupancy, policy_return, value_iteration
from road.replay import Decreasing, Fixed, OnlineBuffer, Road, sample_mixed
from road.surrogate import SurrogateConfig, compute_rq

__all__ = [
    "BanditState", "Decreasing", "ExperimentConfig", "Fixed", "Mdp", "OnlineBuffer", "Road", "RunRecord",
    "SurrogateConfig", "build_chain_mdp", "compute_rq", "exact_occupancy", "export_metrics", "load_config",
    "make_bandit", "policy_return", "record", "run_experiment", "run_seed", "sample_mixed", "select_arm",
    "ucb_values", "value_iteration",
]
