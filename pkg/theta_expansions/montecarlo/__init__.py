from theta_expansions.montecarlo.experiments import (
    ExperimentReport,
    diamond_vaaler_experiment,
    frequencies_experiment,
    khinchine_experiment,
    max_digit_experiment,
    philipp_experiment,
    run_all,
)
from theta_expansions.montecarlo.runner import run_ensemble
from theta_expansions.montecarlo.trajectory import (
    norming_classify,
    run_trajectory,
    sample_gamma,
)

__all__ = [
    "ExperimentReport",
    "diamond_vaaler_experiment",
    "frequencies_experiment",
    "khinchine_experiment",
    "max_digit_experiment",
    "norming_classify",
    "philipp_experiment",
    "run_all",
    "run_ensemble",
    "run_trajectory",
    "sample_gamma",
]
