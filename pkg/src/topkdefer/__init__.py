"""One-stage top-k learning-to-defer with a k-independent comp-sum surrogate."""
from .costs import CostSpec, augmented_cost, complementary_cost, cost_matrix, expected_cost_vector
from .errors import ConfigError, NumericalError, ValidationError
from .oracle import bayes_topk, minimizability_gap_conditional
from .policy import adaptive_topk, full_ranking, topk_set
from .surrogate import comp_sum_loss, deferral_surrogate, deferral_surrogate_grad, upper_bound_rhs

__version__ = "0.1.0"

__all__ = [
    "CostSpec", "augmented_cost", "complementary_cost", "cost_matrix", "expected_cost_vector",
    "ConfigError", "NumericalError", "ValidationError", "bayes_topk",
    "minimizability_gap_conditional", "adaptive_topk", "full_ranking", "topk_set",
    "comp_sum_loss", "deferral_surrogate", "deferral_surrogate_grad", "upper_bound_rhs",
]
