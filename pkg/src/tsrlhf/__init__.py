"""Model-free posterior sampling for online preference-based RL on tabular MDPs."""

from .eluder import be_dimension, de_dimension, is_independent
from .hypotheses import (HypothesisClass, QHypothesis, bracketing_bound, check_completeness,
                         check_realizability, greedy_policy, implied_reward,
                         mixture_closure_check)
from .instances import generate_class, random_mdp
from .mdp import (EpisodicMdp, TabularPolicy, Trajectory, bellman_apply, exact_policy_value,
                  optimal_policy, sample_trajectory, trajectory_reward)
from .posterior import (PreferenceRecord, TransitionEstimate, beta, log_likelihood, mle,
                        posterior, sample_hypothesis, update_transition_estimate)
from .preference import LinkFunction, derivative_bounds, link_eval, preference_prob, sample_preference
from .thompson import (RunConfig, RunLog, bayes_regret, bellman_error, confidence_diagnostics,
                       cumulative_regret, loss_decomposition_check, run_ts)
from .variational import (ElboConfig, GaussianQPosterior, elbo_estimate, elbo_gradient,
                          fit_variational, smooth)

__version__ = "0.1.0"
