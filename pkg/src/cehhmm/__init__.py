"""Cross-entropy policy search with controlled hierarchical HMM policies."""

__version__ = "0.1.0"

from .ce import CEConfig, CEResult, BlackBoxSource, GenerativeSource, run_ce, evaluate_policy
from .errors import ConfigurationError, DocumentError, SizeCapExceeded
from .hhmm import HhmmLevel, HhmmSpec, bn_enumerate_sequences, enumerate_sequences, sample_recursive
from .oracle import brute_force_tree_search, mdp_dp, pomdp_belief_dp
from .policy import HhmmStructure, PolicyParams, ml_update, param_count, random_policy, uniform_policy
from .pomdp import (Episode, EpisodeBatch, WorldModel, estimate_policy_value, exact_policy_value,
                    random_world, sample_episode)
from .tracking import TrackingConfig, TrackingEnv, TrackingStepper
