"""Cross-entropy policy search over controlled HHMM policies."""

from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
import logging
import math

import numpy as np

from .errors import ConfigurationError
from .policy import ml_update, uniform_policy
from .pomdp import START, EpisodeBatch, draw_uniforms, sample_batch
from .rng import EVALUATE, TRAIN, episode_rngs

log = logging.getLogger(__name__)

IMPROVED, UNSUCCESSFUL, CONVERGED = "improved", "unsuccessful", "converged"
IMPROVEMENT_EPS = 1e-9
WEAK_PATIENCE = 100
STRONG_PATIENCE = 500


@dataclass(frozen=True)
class CEConfig:
    samples_per_iteration: int = 1000
    selective_rate: float = 0.5
    horizon: int = 100
    convergence_patience: int = WEAK_PATIENCE
    max_iterations: int = 10_000
    smoothing: float = 0.0
    seed: int = 0
    evaluation_rollouts: int = 200
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.selective_rate < 1:
            raise ConfigurationError("selective rate must lie in (0, 1)")
        if self.samples_per_iteration < 2:
            raise ConfigurationError("need at least 2 samples per iteration")
        if self.horizon < 1 or self.convergence_patience < 1 or self.max_iterations < 1:
            raise ConfigurationError("horizon, patience and max_iterations must be positive")
        if self.smoothing < 0:
            raise ConfigurationError("smoothing must be nonnegative")
        if self.evaluation_rollouts == 1:
            raise ConfigurationError("evaluation_rollouts must be 0 or at least 2")

    @property
    def elite_size(self):
        return elite_size(self.samples_per_iteration, self.selective_rate)


def elite_size(n, rate):
    # ceil(rate * n) with a guard against 0.1 * 30 = 3.0000000000000004
    return max(1, math.ceil(rate * n - 1e-9))


def select_elite(scores, rate):
    """Indices of the ceil(rate * N) best scores, ties going to the smaller index."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("no scores to select from")
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:elite_size(scores.size, rate)])


@dataclass
class ConvergenceTracker:
    patience: int
    best: float = -math.inf
    unsuccessful: int = 0


def register_iteration(tracker, elite_mean):
    if elite_mean > tracker.best + IMPROVEMENT_EPS:
        tracker.best = elite_mean
        tracker.unsuccessful = 0
        return IMPROVED
    tracker.unsuccessful += 1
    return CONVERGED if tracker.unsuccessful >= tracker.patience else UNSUCCESSFUL


# -- episode sources -------------------------------------------------------------

class EpisodeSource(ABC):
    num_actions: int
    num_observations: int

    @abstractmethod
    def sample(self, policy, horizon, rngs):
        """One episode per generator, returned as an :class:`EpisodeBatch`."""


class GenerativeSource(EpisodeSource):
    def __init__(self, world):
        self.world = world
        self.num_actions = world.num_actions
        self.num_observations = world.num_observations

    def sample(self, policy, horizon, rngs):
        return sample_batch(self.world, policy, horizon, rngs)


class BlackBoxSource(EpisodeSource):
    """Episodes from opaque steppers that never reveal the hidden state.

    ``make_stepper()`` returns an object with ``reset(rng, horizon)``,
    ``step(action) -> observation`` and ``score()``.  Each stepper receives
    the episode's stream after the policy's uniforms have been drawn.
    """

    def __init__(self, make_stepper, num_actions, num_observations):
        self.make_stepper = make_stepper
        self.num_actions = num_actions
        self.num_observations = num_observations

    def sample(self, policy, horizon, rngs):
        rngs = list(rngs)
        (up,) = draw_uniforms(rngs, horizon, policy.uniforms_per_step)
        steppers = []
        for rng in rngs:
            st = self.make_stepper()
            st.reset(rng, horizon)
            steppers.append(st)
        n = len(rngs)
        memory = policy.initial_memory(n)
        prev = np.full(n, START, dtype=np.int64)
        actions = np.empty((n, horizon), dtype=np.int64)
        observations = np.empty((n, horizon), dtype=np.int64)
        memories = np.empty((n, horizon, policy.memory_width), dtype=np.int64)
        for t in range(horizon):
            memory, x = policy.step(memory, prev, up[:, t])
            prev = np.array([st.step(int(a)) for st, a in zip(steppers, x)], dtype=np.int64)
            actions[:, t], observations[:, t], memories[:, t] = x, prev, memory
        scores = np.array([st.score() for st in steppers], dtype=float)
        return EpisodeBatch(actions, observations, memories, scores)


class WorldStepper:
    """Black-box wrapper around a generative world, one episode at a time."""

    def __init__(self, world):
        self.world = world

    def reset(self, rng, horizon):
        self._u = rng.random((horizon, self.world.uniforms_per_step))
        self._t = 0
        self._states = [self.world.sample_initial(self._u[:1])]
        self._actions, self._observations = [], []

    def step(self, action):
        state = self._states[-1]
        y = int(self.world.sample_observation(state, self._u[self._t:self._t + 1])[0])
        self._actions.append(action)
        self._observations.append(y)
        self._t += 1
        if self._t < len(self._u):
            self._states.append(self.world.sample_transition(state, np.array([action]),
                                                             self._u[self._t:self._t + 1]))
        return y

    def score(self):
        states = np.stack(self._states, axis=1)
        return float(self.world.score(np.array([self._actions]), np.array([self._observations]), states)[0])


def sample_parallel(source, policy, horizon, rngs, workers=1):
    """Split the streams into contiguous chunks, sample them concurrently, concatenate in order."""
    rngs = list(rngs)
    if workers <= 1 or len(rngs) < 2 * workers:
        return source.sample(policy, horizon, rngs)
    bounds = np.linspace(0, len(rngs), workers + 1).astype(int)
    chunks = [rngs[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: source.sample(policy, horizon, c), chunks))
    return EpisodeBatch.concat(parts)


# -- the loop --------------------------------------------------------------------

@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    elite_threshold: float
    elite_mean: float
    best_so_far: float
    unsuccessful: int
    sample_mean: float


@dataclass
class CEResult:
    best_params: object
    best_mean_score: float
    best_mean_stderr: float
    final_params: object
    history: list = field(default_factory=list)
    iterations_run: int = 0
    stop_reason: str = ""
    best_iteration: int = -1


HISTORY_HEADER = ["iteration", "elite_threshold", "elite_mean", "best_so_far", "unsuccessful", "sample_mean"]


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in history:
            w.writerow([r.iteration, repr(r.elite_threshold), repr(r.elite_mean), repr(r.best_so_far),
                        r.unsuccessful, repr(r.sample_mean)])


def evaluate_policy(source, policy, config, rollouts=None):
    """Mean and standard error over fresh rollouts, on the evaluation streams of ``config.seed``."""
    n = config.evaluation_rollouts if rollouts is None else rollouts
    if n < 2:
        raise ValueError("need at least 2 rollouts")
    batch = sample_parallel(source, policy, config.horizon, episode_rngs(config.seed, n, EVALUATE),
                            config.workers)
    return float(batch.scores.mean()), float(batch.scores.std(ddof=1) / math.sqrt(n))


def run_ce(source, structure, config, initial=None, callback=None):
    """Sample, keep the elite, refit by maximum likelihood; repeat until patience runs out.

    ``best_params`` is the policy that generated the best elite mean.  Its
    reported score comes from ``config.evaluation_rollouts`` fresh rollouts
    (or is NaN when that is 0).
    """
    if source.num_actions != structure.num_actions or source.num_observations != structure.num_observations:
        raise ConfigurationError(
            f"source has {source.num_actions} actions / {source.num_observations} observations, "
            f"structure expects {structure.num_actions} / {structure.num_observations}")
    params = initial if initial is not None else uniform_policy(structure)
    if params.structure != structure:
        raise ConfigurationError("initial policy does not match the structure")
    tracker = ConvergenceTracker(config.convergence_patience)
    history = []
    best_params, best_iteration = params, -1
    stop_reason = "max_iterations"
    for it in range(config.max_iterations):
        rngs = episode_rngs(config.seed, config.samples_per_iteration, TRAIN, it)
        batch = sample_parallel(source, params, config.horizon, rngs, config.workers)
        elite = select_elite(batch.scores, config.selective_rate)
        elite_scores = batch.scores[elite]
        elite_mean = float(elite_scores.mean())
        status = register_iteration(tracker, elite_mean)
        if status == IMPROVED:
            best_params, best_iteration = params, it
        rec = IterationRecord(it, float(elite_scores.min()), elite_mean, tracker.best, tracker.unsuccessful,
                              float(batch.scores.mean()))
        history.append(rec)
        if callback is not None:
            callback(rec)
        log.debug("iteration %d: elite mean %.3f, best %.3f, unsuccessful %d",
                  it, elite_mean, tracker.best, tracker.unsuccessful)
        if status == CONVERGED:
            stop_reason = "converged"
            break
        params = ml_update(structure, batch.select(elite), config.smoothing, params)
    mean, se = (math.nan, math.nan)
    if config.evaluation_rollouts >= 2:
        mean, se = evaluate_policy(source, best_params, config)
    return CEResult(best_params, mean, se, params, history, len(history), stop_reason, best_iteration)
