"""Finite POMDP data model, episode sampling and policy values.

Time runs over t = 0..T-1 in code (t = 1..T in the usual notation).  At each
turn the policy sees the previous observation only, the world state ``z_t``
is drawn from ``p(z_t | z_{t-1}, x_{t-1})`` (the initial law at t = 0) and
``y_t`` from ``p(y_t | z_t)``.  Missing predecessors are the start sentinel
``START = -1``; every conditioning axis stores it at index 0, so a symbol
``s`` lives at conditioning index ``s + 1``.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
import json
import math

import numpy as np

from .errors import ConfigurationError, DocumentError, SizeCapExceeded
from .rng import EVALUATE, cdf_table, draw, episode_rngs

START = -1
ROW_TOL = 1e-12
WORLD_SCHEMA = "cehhmm.world/1"


def check_distribution_rows(name, table, tol=ROW_TOL):
    table = np.asarray(table, dtype=float)
    if np.any(table < 0) or np.any(table > 1):
        raise ConfigurationError(f"{name}: probabilities must lie in [0, 1]")
    sums = table.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > tol)
    if len(bad):
        row = tuple(int(i) for i in bad[0])
        raise ConfigurationError(f"{name}: row {row} sums to {sums[row]!r}, expected 1")
    return table


# -- evaluations ---------------------------------------------------------------

class Evaluation(ABC):
    """Trajectory evaluation folded turn by turn through an accumulator."""

    def start(self):
        return 0.0

    @abstractmethod
    def update(self, acc, t, x, y, z):
        ...

    def result(self, acc):
        return float(acc)

    def __call__(self, actions, observations, states):
        acc = self.start()
        for t, (x, y, z) in enumerate(zip(actions, observations, states)):
            acc = self.update(acc, t, int(x), int(y), int(z))
        return self.result(acc)


class RecursiveEvaluation(Evaluation):
    """``V_t = step(t, x_t, y_t, z_t, V_{t-1})`` starting from ``initial``."""

    def __init__(self, step, initial=0.0):
        self.step = step
        self.initial = initial

    def start(self):
        return self.initial

    def update(self, acc, t, x, y, z):
        return self.step(t, x, y, z, acc)


class StepRewardEvaluation(Evaluation):
    """Additive evaluation with a stationary reward table indexed ``[x, y, z]``."""

    def __init__(self, reward):
        self.reward = np.asarray(reward, dtype=float)

    def update(self, acc, t, x, y, z):
        return acc + float(self.reward[x, y, z])


class TerminalEvaluation(Evaluation):
    """Final-turn evaluation of the last (action, observation, state), given as a table ``[x, y, z]``.

    The accumulator simply holds the value of the latest turn.
    """

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)

    def start(self):
        return None

    def update(self, acc, t, x, y, z):
        return float(self.table[x, y, z])

    def shifted(self, c):
        return TerminalEvaluation(self.table + c)


class TrajectoryEvaluation(Evaluation):
    """Arbitrary function of the whole trajectory ``fn(xs, ys, zs)``."""

    def __init__(self, fn):
        self.fn = fn

    def start(self):
        return ()

    def update(self, acc, t, x, y, z):
        return acc + ((x, y, z),)

    def result(self, acc):
        if not acc:
            return float(self.fn((), (), ()))
        xs, ys, zs = zip(*acc)
        return float(self.fn(xs, ys, zs))


# -- worlds ----------------------------------------------------------------------

class World(ABC):
    """Batched generative world: the interface the samplers rely on.

    ``sample_initial``/``sample_transition`` consume column 0 of the per-turn
    uniforms and ``sample_observation`` consumes column 1.
    """

    uniforms_per_step = 2
    num_actions: int
    num_observations: int

    @abstractmethod
    def sample_initial(self, u):
        ...

    @abstractmethod
    def sample_transition(self, states, actions, u):
        ...

    @abstractmethod
    def sample_observation(self, states, u):
        ...

    @abstractmethod
    def score(self, actions, observations, states):
        """Evaluations of a batch of trajectories, arrays shaped (B, T, ...)."""


@dataclass(frozen=True, eq=False)
class WorldModel(World):
    """Finite POMDP given by dense tables.

    ``transition[z, x]`` is the law of the next state, ``observation[z]`` the
    law of the observation and ``initial`` the law of the first state.
    """

    initial: np.ndarray
    transition: np.ndarray
    observation: np.ndarray
    evaluation: Evaluation

    def __post_init__(self):
        initial = check_distribution_rows("initial", self.initial)
        transition = check_distribution_rows("transition", self.transition)
        observation = check_distribution_rows("observation", self.observation)
        if initial.ndim != 1 or transition.ndim != 3 or observation.ndim != 2:
            raise ConfigurationError("expected initial (Z,), transition (Z, X, Z), observation (Z, Y)")
        nz = initial.shape[0]
        if transition.shape[0] != nz or transition.shape[2] != nz or observation.shape[0] != nz:
            raise ConfigurationError("state cardinality differs between tables")
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "observation", observation)

    @property
    def num_states(self):
        return self.initial.shape[0]

    @property
    def num_actions(self):
        return self.transition.shape[1]

    @property
    def num_observations(self):
        return self.observation.shape[1]

    @cached_property
    def _cdfs(self):
        return cdf_table(self.initial), cdf_table(self.transition), cdf_table(self.observation)

    def sample_initial(self, u):
        init, _, _ = self._cdfs
        return draw(np.broadcast_to(init, (len(u), init.size)), u[:, 0])

    def sample_transition(self, states, actions, u):
        _, trans, _ = self._cdfs
        return draw(trans[states, actions], u[:, 0])

    def sample_observation(self, states, u):
        _, _, obs = self._cdfs
        return draw(obs[states], u[:, 1])

    def score(self, actions, observations, states):
        return np.array([self.evaluation(a, o, s) for a, o, s in zip(actions, observations, states)])

    def with_evaluation(self, evaluation):
        return WorldModel(self.initial, self.transition, self.observation, evaluation)


# -- episodes ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Episode:
    actions: np.ndarray
    observations: np.ndarray
    memories: np.ndarray
    score: float
    states: np.ndarray = None

    def __post_init__(self):
        n = len(self.actions)
        if len(self.observations) != n or len(self.memories) != n:
            raise ConfigurationError("episode sequences differ in length")
        if self.states is not None and len(self.states) != n:
            raise ConfigurationError("episode states differ in length")

    @property
    def horizon(self):
        return len(self.actions)


@dataclass(frozen=True, eq=False)
class EpisodeBatch:
    """N episodes of equal length stored as arrays with a leading episode axis."""

    actions: np.ndarray
    observations: np.ndarray
    memories: np.ndarray
    scores: np.ndarray
    states: np.ndarray = None

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, n):
        return Episode(self.actions[n], self.observations[n], self.memories[n],
                       float(self.scores[n]), None if self.states is None else self.states[n])

    def __iter__(self):
        return (self[n] for n in range(len(self)))

    @property
    def horizon(self):
        return self.actions.shape[1]

    def select(self, indices):
        indices = np.asarray(indices, dtype=int)
        return EpisodeBatch(self.actions[indices], self.observations[indices], self.memories[indices],
                            self.scores[indices], None if self.states is None else self.states[indices])

    @classmethod
    def concat(cls, batches):
        batches = list(batches)
        states = None if any(b.states is None for b in batches) else np.concatenate([b.states for b in batches])
        return cls(np.concatenate([b.actions for b in batches]),
                   np.concatenate([b.observations for b in batches]),
                   np.concatenate([b.memories for b in batches]),
                   np.concatenate([b.scores for b in batches]),
                   states)

    @classmethod
    def from_episodes(cls, episodes):
        episodes = list(episodes)
        if not episodes:
            raise ConfigurationError("no episodes")
        states = None
        if all(e.states is not None for e in episodes):
            states = np.stack([np.asarray(e.states) for e in episodes])
        return cls(np.stack([np.asarray(e.actions) for e in episodes]),
                   np.stack([np.asarray(e.observations) for e in episodes]),
                   np.stack([np.asarray(e.memories) for e in episodes]),
                   np.array([e.score for e in episodes], dtype=float),
                   states)


def as_batch(episodes):
    if isinstance(episodes, EpisodeBatch):
        return episodes
    if isinstance(episodes, Episode):
        return EpisodeBatch.from_episodes([episodes])
    return EpisodeBatch.from_episodes(episodes)


# -- policies ------------------------------------------------------------------

class Policy(ABC):
    """Stochastic finite-memory policy.

    ``step`` sees only its own memory and the previous observation (``START``
    on the first turn) and returns the new memory together with the action.
    """

    num_actions: int
    num_observations: int
    memory_width: int
    uniforms_per_step: int

    def initial_memory(self, batch=1):
        return np.full((batch, self.memory_width), START, dtype=np.int64)

    @abstractmethod
    def step(self, memory, previous_observation, u):
        """Batched step: memory (B, W), previous_observation (B,), u (B, uniforms_per_step)."""

    @abstractmethod
    def step_distribution(self, memory, previous_observation):
        """All ``(new_memory, action, probability)`` triples with positive probability."""

    @abstractmethod
    def log_prob(self, episode):
        ...


def _check_compatible(world, policy, horizon):
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if world.num_actions != policy.num_actions or world.num_observations != policy.num_observations:
        raise ConfigurationError(
            f"world has {world.num_actions} actions / {world.num_observations} observations, "
            f"policy expects {policy.num_actions} / {policy.num_observations}")


def draw_uniforms(rngs, horizon, *widths):
    """Per-episode uniform blocks, drawn in order from each episode's own stream."""
    blocks = [[] for _ in widths]
    for rng in rngs:
        for k, w in enumerate(widths):
            blocks[k].append(rng.random((horizon, w)))
    return [np.stack(b) if b else np.zeros((0, horizon, w)) for b, w in zip(blocks, widths)]


def sample_batch(world, policy, horizon, rngs):
    """Sample one episode per generator; the result does not depend on batch splitting."""
    _check_compatible(world, policy, horizon)
    rngs = list(rngs)
    up, uw = draw_uniforms(rngs, horizon, policy.uniforms_per_step, world.uniforms_per_step)
    n = len(rngs)
    memory = policy.initial_memory(n)
    prev_obs = np.full(n, START, dtype=np.int64)
    actions = np.empty((n, horizon), dtype=np.int64)
    observations = np.empty((n, horizon), dtype=np.int64)
    memories = np.empty((n, horizon, policy.memory_width), dtype=np.int64)
    states = []
    state = None
    for t in range(horizon):
        if t == 0:
            state = world.sample_initial(uw[:, t])
        else:
            state = world.sample_transition(state, actions[:, t - 1], uw[:, t])
        memory, x = policy.step(memory, prev_obs, up[:, t])
        y = world.sample_observation(state, uw[:, t])
        actions[:, t] = x
        observations[:, t] = y
        memories[:, t] = memory
        states.append(state)
        prev_obs = y
    states = np.stack(states, axis=1)
    scores = np.asarray(world.score(actions, observations, states), dtype=float)
    return EpisodeBatch(actions, observations, memories, scores, states)


def sample_episode(world, policy, horizon, rng):
    return sample_batch(world, policy, horizon, [rng])[0]


def _rollout_rngs(rng, count, purpose=EVALUATE):
    if isinstance(rng, np.random.Generator):
        return rng.spawn(count)
    return episode_rngs(rng, count, purpose=purpose)


def estimate_policy_value(world, policy, horizon, episodes, rng):
    """Monte Carlo mean and standard error over ``episodes`` independent rollouts.

    ``rng`` is either a seed (streams derived per episode index) or a Generator
    (child streams spawned from it).
    """
    if episodes < 2:
        raise ValueError("need at least 2 episodes for a standard error")
    scores = sample_batch(world, policy, horizon, _rollout_rngs(rng, episodes)).scores
    return float(scores.mean()), float(scores.std(ddof=1) / math.sqrt(episodes))


def exact_policy_value(world, policy, horizon, cap=10**7):
    """Expected evaluation under the joint law, by forward enumeration.

    Histories are merged on ``(memory, z, y, x, accumulator)``, which is exact
    because the future only depends on those.  Refuses when a step would expand
    more than ``cap`` terms.
    """
    _check_compatible(world, policy, horizon)
    ev = world.evaluation
    init = policy.initial_memory(1)[0]
    cache = {}

    def policy_branches(m, y):
        key = (m, y)
        if key not in cache:
            cache[key] = [(tuple(int(v) for v in mm), int(x), p)
                          for mm, x, p in policy.step_distribution(np.array(m), y) if p > 0]
        return cache[key]

    z_support = [[np.flatnonzero(world.transition[z, x]) for x in range(world.num_actions)]
                 for z in range(world.num_states)]
    y_support = [np.flatnonzero(world.observation[z]) for z in range(world.num_states)]
    branching = world.num_actions * getattr(policy, "num_memory_states", 1) * world.num_states * world.num_observations

    frontier = {}
    m0 = tuple(int(v) for v in init)
    for m, x, pm in policy_branches(m0, START):
        for z in np.flatnonzero(world.initial):
            for y in y_support[z]:
                p = pm * world.initial[z] * world.observation[z, y]
                key = (m, int(z), int(y), x, ev.update(ev.start(), 0, x, int(y), int(z)))
                frontier[key] = frontier.get(key, 0.0) + p
    for t in range(1, horizon):
        estimate = len(frontier) * branching
        if estimate > cap:
            raise SizeCapExceeded("exact_policy_value", estimate, cap)
        nxt = {}
        for (m, z, y, x, acc), p in frontier.items():
            for m2, x2, pm in policy_branches(m, y):
                for z2 in z_support[z][x]:
                    pz = p * pm * world.transition[z, x, z2]
                    for y2 in y_support[z2]:
                        key = (m2, int(z2), int(y2), x2, ev.update(acc, t, x2, int(y2), int(z2)))
                        nxt[key] = nxt.get(key, 0.0) + pz * world.observation[z2, y2]
        frontier = nxt
    return float(sum(p * ev.result(k[4]) for k, p in frontier.items()))


# -- world documents -----------------------------------------------------------

def world_to_document(world):
    ev = world.evaluation
    if isinstance(ev, TerminalEvaluation):
        evaluation = {"kind": "terminal", "table": ev.table.tolist()}
    elif isinstance(ev, StepRewardEvaluation):
        evaluation = {"kind": "step", "table": ev.reward.tolist()}
    else:
        raise DocumentError("only terminal and step evaluations are serializable", "evaluation")
    rows = [world.initial.tolist()] + world.transition.reshape(-1, world.num_states).tolist()
    return {
        "schema": WORLD_SCHEMA,
        "num_states": world.num_states,
        "num_actions": world.num_actions,
        "num_observations": world.num_observations,
        "transition": rows,
        "observation": world.observation.tolist(),
        "evaluation": evaluation,
    }


def world_from_document(doc):
    if doc.get("schema") != WORLD_SCHEMA:
        raise DocumentError(f"expected schema {WORLD_SCHEMA!r}, got {doc.get('schema')!r}", "schema")
    try:
        nz, nx, ny = int(doc["num_states"]), int(doc["num_actions"]), int(doc["num_observations"])
        rows = np.asarray(doc["transition"], dtype=float)
        obs = np.asarray(doc["observation"], dtype=float)
        ev = doc["evaluation"]
        table = np.asarray(ev["table"], dtype=float)
    except KeyError as exc:
        raise DocumentError("missing field", str(exc)) from None
    if rows.shape != (1 + nz * nx, nz):
        raise DocumentError(f"shape {rows.shape}, expected {(1 + nz * nx, nz)}", "transition")
    if obs.shape != (nz, ny):
        raise DocumentError(f"shape {obs.shape}, expected {(nz, ny)}", "observation")
    if table.shape != (nx, ny, nz):
        raise DocumentError(f"shape {table.shape}, expected {(nx, ny, nz)}", "evaluation.table")
    kinds = {"terminal": TerminalEvaluation, "step": StepRewardEvaluation}
    if ev.get("kind") not in kinds:
        raise DocumentError(f"unknown kind {ev.get('kind')!r}", "evaluation.kind")
    return WorldModel(rows[0], rows[1:].reshape(nz, nx, nz), obs, kinds[ev["kind"]](table))


def random_world(rng, num_states, num_actions, num_observations, evaluation="terminal", sparsity=0.3,
                 fully_observed=False):
    """Random tiny POMDP with sparse Dirichlet rows and a uniform(0, 1) evaluation table ``[x, y, z]``."""
    nz, nx, ny = num_states, num_actions, num_observations

    def rows(shape):
        w = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
        keep = rng.random(w.shape) >= sparsity
        np.put_along_axis(keep, w.argmax(axis=-1)[..., None], True, axis=-1)
        w = np.where(keep, w, 0.0)
        return w / w.sum(axis=-1, keepdims=True)

    initial = rows((nz,))
    transition = rows((nz, nx, nz))
    if fully_observed:
        ny = nz
        observation = np.eye(nz)
    else:
        observation = rows((nz, ny))
    table = rng.random((nx, ny, nz))
    ev = TerminalEvaluation(table) if evaluation == "terminal" else StepRewardEvaluation(table)
    return WorldModel(initial, transition, observation, ev)


def load_world(path):
    with open(path) as fh:
        return world_from_document(json.load(fh))


def save_world(world, path):
    with open(path, "w") as fh:
        json.dump(world_to_document(world), fh, indent=1)
        fh.write("\n")
