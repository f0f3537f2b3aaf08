"""Controlled hierarchical HMM policies.

A policy with ``L`` memory levels holds one table per factor of

    h(x, m | y) = prod_t h0(x_t | m1_t) h1(m1_t | y_{t-1}, m2_t) prod_{l>=2} hl(ml_t | m(l-1)_{t-1}, m(l+1)_t)

Storage layout, with the start sentinel at index 0 of every lagged axis:

* ``h0``            shape (M1, X)
* ``levels[l - 1]`` shape (lag, upper, Ml) where ``lag`` is ``Y + 1`` for
  level 1 and ``M(l-1) + 1`` above it, and ``upper`` is ``M(l+1)`` below the
  top level and ``1`` (sentinel only) at the top.

Within a turn the memory is sampled top-down, then the action.
"""

from dataclasses import dataclass
from functools import cached_property
import json
import math

import numpy as np

from .errors import ConfigurationError, DocumentError
from .pomdp import START, Policy, as_batch, check_distribution_rows
from .rng import cdf_table, draw

POLICY_SCHEMA = "cehhmm.policy/1"
DOCUMENT_ROW_TOL = 1e-9


@dataclass(frozen=True)
class HhmmStructure:
    level_cardinalities: tuple
    num_actions: int
    num_observations: int

    def __post_init__(self):
        cards = tuple(int(c) for c in self.level_cardinalities)
        object.__setattr__(self, "level_cardinalities", cards)
        if not cards:
            raise ConfigurationError("need at least one memory level")
        if min(cards) < 1 or self.num_actions < 1 or self.num_observations < 1:
            raise ConfigurationError("all cardinalities must be at least 1")

    @property
    def num_levels(self):
        return len(self.level_cardinalities)

    def card(self, level):
        return self.level_cardinalities[level - 1]

    def level_shape(self, level):
        """Storage shape of the level-``level`` table, 1-based."""
        lag = self.num_observations if level == 1 else self.card(level - 1)
        upper = self.card(level + 1) if level < self.num_levels else 1
        return (lag + 1, upper, self.card(level))

    def h0_shape(self):
        return (self.card(1), self.num_actions)


def param_count(structure):
    """Free parameters, sentinel rows excluded: sum of (outcomes - 1) * conditioning rows."""
    total = (structure.num_actions - 1) * structure.card(1)
    for level in range(1, structure.num_levels + 1):
        lag, upper, out = structure.level_shape(level)
        total += (out - 1) * (lag - 1) * upper
    return total


@dataclass(frozen=True, eq=False)
class PolicyParams(Policy):
    structure: HhmmStructure
    h0: np.ndarray
    levels: tuple

    def __post_init__(self):
        s = self.structure
        h0 = np.asarray(self.h0, dtype=float)
        if h0.shape != s.h0_shape():
            raise ConfigurationError(f"h0 has shape {h0.shape}, expected {s.h0_shape()}")
        check_distribution_rows("h0", h0)
        levels = tuple(np.asarray(t, dtype=float) for t in self.levels)
        if len(levels) != s.num_levels:
            raise ConfigurationError(f"{len(levels)} level tables for {s.num_levels} levels")
        for level, table in enumerate(levels, start=1):
            if table.shape != s.level_shape(level):
                raise ConfigurationError(f"h{level} has shape {table.shape}, expected {s.level_shape(level)}")
            check_distribution_rows(f"h{level}", table)
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "levels", levels)

    # Policy interface
    @property
    def num_actions(self):
        return self.structure.num_actions

    @property
    def num_observations(self):
        return self.structure.num_observations

    @property
    def memory_width(self):
        return self.structure.num_levels

    @property
    def uniforms_per_step(self):
        return self.structure.num_levels + 1

    @property
    def num_memory_states(self):
        return math.prod(self.structure.level_cardinalities)

    @cached_property
    def _cdfs(self):
        return cdf_table(self.h0), tuple(cdf_table(t) for t in self.levels)

    def table(self, level):
        return self.h0 if level == 0 else self.levels[level - 1]

    def step(self, memory, previous_observation, u):
        return _batched_step(self, memory, previous_observation, u)

    def step_distribution(self, memory, previous_observation):
        return _step_distribution(self, memory, previous_observation)

    def log_prob(self, episode):
        return policy_log_prob(self, episode)

    def equals(self, other):
        return (self.structure == other.structure and np.array_equal(self.h0, other.h0)
                and all(np.array_equal(a, b) for a, b in zip(self.levels, other.levels)))


def uniform_policy(structure):
    h0 = np.full(structure.h0_shape(), 1.0 / structure.num_actions)
    levels = tuple(np.full(structure.level_shape(l), 1.0 / structure.card(l))
                   for l in range(1, structure.num_levels + 1))
    return PolicyParams(structure, h0, levels)


def random_policy(structure, rng, concentration=1.0):
    """Rows drawn from a symmetric Dirichlet; handy for tests and experiments."""
    h0 = rng.dirichlet(np.full(structure.num_actions, concentration), size=structure.card(1))
    levels = []
    for l in range(1, structure.num_levels + 1):
        lag, upper, out = structure.level_shape(l)
        levels.append(rng.dirichlet(np.full(out, concentration), size=(lag, upper)))
    return PolicyParams(structure, _renormalize(h0), tuple(_renormalize(t) for t in levels))


def _renormalize(table):
    return table / table.sum(axis=-1, keepdims=True)


def _check_memory(structure, memory):
    memory = np.asarray(memory)
    for l, c in enumerate(structure.level_cardinalities):
        col = memory[..., l]
        if np.any(col < START) or np.any(col >= c):
            raise ConfigurationError(f"memory level {l + 1} out of range [0, {c})")


def _batched_step(params, memory, previous_observation, u):
    s = params.structure
    L = s.num_levels
    cdf0, cdfs = params._cdfs
    n = len(previous_observation)
    new = np.empty((n, L), dtype=np.int64)
    upper = np.zeros(n, dtype=np.int64)
    for level in range(L, 0, -1):
        lag = (previous_observation if level == 1 else memory[:, level - 2]) + 1
        new[:, level - 1] = draw(cdfs[level - 1][lag, upper], u[:, L - level])
        upper = new[:, level - 1]
    action = draw(cdf0[new[:, 0]], u[:, L])
    return new, action


def policy_step(params, memory, previous_observation, rng):
    """Sample ``(memory, action)`` for one turn; ``memory``/observation may be the start sentinel."""
    s = params.structure
    if memory is None or (np.ndim(memory) == 0 and memory == START):
        memory = np.full(s.num_levels, START)
    memory = np.asarray(memory, dtype=np.int64).reshape(1, s.num_levels)
    _check_memory(s, memory)
    if not START <= previous_observation < s.num_observations:
        raise ConfigurationError("previous observation out of range")
    u = rng.random((1, params.uniforms_per_step))
    new, action = _batched_step(params, memory, np.array([previous_observation]), u)
    return tuple(int(v) for v in new[0]), int(action[0])


def _step_distribution(params, memory, previous_observation):
    s = params.structure
    L = s.num_levels
    memory = np.asarray(memory).reshape(L)
    out = []

    def descend(level, upper, chosen, prob):
        if level == 0:
            m1 = chosen[-1]
            for x in np.flatnonzero(params.h0[m1]):
                out.append((tuple(reversed(chosen)), int(x), prob * params.h0[m1, x]))
            return
        lag = (previous_observation if level == 1 else int(memory[level - 2])) + 1
        row = params.levels[level - 1][lag, upper]
        for m in np.flatnonzero(row):
            descend(level - 1, int(m), chosen + [int(m)], prob * row[m])

    descend(L, 0, [], 1.0)
    return out


def _factor_indices(structure, memories, observations):
    """Index tuples into every table for a batch of trajectories shaped (N, T, ...)."""
    n, horizon, L = memories.shape
    prev_obs = np.concatenate([np.full((n, 1), START), observations[:, :-1]], axis=1)
    prev_mem = np.concatenate([np.full((n, 1, L), START), memories[:, :-1]], axis=1)
    idx = []
    for level in range(1, L + 1):
        lag = (prev_obs if level == 1 else prev_mem[:, :, level - 2]) + 1
        upper = memories[:, :, level] if level < L else np.zeros_like(lag)
        idx.append((lag, upper, memories[:, :, level - 1]))
    return idx


def _check_episodes(structure, batch):
    if batch.memories is None or batch.memories.ndim != 3 or batch.memories.shape[2] != structure.num_levels:
        raise ConfigurationError("episodes must carry one memory symbol per level and turn")
    if batch.memories.min(initial=0) < 0:
        raise ConfigurationError("episode memories contain sentinel values")
    _check_memory(structure, batch.memories)
    if batch.actions.min(initial=0) < 0 or batch.actions.max(initial=0) >= structure.num_actions:
        raise ConfigurationError("episode actions out of range")
    if batch.observations.min(initial=0) < 0 or batch.observations.max(initial=0) >= structure.num_observations:
        raise ConfigurationError("episode observations out of range")


def batch_log_prob(params, episodes):
    """``ln h(x, m | y)`` for each episode; ``-inf`` where a zero-probability factor occurs."""
    batch = as_batch(episodes)
    _check_episodes(params.structure, batch)
    mem = batch.memories
    with np.errstate(divide="ignore"):
        total = np.log(params.h0[mem[:, :, 0], batch.actions]).sum(axis=1)
        for level, (lag, upper, out) in enumerate(_factor_indices(params.structure, mem, batch.observations), 1):
            total += np.log(params.levels[level - 1][lag, upper, out]).sum(axis=1)
    return total


def policy_log_prob(params, episode):
    if episode.memories is None:
        raise ConfigurationError("episode carries no memories")
    return float(batch_log_prob(params, [episode])[0])


def _count_table(shape, index_arrays):
    flat = np.ravel_multi_index(tuple(np.ravel(a) for a in index_arrays), shape)
    return np.bincount(flat, minlength=math.prod(shape)).reshape(shape).astype(float)


def _normalize_counts(counts, smoothing, fallback):
    totals = counts.sum(axis=-1, keepdims=True)
    if smoothing > 0:
        return (counts + smoothing) / (totals + smoothing * counts.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = counts / totals
    return np.where(totals > 0, ratio, fallback)


def ml_update(structure, selected, smoothing=0.0, fallback=None):
    """Maximum-likelihood refit of every table to the selected episodes.

    Each row becomes ``(count + smoothing) / (total + smoothing * outcomes)``;
    with zero smoothing, rows that were never visited are copied from
    ``fallback`` (uniform when not given).
    """
    batch = as_batch(selected)
    if len(batch) == 0:
        raise ValueError("empty selection")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    _check_episodes(structure, batch)
    if fallback is None:
        fallback = uniform_policy(structure)
    elif fallback.structure != structure:
        raise ConfigurationError("fallback policy has a different structure")
    mem = batch.memories
    c0 = _count_table(structure.h0_shape(), (mem[:, :, 0], batch.actions))
    h0 = _normalize_counts(c0, smoothing, fallback.h0)
    levels = []
    for level, idx in enumerate(_factor_indices(structure, mem, batch.observations), 1):
        counts = _count_table(structure.level_shape(level), idx)
        levels.append(_normalize_counts(counts, smoothing, fallback.levels[level - 1]))
    return PolicyParams(structure, h0, tuple(levels))


# -- documents -----------------------------------------------------------------

def _axes(structure, level):
    if level == 0:
        return "action", [{"name": "m1", "size": structure.card(1), "sentinel": False}]
    lag, upper, _ = structure.level_shape(level)
    top = level == structure.num_levels
    return f"m{level}", [
        {"name": "y_prev" if level == 1 else f"m{level - 1}_prev", "size": lag, "sentinel": True},
        {"name": f"m{level + 1}", "size": upper, "sentinel": top},
    ]


def serialize(params):
    s = params.structure
    tables = []
    for level in range(s.num_levels + 1):
        table = params.table(level)
        outcome, axes = _axes(s, level)
        tables.append({
            "name": f"h{level}",
            "outcome": outcome,
            "conditioning": axes,
            "rows": table.reshape(-1, table.shape[-1]).tolist(),
        })
    return {
        "schema": POLICY_SCHEMA,
        "structure": {
            "level_cardinalities": list(s.level_cardinalities),
            "num_actions": s.num_actions,
            "num_observations": s.num_observations,
        },
        "tables": tables,
    }


def deserialize(doc):
    if not isinstance(doc, dict) or doc.get("schema") != POLICY_SCHEMA:
        raise DocumentError(f"expected schema {POLICY_SCHEMA!r}", "schema")
    try:
        sd = doc["structure"]
        structure = HhmmStructure(tuple(sd["level_cardinalities"]), int(sd["num_actions"]),
                                  int(sd["num_observations"]))
        tables = doc["tables"]
    except (KeyError, TypeError) as exc:
        raise DocumentError(f"malformed structure ({exc})", "structure") from None
    if len(tables) != structure.num_levels + 1:
        raise DocumentError(f"{len(tables)} tables for {structure.num_levels} levels", "tables")
    arrays = []
    for level, entry in enumerate(tables):
        name = f"h{level}"
        if entry.get("name") != name:
            raise DocumentError(f"expected table {name!r}, got {entry.get('name')!r}", f"tables[{level}]")
        shape = structure.h0_shape() if level == 0 else structure.level_shape(level)
        _, axes = _axes(structure, level)
        if [a["size"] for a in entry.get("conditioning", [])] != [a["size"] for a in axes]:
            raise DocumentError("conditioning axes do not match structure", name)
        try:
            rows = np.asarray(entry.get("rows"), dtype=float)
        except (TypeError, ValueError):
            raise DocumentError("rows are not a rectangular numeric array", name) from None
        if rows.shape != (math.prod(shape[:-1]), shape[-1]):
            raise DocumentError(f"rows have shape {rows.shape}, expected {(math.prod(shape[:-1]), shape[-1])}", name)
        if np.any(rows < 0) or np.any(rows > 1):
            raise DocumentError("probabilities outside [0, 1]", name)
        sums = rows.sum(axis=1)
        for r in np.flatnonzero(np.abs(sums - 1.0) > DOCUMENT_ROW_TOL):
            cell = np.unravel_index(r, shape[:-1])
            raise DocumentError(f"row {tuple(int(c) for c in cell)} sums to {sums[r]!r}", f"{name} row {r}")
        off = np.abs(sums - 1.0) > 1e-12
        rows[off] /= sums[off, None]
        arrays.append(rows.reshape(shape))
    return PolicyParams(structure, arrays[0], tuple(arrays[1:]))


def dumps_policy(params):
    return json.dumps(serialize(params), indent=1) + "\n"


def loads_policy(text):
    return deserialize(json.loads(text))


def save_policy(params, path):
    with open(path, "w") as fh:
        fh.write(dumps_policy(params))


def load_policy(path):
    with open(path) as fh:
        return loads_policy(fh.read())
