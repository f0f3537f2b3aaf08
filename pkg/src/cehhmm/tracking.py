"""Two mobiles tracking a stochastic target on a 20x20 lattice.

Coordinates are ``(i, j)`` with ``i`` the column and ``j`` the row; ``j``
grows downward, so the mobiles start in the bottom corners (``j = 19``)
facing down, i.e. toward the wall.

One turn, from state ``z_t`` and joint action ``x_t``:

1. each mobile applies its move (turn left, turn right, forward, no move);
2. the target draws its next cell using the mobiles' positions at time t;
3. the encounter count is updated on the new state;
4. the next observation is read off the new state.

With ``z_1`` the initial state, the count runs over t = 1..T, so the
final action never matters and a mobile arriving after k moves scores
``T - k`` points.

The state of a batch is an int array with columns
``[iR, jR, iB, jB, hB, iC, jC, hC]``; headings are 0=up, 1=right, 2=down, 3=left.
"""

from dataclasses import dataclass

import numpy as np

from .pomdp import World

UP, RIGHT, DOWN, LEFT = range(4)
HEADINGS = ("up", "right", "down", "left")
TURN_LEFT, TURN_RIGHT, FORWARD, NO_MOVE = range(4)
MOVES = ("turn-left", "turn-right", "forward", "no-move")

# forward step per heading, (di, dj)
STEP = np.array([[0, -1], [1, 0], [0, 1], [-1, 0]])
NEIGHBORS = np.array([(di, dj) for dj in (-1, 0, 1) for di in (-1, 0, 1)])

TARGET, GLYPH_B, GLYPH_C, EMPTY = "×", "•", "○", "."

NUM_ACTIONS = 16
NUM_OBSERVATIONS = 16


@dataclass(frozen=True)
class MobilePose:
    i: int
    j: int
    heading: int


@dataclass(frozen=True)
class TrackingState:
    target: tuple
    mobile_b: MobilePose
    mobile_c: MobilePose
    turn: int = 1

    def as_row(self):
        b, c = self.mobile_b, self.mobile_c
        return np.array([self.target[0], self.target[1], b.i, b.j, b.heading, c.i, c.j, c.heading])

    @classmethod
    def from_row(cls, row, turn=1):
        row = [int(v) for v in row]
        return cls((row[0], row[1]), MobilePose(*row[2:5]), MobilePose(*row[5:8]), turn)


@dataclass(frozen=True)
class TrackingConfig:
    case: int = 3
    horizon: int = 100
    proximity_radius: int = 3
    grid: int = 20

    def __post_init__(self):
        if self.case not in (1, 2, 3):
            raise ValueError(f"unknown case {self.case}")


def joint_action(move_b, move_c):
    """Joint action index; mobile B is the minor digit."""
    return move_b + 4 * move_c


def split_action(action):
    return action % 4, action // 4


def chebyshev(i1, j1, i2, j2):
    return np.maximum(np.abs(i1 - i2), np.abs(j1 - j2))


def _move(i, j, h, move, grid):
    h = np.where(move == TURN_LEFT, (h - 1) % 4, np.where(move == TURN_RIGHT, (h + 1) % 4, h))
    fwd = move == FORWARD
    ni = i + np.where(fwd, STEP[h, 0], 0)
    nj = j + np.where(fwd, STEP[h, 1], 0)
    inside = (ni >= 0) & (ni < grid) & (nj >= 0) & (nj < grid)
    return np.where(inside, ni, i), np.where(inside, nj, j), h


def mobile_move(pose, move, grid=20):
    i, j, h = _move(np.array(pose.i), np.array(pose.j), np.array(pose.heading), np.array(move), grid)
    return MobilePose(int(i), int(j), int(h))


def _forward_bit(i, j, h, ir, jr):
    return np.select([h == UP, h == RIGHT, h == DOWN], [jr < j, ir > i, jr > j], ir < i)


def observe_rows(states, config):
    s = states
    if config.case == 2:
        return np.zeros(len(s), dtype=np.int64)
    r = config.proximity_radius
    fb = _forward_bit(s[:, 2], s[:, 3], s[:, 4], s[:, 0], s[:, 1])
    nb = chebyshev(s[:, 2], s[:, 3], s[:, 0], s[:, 1]) < r
    fc = _forward_bit(s[:, 5], s[:, 6], s[:, 7], s[:, 0], s[:, 1])
    nc = chebyshev(s[:, 5], s[:, 6], s[:, 0], s[:, 1]) < r
    return (fb.astype(np.int64) | nb << 1 | fc << 2 | nc << 3).astype(np.int64)


def observe(state, config):
    """Observation code: bit0 B-forward, bit1 B-near, bit2 C-forward, bit3 C-near."""
    return int(observe_rows(state.as_row()[None], config)[0])


def target_weights(states, grid=20):
    """Unnormalised weights of the 9 neighbour cells (``NEIGHBORS`` order), 0 off-grid."""
    s = states
    ci = s[:, 0, None] + NEIGHBORS[None, :, 0]
    cj = s[:, 1, None] + NEIGHBORS[None, :, 1]
    w = ((ci - s[:, 2, None]) ** 2 + (cj - s[:, 3, None]) ** 2
         + (ci - s[:, 5, None]) ** 2 + (cj - s[:, 6, None]) ** 2).astype(float)
    inside = (ci >= 0) & (ci < grid) & (cj >= 0) & (cj < grid)
    w = np.where(inside, w, 0.0)
    dead = w.sum(axis=1) == 0
    if np.any(dead):
        w[dead] = inside[dead].astype(float)
    return w, ci, cj


def target_step_distribution(state, grid=20):
    """Law of the target's next cell as ``{(i, j): probability}``."""
    w, ci, cj = target_weights(state.as_row()[None], grid)
    w = w[0] / w[0].sum()
    return {(int(a), int(b)): float(p) for a, b, p in zip(ci[0], cj[0], w)
            if 0 <= a < grid and 0 <= b < grid}


def encounter_rows(states, radius=3):
    d_b = chebyshev(states[..., 2], states[..., 3], states[..., 0], states[..., 1])
    d_c = chebyshev(states[..., 5], states[..., 6], states[..., 0], states[..., 1])
    return (np.minimum(d_b, d_c) <= radius).astype(np.int64)


def encounter_increment(state, radius=3):
    return int(encounter_rows(state.as_row(), radius))


def initial_rows(u, config):
    n = len(u)
    g = config.grid
    rows = np.empty((n, 8), dtype=np.int64)
    if config.case == 1:
        rows[:, 0] = rows[:, 1] = g // 2
    else:
        cell = np.minimum((u * (g * (g // 2))).astype(np.int64), g * (g // 2) - 1)
        rows[:, 0] = cell % g
        rows[:, 1] = cell // g
    rows[:, 2:5] = (0, g - 1, DOWN)
    rows[:, 5:8] = (g - 1, g - 1, DOWN)
    return rows


def initial_state(config, rng):
    return TrackingState.from_row(initial_rows(rng.random(1), config)[0])


def transition_rows(states, actions, u, config):
    g = config.grid
    mb, mc = split_action(np.asarray(actions))
    nxt = np.empty_like(states)
    nxt[:, 2], nxt[:, 3], nxt[:, 4] = _move(states[:, 2], states[:, 3], states[:, 4], mb, g)
    nxt[:, 5], nxt[:, 6], nxt[:, 7] = _move(states[:, 5], states[:, 6], states[:, 7], mc, g)
    if config.case == 1:
        nxt[:, :2] = states[:, :2]
        return nxt
    w, ci, cj = target_weights(states, g)
    cdf = np.cumsum(w, axis=1)
    cdf /= cdf[:, -1:]
    k = np.sum(u[:, None] >= cdf, axis=1)
    rows = np.arange(len(states))
    nxt[:, 0] = ci[rows, k]
    nxt[:, 1] = cj[rows, k]
    return nxt


class TrackingEnv(World):
    """Generative form of the benchmark, batched over episodes."""

    num_actions = NUM_ACTIONS
    num_observations = NUM_OBSERVATIONS

    def __init__(self, config=None):
        self.config = config or TrackingConfig()

    @property
    def horizon(self):
        return self.config.horizon

    def sample_initial(self, u):
        return initial_rows(u[:, 0], self.config)

    def sample_transition(self, states, actions, u):
        return transition_rows(states, actions, u[:, 0], self.config)

    def sample_observation(self, states, u):
        return observe_rows(states, self.config)

    def score(self, actions, observations, states):
        return encounter_rows(states, self.config.proximity_radius).sum(axis=1).astype(float)


class TrackingStepper:
    """Black-box episode: hides the state, returns observations and the final count.

    ``step(x_t)`` returns ``y_t`` (read from the current state) and then
    applies ``x_t``.  The stepper consumes its stream exactly like
    :class:`TrackingEnv` does inside the generative sampler.
    """

    uniforms_per_step = 2

    def __init__(self, config=None):
        self.config = config or TrackingConfig()

    def reset(self, rng, horizon):
        self._u = rng.random((horizon, self.uniforms_per_step))
        self._t = 0
        self._state = initial_rows(self._u[:1, 0], self.config)
        self._count = 0

    def step(self, action):
        y = int(observe_rows(self._state, self.config)[0])
        self._count += int(encounter_rows(self._state[0], self.config.proximity_radius))
        self._t += 1
        if self._t < len(self._u):
            self._state = transition_rows(self._state, np.array([action]), self._u[self._t:self._t + 1, 0],
                                          self.config)
        return y

    def score(self):
        return float(self._count)


# -- rendering -------------------------------------------------------------------

def render_frame(state, grid=20):
    """Text frame: a header line then ``grid`` rows; the target glyph wins overlaps, then B, then C."""
    cells = [[EMPTY] * grid for _ in range(grid)]
    c, b = state.mobile_c, state.mobile_b
    cells[c.j][c.i] = GLYPH_C
    cells[b.j][b.i] = GLYPH_B
    cells[state.target[1]][state.target[0]] = TARGET
    header = (f"t={state.turn} B=({b.i},{b.j},{HEADINGS[b.heading]}) "
              f"C=({c.i},{c.j},{HEADINGS[c.heading]}) R=({state.target[0]},{state.target[1]})")
    return "\n".join([header] + ["".join(row) for row in cells])


def parse_frame(text):
    """Glyph positions recovered from the grid part of a frame (overlapped glyphs are absent)."""
    found = {}
    lines = text.splitlines()[1:]
    for j, line in enumerate(lines):
        for i, ch in enumerate(line):
            if ch in (TARGET, GLYPH_B, GLYPH_C):
                found[ch] = (i, j)
    return {"target": found.get(TARGET), "b": found.get(GLYPH_B), "c": found.get(GLYPH_C)}


def trajectory_rows(episode, radius=3):
    """CSV rows ``t, iR, jR, iB, jB, hB, iC, jC, hC, action, observation, V`` for one episode."""
    states = np.asarray(episode.states)
    counts = np.cumsum(encounter_rows(states, radius))
    rows = []
    for t in range(len(states)):
        rows.append([t + 1, *[int(v) for v in states[t]], int(episode.actions[t]),
                     int(episode.observations[t]), int(counts[t])])
    return rows


TRAJECTORY_HEADER = ["t", "target_i", "target_j", "b_i", "b_j", "b_heading", "c_i", "c_j", "c_heading",
                     "action", "observation", "score"]
