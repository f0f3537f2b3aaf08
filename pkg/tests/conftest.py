import itertools

import numpy as np
import pytest

from cehhmm.pomdp import START, TerminalEvaluation, WorldModel

ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def two_state_world():
    """2 states, 2 actions, 2 noisy observations; terminal reward for being in state 1."""
    initial = np.array([0.6, 0.4])
    transition = np.array([[[0.9, 0.1], [0.2, 0.8]],
                           [[0.7, 0.3], [0.1, 0.9]]])
    observation = np.array([[0.8, 0.2], [0.25, 0.75]])
    table = np.zeros((2, 2, 2))
    table[:, :, 1] = 1.0
    table[1, :, 1] = 2.0
    return WorldModel(initial, transition, observation, TerminalEvaluation(table))


def trajectory_probability(world, params, xs, ys, zs):
    """Joint probability of (x, y, z) straight from the factor tables, memory summed by brute force."""
    s = params.structure
    L = s.num_levels
    p_world = world.initial[zs[0]] * world.observation[zs[0], ys[0]]
    for t in range(1, len(xs)):
        p_world *= world.transition[zs[t - 1], xs[t - 1], zs[t]] * world.observation[zs[t], ys[t]]
    total = 0.0
    per_turn = list(itertools.product(*[range(c) for c in s.level_cardinalities]))
    for path in itertools.product(per_turn, repeat=len(xs)):
        p = 1.0
        prev_m = (START,) * L
        prev_y = START
        for t, m in enumerate(path):
            p *= params.h0[m[0], xs[t]]
            for level in range(1, L + 1):
                lag = (prev_y if level == 1 else prev_m[level - 2]) + 1
                upper = m[level] if level < L else 0
                p *= params.levels[level - 1][lag, upper, m[level - 1]]
            prev_m, prev_y = m, ys[t]
        total += p
    return total * p_world
