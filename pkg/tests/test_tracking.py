from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cehhmm.ce import BlackBoxSource, GenerativeSource
from cehhmm.policy import HhmmStructure, random_policy, uniform_policy
from cehhmm.pomdp import sample_batch
from cehhmm.rng import episode_rngs
from cehhmm.tracking import (DOWN, FORWARD, LEFT, NO_MOVE, RIGHT, TURN_LEFT, TURN_RIGHT, UP, MobilePose,
                             NEIGHBORS, TrackingConfig, TrackingEnv, TrackingState, TrackingStepper, encounter_increment,
                             initial_state, joint_action, mobile_move, observe, parse_frame, render_frame,
                             split_action, target_step_distribution, target_weights, transition_rows)

cells = st.integers(0, 19)
poses = st.builds(MobilePose, cells, cells, st.integers(0, 3))
states = st.builds(TrackingState, st.tuples(cells, cells), poses, poses)


def state(target, b, c, hb=DOWN, hc=DOWN):
    return TrackingState(target, MobilePose(*b, hb), MobilePose(*c, hc))


@pytest.mark.parametrize("pose,move,expected", [
    ((5, 5, DOWN), TURN_LEFT, (5, 5, RIGHT)),
    ((5, 5, DOWN), TURN_RIGHT, (5, 5, LEFT)),
    ((5, 5, UP), TURN_RIGHT, (5, 5, RIGHT)),
    ((5, 5, UP), TURN_LEFT, (5, 5, LEFT)),
    ((0, 19, DOWN), FORWARD, (0, 19, DOWN)),
    ((7, 19, UP), FORWARD, (7, 18, UP)),
    ((7, 19, RIGHT), FORWARD, (8, 19, RIGHT)),
    ((0, 3, LEFT), FORWARD, (0, 3, LEFT)),
    ((4, 4, LEFT), NO_MOVE, (4, 4, LEFT)),
])
def test_mobile_move(pose, move, expected):
    assert mobile_move(MobilePose(*pose), move) == MobilePose(*expected)


@settings(max_examples=200)
@given(poses, st.integers(0, 3))
def test_moves_stay_on_grid(pose, move):
    p = mobile_move(pose, move)
    assert 0 <= p.i < 20 and 0 <= p.j < 20
    if move in (TURN_LEFT, TURN_RIGHT, NO_MOVE):
        assert (p.i, p.j) == (pose.i, pose.j)


def test_joint_action_roundtrip():
    assert sorted(joint_action(b, c) for b in range(4) for c in range(4)) == list(range(16))
    assert split_action(joint_action(2, 3)) == (2, 3)


def test_observation_bits():
    # reference: facing up, the forward bit says the target row is above the mobile row
    assert observe(state((3, 2), (5, 5), (19, 19), hb=UP), TrackingConfig()) & 1 == 1
    assert observe(state((3, 7), (5, 5), (19, 19), hb=UP), TrackingConfig()) & 1 == 0
    # near is strict: d = 2 counts, d = 3 does not
    assert observe(state((7, 7), (5, 5), (19, 19)), TrackingConfig()) >> 1 & 1 == 1
    assert observe(state((8, 5), (5, 5), (19, 19)), TrackingConfig()) >> 1 & 1 == 0
    # C bits sit in positions 2 and 3
    assert observe(state((18, 18), (0, 0), (19, 19), hb=UP, hc=LEFT), TrackingConfig()) == 0b1100


@settings(max_examples=100)
@given(states)
def test_case_two_masks_observations(s):
    assert observe(s, TrackingConfig(case=2)) == 0
    assert 0 <= observe(s, TrackingConfig(case=3)) < 16


def test_target_corner_support():
    assert set(target_step_distribution(state((0, 0), (10, 10), (19, 19)))) == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_target_zero_weight_stay():
    dist = target_step_distribution(state((5, 5), (5, 5), (5, 5)))
    assert dist[(5, 5)] == 0.0
    assert all(p > 0 for cell, p in dist.items() if cell != (5, 5))


def test_target_distribution_direct_formula():
    # oracle: direct evaluation of the squared-distance weights, normalised
    s = state((5, 5), (0, 0), (10, 10))
    expected = {}
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            i, j = 5 + di, 5 + dj
            expected[(i, j)] = i ** 2 + j ** 2 + (i - 10) ** 2 + (j - 10) ** 2
    total = sum(expected.values())
    dist = target_step_distribution(s)
    assert set(dist) == set(expected)
    for cell, w in expected.items():
        assert dist[cell] == pytest.approx(w / total, abs=1e-15)


@settings(max_examples=300)
@given(states)
def test_target_distribution_normalizes(s):
    dist = target_step_distribution(s)
    assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
    for (i, j), p in dist.items():
        assert max(abs(i - s.target[0]), abs(j - s.target[1])) <= 1
        assert 0 <= i < 20 and 0 <= j < 20 and p >= 0


def test_distant_mobile_hides_nearby_one():
    # moving the far mobile farther raises the escape weight relative to the approach weight
    near = (10, 12)
    base = target_step_distribution(state((10, 10), near, (10, 16)))
    farther = target_step_distribution(state((10, 10), near, (10, 19)))
    escape, approach = (10, 9), (10, 11)
    k = list(map(tuple, NEIGHBORS + 10)).index(escape)
    w_base = target_weights(state((10, 10), near, (10, 16)).as_row()[None])[0][0, k]
    w_far = target_weights(state((10, 10), near, (10, 19)).as_row()[None])[0][0, k]
    assert w_far > w_base
    # the near mobile's pull on the escape/approach ratio shrinks as the far one recedes
    ratio = lambda d: d[escape] / d[approach]
    solo = target_step_distribution(state((10, 10), near, near))
    assert abs(ratio(farther) - 1) < abs(ratio(base) - 1) < abs(ratio(solo) - 1)


def test_transition_target_sampling_matches_distribution():
    s = state((5, 5), (0, 0), (10, 10))
    row = np.repeat(s.as_row()[None], 200_000, axis=0)
    u = np.random.default_rng(0).random(len(row))
    nxt = transition_rows(row, np.full(len(row), joint_action(NO_MOVE, NO_MOVE)), u, TrackingConfig())
    dist = target_step_distribution(s)
    for (i, j), p in dist.items():
        freq = np.mean((nxt[:, 0] == i) & (nxt[:, 1] == j))
        assert abs(freq - p) < 4 * np.sqrt(p * (1 - p) / len(row))


@pytest.mark.parametrize("b,c,target,expected", [
    ((7, 13), (19, 0), (10, 10), 1),
    ((6, 14), (19, 0), (10, 10), 0),
    ((10, 10), (0, 0), (10, 10), 1),
    ((0, 0), (13, 7), (10, 10), 1),
])
def test_encounter_increment(b, c, target, expected):
    assert encounter_increment(state(target, b, c)) == expected


def test_initial_states():
    rng = np.random.default_rng(0)
    s1 = initial_state(TrackingConfig(case=1), rng)
    assert s1.target == (10, 10)
    assert s1.mobile_b == MobilePose(0, 19, DOWN) and s1.mobile_c == MobilePose(19, 19, DOWN)
    targets = [initial_state(TrackingConfig(case=3), rng).target for _ in range(2000)]
    assert all(0 <= j <= 9 and 0 <= i <= 19 for i, j in targets)
    assert len(set(targets)) > 150


# -- the fixed-target scenario -----------------------------------------------------

B_PLAN = [TURN_LEFT] + [FORWARD] * 7 + [TURN_LEFT] + [FORWARD] * 6          # 15 moves to (7, 13)
C_PLAN = [TURN_RIGHT] + [FORWARD] * 6 + [TURN_RIGHT] + [FORWARD] * 6         # 14 moves to (13, 13)


def replay(plan_b, plan_c, horizon=100):
    env = TrackingEnv(TrackingConfig(case=1, horizon=horizon))
    moves_b = plan_b + [NO_MOVE] * (horizon - len(plan_b))
    moves_c = plan_c + [NO_MOVE] * (horizon - len(plan_c))
    actions = np.array([[joint_action(b, c) for b, c in zip(moves_b, moves_c)]])
    s = env.sample_initial(np.zeros((1, 2)))
    rows = [s]
    for t in range(1, horizon):
        s = env.sample_transition(s, actions[:, t - 1], np.zeros((1, 2)))
        rows.append(s)
    states = np.stack(rows, axis=1)
    return float(env.score(actions, None, states)[0]), states[0]


def fewest_moves_to_encounter(start, target=(10, 10), radius=3):
    """Breadth-first search over one mobile's (i, j, heading)."""
    seen = {start: 0}
    queue = deque([start])
    while queue:
        pose = queue.popleft()
        if max(abs(pose.i - target[0]), abs(pose.j - target[1])) <= radius:
            return seen[pose]
        for move in range(4):
            nxt = mobile_move(pose, move)
            if nxt not in seen:
                seen[nxt] = seen[pose] + 1
                queue.append(nxt)
    raise AssertionError("unreachable")


def test_case_one_plan_of_mobile_b_scores_85():
    # reference: the 15-move plan scores 85
    score, states = replay(B_PLAN, [])
    assert tuple(states[15, 2:5]) == (7, 13, UP)
    assert score == 85


def test_case_one_true_optimum_is_86():
    # oracle: breadth-first search; mobile C needs only 14 moves, one fewer than B
    kb = fewest_moves_to_encounter(MobilePose(0, 19, DOWN))
    kc = fewest_moves_to_encounter(MobilePose(19, 19, DOWN))
    assert (kb, kc) == (15, 14)
    assert 100 - min(kb, kc) == 86
    score, _ = replay([], C_PLAN)
    assert score == 86


def test_render_and_parse_frame():
    s = initial_state(TrackingConfig(case=1), np.random.default_rng(0))
    text = render_frame(s)
    lines = text.splitlines()
    assert len(lines) == 21 and all(len(l) == 20 for l in lines[1:])
    assert lines[0].startswith("t=1 ")
    assert parse_frame(text) == {"target": (10, 10), "b": (0, 19), "c": (19, 19)}


def test_render_target_wins_overlap():
    s = state((3, 3), (3, 3), (19, 19))
    assert parse_frame(render_frame(s)) == {"target": (3, 3), "b": None, "c": (19, 19)}


@pytest.mark.parametrize("case", [1, 2, 3])
def test_black_box_stepper_matches_generative(case):
    cfg = TrackingConfig(case=case, horizon=30)
    pol = random_policy(HhmmStructure((3, 2), 16, 16), np.random.default_rng(case))
    gen = GenerativeSource(TrackingEnv(cfg)).sample(pol, 30, episode_rngs(case, 8))
    box = BlackBoxSource(lambda: TrackingStepper(cfg), 16, 16).sample(pol, 30, episode_rngs(case, 8))
    assert np.array_equal(gen.actions, box.actions)
    assert np.array_equal(gen.observations, box.observations)
    assert np.array_equal(gen.scores, box.scores)
    assert box.states is None


def test_scores_bounded_by_horizon():
    batch = sample_batch(TrackingEnv(TrackingConfig(case=3, horizon=40)), uniform_policy(HhmmStructure((2,), 16, 16)),
                         40, episode_rngs(0, 200))
    assert batch.scores.min() >= 0 and batch.scores.max() <= 40
    assert batch.states[:, :, [0, 2, 3, 5, 6]].max() < 20 and batch.states.min() >= 0
