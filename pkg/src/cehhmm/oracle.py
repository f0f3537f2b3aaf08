"""Exact solvers for tiny instances: MDP backward recursion, POMDP belief
recursion with unnormalised beliefs, and brute-force decision-tree search.

All three break argmax ties toward the smallest action index; values within
``TIE_TOL`` (relative) of the maximum count as ties.
"""

import itertools
import math

import numpy as np

from .errors import ConfigurationError, SizeCapExceeded
from .pomdp import TerminalEvaluation

TIE_TOL = 1e-12
BELIEF_NODE_CAP = 10**6
TREE_CAP = 10**7


def tie_argmax(values):
    values = np.asarray(values, dtype=float)
    best = values.max()
    tol = TIE_TOL * max(1.0, abs(best))
    return int(np.flatnonzero(values >= best - tol)[0])


def _terminal_table(world):
    ev = world.evaluation
    if not isinstance(ev, TerminalEvaluation):
        raise ConfigurationError("this oracle needs a terminal evaluation")
    return ev.table


def is_fully_observed(world):
    return (world.num_observations == world.num_states
            and np.array_equal(world.observation, np.eye(world.num_states)))


def mdp_dp(world, horizon):
    """Backward recursion on the value-to-go of (action, state) pairs.

    The action at t is chosen knowing ``z_{t-1}`` (and ``x_{t-1}``), so the
    root maximises the expected value-to-go over the first action.
    Returns ``(value, first_action, W)`` with ``W[t]`` shaped (X, Z).
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if not is_fully_observed(world):
        raise ConfigurationError("mdp_dp needs a fully observed world (y = z)")
    table = _terminal_table(world)
    zs = np.arange(world.num_states)
    W = [None] * horizon
    W[-1] = table[:, zs, zs]
    for t in range(horizon - 2, -1, -1):
        # q[z, x, x'] = sum_z' p(z' | z, x) W_{t+1}(x', z'); x' is picked before z' is seen
        q = np.einsum("zxw,vw->zxv", world.transition, W[t + 1])
        W[t] = q.max(axis=2).T
    root = W[0] @ world.initial
    x1 = tie_argmax(root)
    return float(root[x1]), x1, W


def belief_tree_size(world, horizon):
    return (world.num_actions * world.num_observations) ** (horizon - 1)


def pomdp_belief_dp(world, horizon, cap=BELIEF_NODE_CAP):
    """Recursion over the finite tree of reachable unnormalised beliefs.

    ``beta(z') = sum_z b(z) p(y | z) p(z' | z, x)`` carries joint probability
    mass, so no normalisation is needed anywhere.  Returns ``(value, first_action)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    size = belief_tree_size(world, horizon)
    if size > cap:
        raise SizeCapExceeded("pomdp_belief_dp", size, cap)
    table = _terminal_table(world)
    obs = world.observation
    trans = world.transition
    # terminal[x, z] = sum_y p(y|z) value(x, y, z)
    terminal = np.einsum("zy,xyz->xz", obs, table)

    def W(b, t):
        if t == horizon - 1:
            return float((terminal @ b).max())
        best = -math.inf
        for x in range(world.num_actions):
            total = 0.0
            for y in range(world.num_observations):
                beta = (b * obs[:, y]) @ trans[:, x, :]
                total += W(beta, t + 1)
            best = max(best, total)
        return best

    b1 = world.initial
    if horizon == 1:
        root = terminal @ b1
    else:
        root = np.array([sum(W((b1 * obs[:, y]) @ trans[:, x, :], 1) for y in range(world.num_observations))
                         for x in range(world.num_actions)])
    x1 = tie_argmax(root)
    return float(root[x1]), x1


# -- decision trees ------------------------------------------------------------

def histories(num_observations, horizon):
    """Observation histories ``y_{1:t-1}`` for t = 1..T, in tree-node order."""
    out = []
    for t in range(horizon):
        out.extend(itertools.product(range(num_observations), repeat=t))
    return out


def tree_count(world, horizon):
    nodes = sum(world.num_observations ** t for t in range(horizon))
    return world.num_actions ** nodes


def evaluate_tree(world, tree, horizon):
    """Exact value of a deterministic decision tree ``{y_history: action}`` by forward enumeration."""
    ev = world.evaluation
    total = 0.0
    stack = [((), None, None, ev.start(), 1.0)]
    while stack:
        hist, z_prev, x_prev, acc, p = stack.pop()
        t = len(hist)
        if t == horizon:
            total += p * ev.result(acc)
            continue
        x = tree[hist]
        law = world.initial if t == 0 else world.transition[z_prev, x_prev]
        for z in np.flatnonzero(law):
            for y in np.flatnonzero(world.observation[z]):
                q = p * law[z] * world.observation[z, y]
                stack.append((hist + (int(y),), int(z), x, ev.update(acc, t, x, int(y), int(z)), q))
    return total


def brute_force_tree_search(world, horizon, cap=TREE_CAP, chunk=1 << 16):
    """Exact maximiser over every decision tree ``x_t(y_{1:t-1})``.

    Each full trajectory's weighted evaluation is tabulated once per
    observation path and action tuple; trees are then scored in vectorised
    chunks.  Trees are enumerated in lexicographic order with the root as the
    most significant digit, so the first maximiser has the smallest root action.
    Returns ``(tree, value)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    count = tree_count(world, horizon)
    if count > cap:
        raise SizeCapExceeded("brute_force_tree_search", count, cap)
    nodes = histories(world.num_observations, horizon)
    node_index = {h: k for k, h in enumerate(nodes)}
    ypaths = list(itertools.product(range(world.num_observations), repeat=horizon))
    path_nodes = np.array([[node_index[ys[:t]] for t in range(horizon)] for ys in ypaths])
    digits, value = _enumerate_rules(world, horizon, len(nodes), lambda t, prev: path_nodes[None, :, t], chunk)
    return {h: int(d) for h, d in zip(nodes, digits)}, value


def state_feedback_enumeration(world, horizon, cap=TREE_CAP, chunk=1 << 16):
    """Best rule ``x_1``, ``x_t = f_t(y_{t-1}, x_{t-1})`` by total enumeration.

    On a fully observed world the pair ``(z_{t-1}, x_{t-1})`` is everything the
    future depends on when x_t is picked, so these are the state-feedback
    policies.  Returns ``(rule, value)``: ``rule[0]`` is the first action and
    ``rule[1 + ((t - 1) * Y + y) * X + x]`` the action at turn t + 1 after
    observing y having played x.
    """
    nx, ny = world.num_actions, world.num_observations
    n_nodes = 1 + (horizon - 1) * ny * nx
    count = nx ** n_nodes
    if count > cap:
        raise SizeCapExceeded("state_feedback_enumeration", count, cap)
    ypaths = np.array(list(itertools.product(range(ny), repeat=horizon))).reshape(-1, horizon)

    def node_of(t, prev):
        if t == 0:
            return np.zeros((1, len(ypaths)), dtype=np.int64)
        return 1 + ((t - 1) * ny + ypaths[None, :, t - 1]) * nx + prev

    digits, value = _enumerate_rules(world, horizon, n_nodes, node_of, chunk)
    return [int(d) for d in digits], value


def _enumerate_rules(world, horizon, n_nodes, node_of, chunk):
    """Score every assignment of actions to decision nodes.

    ``node_of(t, prev_actions)`` gives the node consulted at turn t on each
    observation path, shaped (n, paths) or broadcastable to it.
    """
    nx, ny = world.num_actions, world.num_observations
    ev = world.evaluation
    ypaths = list(itertools.product(range(ny), repeat=horizon))
    xpaths = list(itertools.product(range(nx), repeat=horizon))
    # G[p, a] = sum_z P(y_path, z | x_path) V(x_path, y_path, z)
    G = np.array([[_path_value(world, ev, xs, ys) for xs in xpaths] for ys in ypaths])
    count = nx ** n_nodes
    rows = np.arange(len(ypaths))
    best_value, best_index = -math.inf, -1
    for start in range(0, count, chunk):
        idx = np.arange(start, min(count, start + chunk))
        digits = np.array(np.unravel_index(idx, (nx,) * n_nodes)).T  # (n, nodes)
        code = np.zeros((len(idx), len(ypaths)), dtype=np.int64)
        prev = code
        for t in range(horizon):
            node = np.broadcast_to(node_of(t, prev), code.shape)
            prev = np.take_along_axis(digits, node, axis=1)
            code = code * nx + prev
        values = G[rows, code].sum(axis=1)
        k = tie_argmax(values)
        if best_index < 0 or values[k] > best_value + TIE_TOL * max(1.0, abs(best_value)):
            best_value, best_index = float(values[k]), int(idx[k])
    return np.unravel_index(best_index, (nx,) * n_nodes), best_value


def _path_value(world, ev, xs, ys):
    total = 0.0
    stack = [(0, None, ev.start(), 1.0)]
    horizon = len(xs)
    while stack:
        t, z_prev, acc, p = stack.pop()
        if t == horizon:
            total += p * ev.result(acc)
            continue
        law = world.initial if t == 0 else world.transition[z_prev, xs[t - 1]]
        y = ys[t]
        for z in np.flatnonzero(law):
            q = p * law[z] * world.observation[z, y]
            if q > 0:
                stack.append((t + 1, int(z), ev.update(acc, t, xs[t], y, int(z)), q))
    return total


def open_loop_optimum(world, horizon):
    """Best fixed action sequence, by enumeration."""
    best = -math.inf
    for xs in itertools.product(range(world.num_actions), repeat=horizon):
        tree = {h: xs[len(h)] for h in histories(world.num_observations, horizon)}
        best = max(best, evaluate_tree(world, tree, horizon))
    return best
