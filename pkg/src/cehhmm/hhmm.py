"""Uncontrolled hierarchical HMMs: call/return interpreter and flattened BN.

Levels are numbered 1..D: level 1 is the output alphabet, level D the root.
Each level d >= 2 has states ``Q_d`` with ending states ``E_d``, a production
law ``prod[q, child]`` (into level d-1, or the output at d = 2) and a transit
law ``trans[q, q']``.  Ending states neither produce nor transit; their rows
are all zero.  Production never targets an ending state, so every sub-call
emits at least one output and one BN column carries exactly one output.

The BN column holds, per level d >= 2, a state cell and the boolean cell fed
by it.  A TRUE boolean at level d means that the level-d process has just
transited into an ending state (recorded in ``exits``).
"""

from dataclasses import dataclass
from functools import lru_cache
import json

import numpy as np

from .errors import ConfigurationError, DocumentError, SizeCapExceeded

HHMM_SCHEMA = "cehhmm.hhmm/1"
SEQUENCE_CAP = 10**6
ROW_TOL = 1e-12

# state-cell rules keyed by (state above at t+1?, upper boolean, lower boolean or None when absent)
ID, TRANSIT, PRODUCE = "id", "transit", "produce"
STATE_RULES = {
    (True, False, False): ID,          # child running
    (True, False, True): TRANSIT,      # child ended
    (True, True, False): PRODUCE,      # this level ended: parent produces afresh
    (True, True, True): PRODUCE,
    (False, False, False): ID,         # root, child running
    (False, False, True): TRANSIT,     # root, child ended
    (True, False, None): TRANSIT,      # bottom hidden level, not ended
    (True, True, None): PRODUCE,       # bottom hidden level, ended
    # Two-level model: the root is also the bottom level.  The state above only
    # feeds production, so with a FALSE upper boolean the bottom rule applies.
    (False, False, None): TRANSIT,
}
COPY_FALSE, TEST_END = "copy-false", "test-end"
BOOLEAN_RULES = {False: COPY_FALSE, True: TEST_END, None: TEST_END}


class BnRuleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class HhmmLevel:
    num_states: int
    ending: frozenset
    prod: np.ndarray
    trans: np.ndarray

    @property
    def running(self):
        return [q for q in range(self.num_states) if q not in self.ending]


@dataclass(frozen=True, eq=False)
class HhmmSpec:
    output_alphabet: int
    levels: tuple          # levels[0] is level 2, levels[-1] the root
    initial: np.ndarray    # law of the root's first state

    def __post_init__(self):
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))
        if not levels:
            raise ConfigurationError("need at least one hidden level")
        below = self.output_alphabet
        below_ending = frozenset()
        for d, lv in enumerate(levels, start=2):
            prod = np.asarray(lv.prod, dtype=float)
            trans = np.asarray(lv.trans, dtype=float)
            if prod.shape != (lv.num_states, below) or trans.shape != (lv.num_states, lv.num_states):
                raise ConfigurationError(f"level {d}: table shapes do not match cardinalities")
            if not lv.running:
                raise ConfigurationError(f"level {d}: every state is an ending state")
            for q in range(lv.num_states):
                want = 0.0 if q in lv.ending else 1.0
                for name, row in (("prod", prod[q]), ("trans", trans[q])):
                    if np.any(row < 0) or abs(row.sum() - want) > ROW_TOL:
                        raise ConfigurationError(f"level {d}: {name} row {q} must sum to {want}")
            if below_ending and prod[:, sorted(below_ending)].any():
                raise ConfigurationError(f"level {d}: production into an ending state of level {d - 1}")
            below, below_ending = lv.num_states, lv.ending
        init = self.initial
        if init.shape != (below,) or np.any(init < 0) or abs(init.sum() - 1) > ROW_TOL:
            raise ConfigurationError("initial law must be a distribution over root states")
        if init[sorted(below_ending)].any():
            raise ConfigurationError("initial law puts mass on an ending root state")
        check_rule_coverage(self)

    @property
    def num_levels(self):
        return len(self.levels) + 1

    def level(self, d):
        return self.levels[d - 2]


def reachable_patterns(spec):
    """State-cell configurations a spec with this depth can present."""
    D = spec.num_levels
    pats = set()
    for d in range(2, D + 1):
        above = d < D
        for upper in (False, True):
            if d == D and upper:
                continue  # the run ends instead
            for lower in ((False, True) if d > 2 else (None,)):
                pats.add((above, upper, lower))
    return pats


def check_rule_coverage(spec):
    missing = reachable_patterns(spec) - STATE_RULES.keys()
    if missing:
        raise BnRuleError(f"no transition rule for configurations {sorted(missing, key=str)}")


# -- recursive semantics ---------------------------------------------------------

class _Truncated(Exception):
    pass


@dataclass(frozen=True)
class SampleResult:
    outputs: tuple
    terminated: bool
    truncated: bool


def _pick(row, rng):
    return int(rng.choice(len(row), p=row))


def sample_recursive(spec, rng, max_steps=1000):
    """Run the call/return interpreter until the root ends or ``max_steps`` outputs were emitted."""
    out = []

    def run(d, q):
        lv = spec.level(d)
        while True:
            child = _pick(lv.prod[q], rng)
            if d == 2:
                if len(out) == max_steps:
                    raise _Truncated
                out.append(child)
            else:
                run(d - 1, child)
            q = _pick(lv.trans[q], rng)
            if q in lv.ending:
                return

    try:
        run(spec.num_levels, _pick(spec.initial, rng))
    except _Truncated:
        return SampleResult(tuple(out), False, True)
    return SampleResult(tuple(out), True, False)


def _check_cap(spec, max_len, cap):
    size = sum(spec.output_alphabet ** n for n in range(1, max_len + 1))
    if size > cap:
        raise SizeCapExceeded("sequence enumeration", size, cap)


def enumerate_sequences(spec, max_len, cap=SEQUENCE_CAP):
    """Exact probability of every terminating output sequence of length <= max_len (recursive semantics)."""
    _check_cap(spec, max_len, cap)

    @lru_cache(maxsize=None)
    def sub(d, q, budget):
        res = {}
        if budget <= 0:
            return res
        lv = spec.level(d)
        if d == 2:
            children = [((int(o),), lv.prod[q, o]) for o in np.flatnonzero(lv.prod[q])]
        else:
            children = []
            for c in np.flatnonzero(lv.prod[q]):
                children.extend((seq, lv.prod[q, c] * p) for seq, p in sub(d - 1, int(c), budget).items())
        for seq, p in children:
            for q2 in np.flatnonzero(lv.trans[q]):
                pt = p * lv.trans[q, q2]
                if q2 in lv.ending:
                    res[seq] = res.get(seq, 0.0) + pt
                else:
                    for rest, p2 in sub(d, int(q2), budget - len(seq)).items():
                        res[seq + rest] = res.get(seq + rest, 0.0) + pt * p2
        return res

    result = {}
    for q in np.flatnonzero(spec.initial):
        for seq, p in sub(spec.num_levels, int(q), max_len).items():
            result[seq] = result.get(seq, 0.0) + spec.initial[q] * p
    return result


def termination_by_length(spec, max_len):
    """``P(the run ends after exactly n outputs)`` for n = 0..max_len, from length recursions only."""
    L = max_len
    child = None  # child[c, n] for the level below
    for d in range(2, spec.num_levels + 1):
        lv = spec.level(d)
        nq = lv.num_states
        if d == 2:
            emit = np.zeros((nq, L + 1))
            emit[:, 1] = 1.0
        else:
            emit = lv.prod @ child
        end_p = lv.trans[:, sorted(lv.ending)].sum(axis=1) if lv.ending else np.zeros(nq)
        F = np.zeros((nq, L + 1))
        for n in range(1, L + 1):
            for k in range(1, n + 1):
                F[:, n] += emit[:, k] * ((end_p if k == n else 0.0) + lv.trans @ F[:, n - k])
        child = F
    return spec.initial @ child


# -- flattened BN --------------------------------------------------------------

@dataclass(frozen=True)
class BnColumn:
    states: tuple              # per level 2..D
    booleans: tuple = None     # per level 2..D: None (unspecified), False, True
    exits: tuple = None        # ending state reached where the boolean is TRUE
    output: int = None

    def __post_init__(self):
        n = len(self.states)
        if self.booleans is None:
            object.__setattr__(self, "booleans", (None,) * n)
        if self.exits is None:
            object.__setattr__(self, "exits", (None,) * n)


def _initial_branches(spec):
    """First column: the root draws from its initial law, every level below is produced."""
    D = spec.num_levels
    branches = [((int(q),), spec.initial[q]) for q in np.flatnonzero(spec.initial)]
    for d in range(D - 1, 1, -1):
        above = spec.level(d + 1)
        branches = [((int(c),) + states, p * above.prod[states[0], c])
                    for states, p in branches for c in np.flatnonzero(above.prod[states[0]])]
    return branches


def _boolean_branches(spec, states):
    """Resolve booleans bottom-up; yields (booleans, exits, probability)."""
    out = [((), (), 1.0)]
    for d in range(2, spec.num_levels + 1):
        lv = spec.level(d)
        q = states[d - 2]
        nxt = []
        for bools, exits, p in out:
            lower = bools[-1] if bools else None
            rule = BOOLEAN_RULES.get(lower)
            if rule == COPY_FALSE:
                nxt.append((bools + (False,), exits + (None,), p))
            elif rule == TEST_END:
                stay = 1.0
                for e in sorted(lv.ending):
                    if lv.trans[q, e] > 0:
                        nxt.append((bools + (True,), exits + (e,), p * lv.trans[q, e]))
                        stay -= lv.trans[q, e]
                if stay > ROW_TOL:
                    nxt.append((bools + (False,), exits + (None,), p * stay))
            else:
                raise BnRuleError(f"no boolean rule below-value {lower!r} at level {d}")
        out = nxt
    return out


def _state_branches(spec, states, bools):
    """Next column's states, top-down; yields (states, probability)."""
    D = spec.num_levels
    out = [((), 1.0)]  # built from the root downward
    for d in range(D, 1, -1):
        lv = spec.level(d)
        q = states[d - 2]
        pattern = (d < D, bools[d - 2], bools[d - 3] if d > 2 else None)
        rule = STATE_RULES.get(pattern)
        if rule is None:
            raise BnRuleError(f"no state rule for configuration {pattern} at level {d}")
        nxt = []
        for built, p in out:
            if rule == ID:
                nxt.append(((q,) + built, p))
            elif rule == TRANSIT:
                stay = 1.0 - sum(lv.trans[q, e] for e in lv.ending)
                for q2 in lv.running:
                    if lv.trans[q, q2] > 0:
                        nxt.append(((q2,) + built, p * lv.trans[q, q2] / stay))
            else:
                parent = spec.level(d + 1)
                above = built[0]
                for c in np.flatnonzero(parent.prod[above]):
                    nxt.append(((int(c),) + built, p * parent.prod[above, c]))
        out = nxt
    return out


def bn_step_branches(column, spec):
    """Every resolution of one column: ``(probability, resolved column, next column or None)``."""
    lv2 = spec.level(2)
    q2 = column.states[0]
    result = []
    for o in np.flatnonzero(lv2.prod[q2]):
        po = lv2.prod[q2, o]
        for bools, exits, pb in _boolean_branches(spec, column.states):
            resolved = BnColumn(column.states, bools, exits, int(o))
            for e, b, d in zip(exits, bools, range(2, spec.num_levels + 1)):
                if b and e not in spec.level(d).ending:
                    raise BnRuleError(f"TRUE boolean at level {d} without an ending state")
            if bools[-1]:
                result.append((po * pb, resolved, None))
                continue
            for states, ps in _state_branches(spec, column.states, bools):
                result.append((po * pb * ps, resolved, BnColumn(states)))
    return result


def bn_initial(spec, rng):
    branches = _initial_branches(spec)
    k = rng.choice(len(branches), p=np.array([p for _, p in branches]))
    return BnColumn(branches[k][0])


def bn_step(column, spec, rng):
    """Sample one column resolution; returns ``(next column or None, output, resolved column)``."""
    branches = bn_step_branches(column, spec)
    probs = np.array([p for p, _, _ in branches])
    k = rng.choice(len(branches), p=probs / probs.sum())
    _, resolved, nxt = branches[k]
    return nxt, resolved.output, resolved


def sample_bn(spec, rng, max_steps=1000):
    col = bn_initial(spec, rng)
    out = []
    while len(out) < max_steps:
        col, o, _ = bn_step(col, spec, rng)
        out.append(o)
        if col is None:
            return SampleResult(tuple(out), True, False)
    return SampleResult(tuple(out), False, True)


def bn_enumerate_sequences(spec, max_len, cap=SEQUENCE_CAP):
    """Same map as :func:`enumerate_sequences`, by exhaustive expansion of the BN columns."""
    _check_cap(spec, max_len, cap)
    frontier = {}
    for states, p in _initial_branches(spec):
        frontier[((), states)] = frontier.get(((), states), 0.0) + p
    result = {}
    while frontier:
        nxt = {}
        for (seq, states), p in frontier.items():
            for pb, resolved, col in bn_step_branches(BnColumn(states), spec):
                s2 = seq + (resolved.output,)
                if col is None:
                    result[s2] = result.get(s2, 0.0) + p * pb
                elif len(s2) < max_len:
                    key = (s2, col.states)
                    nxt[key] = nxt.get(key, 0.0) + p * pb
        frontier = nxt
    return result


# -- random specs and documents -----------------------------------------------

def random_spec(rng, num_levels=None, max_states=3, alphabet=None, root_may_not_end=True, sparsity=0.3):
    """Random small spec for tests: sparse Dirichlet rows, valid ending sets."""
    D = num_levels or int(rng.integers(2, 4))
    na = alphabet or int(rng.integers(1, max_states + 1))
    levels = []
    below, below_running = na, list(range(na))
    for d in range(2, D + 1):
        n = int(rng.integers(1, max_states + 1))
        is_root = d == D
        if n == 1:
            ending = frozenset()
        else:
            k = int(rng.integers(0 if (is_root and root_may_not_end) else 1, n))
            ending = frozenset(int(e) for e in rng.choice(n, size=k, replace=False))
        running = [q for q in range(n) if q not in ending]
        prod = np.zeros((n, below))
        trans = np.zeros((n, n))
        for q in running:
            prod[q, below_running] = _sparse_row(rng, len(below_running), sparsity)
            trans[q] = _sparse_row(rng, n, sparsity)
        levels.append(HhmmLevel(n, ending, prod, trans))
        below, below_running = n, running
    initial = np.zeros(below)
    initial[below_running] = _sparse_row(rng, len(below_running), sparsity)
    return HhmmSpec(na, tuple(levels), initial)


def example_spec():
    """Three levels, two output symbols; the root plays one or two sub-phrases."""
    phrase = HhmmLevel(
        num_states=3, ending=frozenset({2}),
        prod=np.array([[0.9, 0.1], [0.2, 0.8], [0.0, 0.0]]),
        trans=np.array([[0.0, 0.7, 0.3], [0.0, 0.4, 0.6], [0.0, 0.0, 0.0]]))
    root = HhmmLevel(
        num_states=3, ending=frozenset({2}),
        prod=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]),
        trans=np.array([[0.0, 0.5, 0.5], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]))
    return HhmmSpec(2, (phrase, root), np.array([1.0, 0.0, 0.0]))


def _sparse_row(rng, n, sparsity):
    w = rng.dirichlet(np.ones(n))
    keep = rng.random(n) >= sparsity
    keep[int(np.argmax(w))] = True
    w = np.where(keep, w, 0.0)
    return w / w.sum()


def spec_to_document(spec):
    return {
        "schema": HHMM_SCHEMA,
        "output_alphabet": spec.output_alphabet,
        "initial": spec.initial.tolist(),
        "levels": [{"num_states": lv.num_states, "ending": sorted(lv.ending),
                    "prod": lv.prod.tolist(), "trans": lv.trans.tolist()} for lv in spec.levels],
    }


def spec_from_document(doc):
    if doc.get("schema") != HHMM_SCHEMA:
        raise DocumentError(f"expected schema {HHMM_SCHEMA!r}", "schema")
    try:
        levels = tuple(HhmmLevel(int(lv["num_states"]), frozenset(int(e) for e in lv["ending"]),
                                 np.asarray(lv["prod"], dtype=float), np.asarray(lv["trans"], dtype=float))
                       for lv in doc["levels"])
        return HhmmSpec(int(doc["output_alphabet"]), levels, np.asarray(doc["initial"], dtype=float))
    except KeyError as exc:
        raise DocumentError("missing field", str(exc)) from None


def load_spec(path):
    with open(path) as fh:
        return spec_from_document(json.load(fh))
