import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cehhmm.errors import ConfigurationError, DocumentError, SizeCapExceeded
from cehhmm.hhmm import (BOOLEAN_RULES, COPY_FALSE, ID, PRODUCE, STATE_RULES, TRANSIT, BnColumn, BnRuleError,
                         HhmmLevel, HhmmSpec, bn_enumerate_sequences, bn_initial, bn_step, bn_step_branches,
                         check_rule_coverage, enumerate_sequences, example_spec, load_spec, random_spec,
                         sample_bn, sample_recursive, spec_from_document, spec_to_document,
                         termination_by_length)


def chain_spec(symbols):
    """Two levels: a deterministic chain that emits ``symbols`` in order, then ends."""
    n = len(symbols) + 1
    prod = np.zeros((n, max(symbols) + 1))
    trans = np.zeros((n, n))
    for q, s in enumerate(symbols):
        prod[q, s] = 1.0
        trans[q, q + 1] = 1.0
    init = np.zeros(n)
    init[0] = 1.0
    return HhmmSpec(max(symbols) + 1, (HhmmLevel(n, frozenset({n - 1}), prod, trans),), init)


def two_branch_spec():
    """Root produces child 0 or 1 with weights 0.3 / 0.7; child 0 emits "0", child 1 emits "1 1"."""
    child = HhmmLevel(4, frozenset({3}),
                      np.array([[1.0, 0], [0, 1.0], [0, 1.0], [0, 0]]),
                      np.array([[0, 0, 0, 1.0], [0, 0, 1.0, 0], [0, 0, 0, 1.0], [0, 0, 0, 0]]))
    root = HhmmLevel(2, frozenset({1}), np.array([[0.3, 0.7, 0, 0], [0, 0, 0, 0]]), np.array([[0, 1.0], [0, 0]]))
    return HhmmSpec(2, (child, root), np.array([1.0, 0.0]))


def test_single_step_root():
    spec = chain_spec([1])
    assert sample_recursive(spec, np.random.default_rng(0)).outputs == (1,)
    assert enumerate_sequences(spec, 5) == {(1,): 1.0}


def test_deterministic_chain_output():
    spec = chain_spec([0, 1, 1])
    res = sample_recursive(spec, np.random.default_rng(0))
    assert res.outputs == (0, 1, 1) and res.terminated and not res.truncated
    assert sample_bn(spec, np.random.default_rng(0)).outputs == (0, 1, 1)
    assert enumerate_sequences(spec, 5) == {(0, 1, 1): 1.0}
    assert bn_enumerate_sequences(spec, 5) == {(0, 1, 1): 1.0}


@pytest.mark.parametrize("enumerate_", [enumerate_sequences, bn_enumerate_sequences])
def test_two_branch_root(enumerate_):
    got = enumerate_(two_branch_spec(), 5)
    assert got.keys() == {(0,), (1, 1)}
    assert got[(0,)] == pytest.approx(0.3, abs=1e-15)
    assert got[(1, 1)] == pytest.approx(0.7, abs=1e-15)


def test_recursive_sampler_matches_enumeration():
    # oracle: chi-square against the exact enumeration
    spec = example_spec()
    exact = enumerate_sequences(spec, 12)
    n = 100_000
    rng = np.random.default_rng(0)
    counts = {}
    for _ in range(n):
        seq = sample_recursive(spec, rng, max_steps=12).outputs
        counts[seq] = counts.get(seq, 0) + 1
    assert set(counts) <= set(exact) | {s for s in counts if len(s) >= 12}
    keys = [s for s, p in exact.items() if n * p >= 5]
    obs = np.array([counts.get(s, 0) for s in keys] + [n - sum(counts.get(s, 0) for s in keys)])
    exp = np.array([n * exact[s] for s in keys] + [n * (1 - sum(exact[s] for s in keys))])
    chi2 = ((obs - exp) ** 2 / exp).sum()
    assert stats.chi2.sf(chi2, len(keys)) > 0.01


def test_bn_sampler_frequencies_match_enumeration():
    spec = example_spec()
    exact = enumerate_sequences(spec, 12)
    rng = np.random.default_rng(1)
    n = 20_000
    counts = {}
    for _ in range(n):
        seq = sample_bn(spec, rng, max_steps=12).outputs
        counts[seq] = counts.get(seq, 0) + 1
    for seq, p in exact.items():
        if n * p >= 50:
            assert abs(counts.get(seq, 0) / n - p) < 4 * np.sqrt(p * (1 - p) / n)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_semantics_agree_on_random_specs(seed):
    spec = random_spec(np.random.default_rng(seed))
    a = enumerate_sequences(spec, 5)
    b = bn_enumerate_sequences(spec, 5)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k] == pytest.approx(b[k], abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_missing_mass_equals_long_run_mass(seed):
    # oracle: complement: sum of enumerated probabilities equals P(end within max_len) from a length-only DP
    spec = random_spec(np.random.default_rng(seed))
    seqs = enumerate_sequences(spec, 5)
    by_length = termination_by_length(spec, 5)
    assert sum(seqs.values()) <= 1 + 1e-12
    assert sum(seqs.values()) == pytest.approx(by_length.sum(), abs=1e-12)
    for n in range(6):
        assert sum(p for s, p in seqs.items() if len(s) == n) == pytest.approx(by_length[n], abs=1e-12)


def test_state_rules_from_tables():
    # reference: child running -> id; child ended -> transit; this level ended -> production
    assert STATE_RULES[(True, False, False)] == ID
    assert STATE_RULES[(True, False, True)] == TRANSIT
    assert STATE_RULES[(True, True, False)] == PRODUCE
    # reference: a boolean above a FALSE boolean copies FALSE
    assert BOOLEAN_RULES[False] == COPY_FALSE


def test_first_column_produces_downward():
    spec = example_spec()
    col = bn_initial(spec, np.random.default_rng(0))
    assert col.states[1] == 0  # root starts in state 0
    assert col.states[0] in (0, 1)
    assert all(b is None for b in col.booleans)


def test_parent_holds_while_child_runs():
    spec = example_spec()
    for p, resolved, nxt in bn_step_branches(BnColumn((0, 0)), spec):
        if nxt is not None and resolved.booleans[0] is False:
            assert resolved.booleans[1] is False
            assert nxt.states[1] == 0
        if resolved.booleans[1]:
            assert resolved.booleans[0] and nxt is None
    assert sum(p for p, _, _ in bn_step_branches(BnColumn((0, 0)), spec)) == pytest.approx(1.0)


def test_true_boolean_records_an_ending_state():
    spec = example_spec()
    rng = np.random.default_rng(3)
    col = bn_initial(spec, rng)
    while col is not None:
        col, _, resolved = bn_step(col, spec, rng)
        for d, (b, e) in enumerate(zip(resolved.booleans, resolved.exits), start=2):
            assert (e in spec.level(d).ending) if b else e is None


def test_uncovered_pattern_is_refused(monkeypatch):
    monkeypatch.delitem(STATE_RULES, (False, False, True))
    with pytest.raises(BnRuleError, match="False, False, True"):
        check_rule_coverage(example_spec())


def test_non_terminating_spec_is_truncated():
    loop = HhmmLevel(1, frozenset(), np.array([[1.0]]), np.array([[1.0]]))
    spec = HhmmSpec(1, (loop,), np.array([1.0]))
    res = sample_recursive(spec, np.random.default_rng(0), max_steps=20)
    assert res.truncated and not res.terminated and len(res.outputs) == 20
    assert sample_bn(spec, np.random.default_rng(0), max_steps=20).truncated
    assert enumerate_sequences(spec, 6) == {}
    assert bn_enumerate_sequences(spec, 6) == {}


def test_enumeration_cap():
    with pytest.raises(SizeCapExceeded):
        enumerate_sequences(example_spec(), 40, cap=1000)
    with pytest.raises(SizeCapExceeded):
        bn_enumerate_sequences(example_spec(), 40, cap=1000)


def test_invalid_specs_rejected():
    good = example_spec()
    with pytest.raises(ConfigurationError, match="sum"):
        HhmmSpec(2, (HhmmLevel(2, frozenset({1}), np.array([[0.5, 0.6], [0, 0]]), np.array([[0, 1.0], [0, 0]])),),
                 np.array([1.0, 0]))
    with pytest.raises(ConfigurationError, match="ending"):
        HhmmSpec(2, good.levels, np.array([0.0, 0.0, 1.0]))
    bad_root = HhmmLevel(2, frozenset({1}), np.array([[0, 0, 1.0], [0, 0, 0]]), np.array([[0, 1.0], [0, 0]]))
    with pytest.raises(ConfigurationError, match="production into an ending state"):
        HhmmSpec(2, (good.levels[0], bad_root), np.array([1.0, 0]))
    with pytest.raises(ConfigurationError, match="shapes"):
        HhmmSpec(3, good.levels, good.initial)


def test_document_roundtrip(tmp_path):
    spec = random_spec(np.random.default_rng(7), num_levels=3)
    doc = spec_to_document(spec)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(doc))
    back = load_spec(path)
    assert enumerate_sequences(back, 5) == pytest.approx(enumerate_sequences(spec, 5))
    doc["levels"] = doc["levels"][:1] + [{"bogus": 1}]
    with pytest.raises(DocumentError):
        spec_from_document(doc)
