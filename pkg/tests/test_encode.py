import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qflow import encode
from qflow.encode import DegenerateBinWarning
from qflow.errors import ContractError, DataError


def test_increments_examples():
    assert encode.compute_increments(np.array([[[5, 7, 4]]])).tolist() == [[[2, -3]]]
    assert not encode.compute_increments(np.full((2, 1, 5), 3)).any()
    with pytest.raises(DataError):
        encode.compute_increments(np.zeros((1, 1, 1)))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_increments_round_trip(seed):
    c = np.random.default_rng(seed).integers(0, 50, size=(3, 2, 9))
    inc = encode.compute_increments(c)
    rebuilt = np.concatenate([c[:, :, :1], c[:, :, :1] + np.cumsum(inc, axis=2)], axis=2)
    assert np.array_equal(rebuilt, c)


def test_three_symbol_sequence():
    # a series whose equal-frequency thirds spell the classic SAX illustration
    series = [1.0, 2.0, 1.5, 5.0, 9.0, 8.0, 10.0, 9.5, 6.0, 5.5, 4.8, 2.2]
    assert "".join(encode.symbolize(series, 3)) == "aaabccccbbba"


def test_two_state_codebook_by_hand():
    inc = np.array([-2, -2, 3, 3], float).reshape(4, 1, 1)
    cb = encode.fit_codebook(inc, 2)
    b = cb.breakpoints[0, 0, 0]
    assert -2 < b < 3
    assert np.allclose(cb.representatives[0, 0], [-2, 3])
    assert cb.means[0, 0] == 0.5


def test_constant_values_degenerate():
    inc = np.full((5, 1, 1), 4.0)
    with pytest.warns(DegenerateBinWarning):
        cb = encode.fit_codebook(inc, 2)
    assert np.allclose(cb.representatives[0, 0], [4, 4])
    assert not encode.discretize(inc, cb).any()
    assert cb.degenerate[0, 0]


def test_codebook_needs_power_of_two():
    with pytest.raises(ContractError):
        encode.fit_codebook(np.zeros((4, 1, 1)), 3)


def test_breakpoints_ascending_and_reps_inside_bins():
    rng = np.random.default_rng(3)
    inc = rng.integers(-10, 11, size=(40, 2, 5)).astype(float)
    cb = encode.fit_codebook(inc, 4)
    assert np.all(np.diff(cb.breakpoints, axis=-1) > 0)
    states = encode.discretize(inc, cb)
    for d in range(2):
        for t in range(5):
            edges = np.concatenate([[-np.inf], cb.breakpoints[d, t], [np.inf]])
            for j in range(4):
                if np.any(states[:, d, t] == j):
                    assert edges[j] <= cb.representatives[d, t, j] < edges[j + 1]


@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=60, unique=True).filter(
    lambda v: len(v) % 2 == 0))
@settings(max_examples=50, deadline=None)
def test_equal_frequency_halves(values):
    cuts, deg = encode.equal_frequency_breakpoints(values, 2)
    low = np.sum(np.asarray(values) < cuts[0])
    assert not deg and abs(low - len(values) / 2) <= 1


def test_width_option():
    cuts, _ = encode.equal_width_breakpoints([0.0, 10.0], 4)
    assert np.allclose(cuts, [2.5, 5.0, 7.5])
    cb = encode.fit_codebook(np.array([0.0, 1.0, 10.0]).reshape(3, 1, 1), 2, method="width")
    assert np.allclose(cb.breakpoints[0, 0], [5.0])


def test_per_port_pooling_shares_breakpoints():
    inc = np.random.default_rng(0).normal(size=(10, 2, 4))
    cb = encode.fit_codebook(inc, 2, pooling="per-port")
    assert np.allclose(cb.breakpoints[:, :1], cb.breakpoints)


def test_discretize_boundaries():
    cb = encode.SaxCodebook(2, np.array([[[0.0]]]), np.array([[[-1.0, 1.0]]]),
                            np.array([[0.0]]), np.zeros((1, 1), bool))
    out = encode.discretize(np.array([-5.0, 0.0, 5.0]).reshape(3, 1, 1), cb)
    assert out.ravel().tolist() == [0, 1, 1]


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40))
@settings(max_examples=50, deadline=None)
def test_assign_states_linear_scan(values):
    bps = np.array([-10.0, 0.0, 12.5])
    scan = [sum(v >= b for b in bps) for v in values]
    assert encode.assign_states(np.array(values), bps).tolist() == scan


def test_transitions_single_day():
    tr = encode.build_transitions(np.array([[[0, 1, 1]]]), 2, smoothing=0.0)
    assert tr.probs[0, 1, 0, 1] == 1 and tr.probs[0, 2, 0, 1] == 1
    assert tr.empty_rows[0, 1, 1]
    assert np.allclose(tr.probs[0, 1, 1], [0.5, 0.5])


def test_transitions_two_days():
    tr = encode.build_transitions(np.array([[[0, 0]], [[0, 1]]]), 2)
    assert np.allclose(tr.probs[0, 1, 0], [0.5, 0.5])


def test_transitions_brute_force():
    rng = np.random.default_rng(2)
    states = rng.integers(0, 4, size=(30, 2, 6))
    tr = encode.build_transitions(states, 4)
    assert np.allclose(tr.probs.sum(axis=-1), 1, atol=1e-12)
    for d in range(2):
        for t in range(6):
            for i in range(4):
                for j in range(4):
                    n = sum(1 for k in range(30) if states[k, d, 0] == i and states[k, d, t] == j)
                    assert tr.counts[d, t, i, j] == n
                assert tr.counts[d, t, i].sum() == np.sum(states[:, d, 0] == i)


def _two_pass(x, y):
    mx, my = sum(x) / len(x), sum(y) / len(y)
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / (sxx * syy) ** 0.5


def test_correlations():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(10, 1, 3))
    cb = encode.fit_codebook(np.concatenate([a, a], axis=1), 2)
    assert np.allclose(encode.empirical_correlations(np.concatenate([a, a], 1), cb).rho[0, 1], 1)
    neg = np.concatenate([a, -(a - a.mean(axis=0))], axis=1)
    cb = encode.fit_codebook(neg, 2)
    assert np.allclose(encode.empirical_correlations(neg, cb).rho[0, 1], -1)
    inc = rng.normal(size=(10, 3, 4))
    cb = encode.fit_codebook(inc, 2)
    tab = encode.empirical_correlations(inc, cb)
    for t in range(4):
        assert abs(tab.rho[0, 2, t] - _two_pass(inc[:, 0, t], inc[:, 2, t])) < 1e-12
    assert np.all(np.abs(tab.rho) <= 1 + 1e-12)


def test_zero_variance_correlation_flagged():
    inc = np.zeros((4, 2, 1))
    inc[:, 1, 0] = [1, 2, 3, 4]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateBinWarning)
        cb = encode.fit_codebook(inc, 2)
    tab = encode.empirical_correlations(inc, cb)
    assert tab.rho[0, 1, 0] == 0 and not tab.defined[0, 1, 0]
    with pytest.raises(DataError):
        encode.empirical_correlations(inc[:1], cb)


def test_initial_distribution():
    s = np.zeros((5, 3, 2), int)
    assert encode.initial_state_distribution(s, 2)[0] == 1
    s = np.zeros((21, 2, 2), int)
    s[14:, 1, 0] = 1
    dist = encode.initial_state_distribution(s, 2)
    assert np.allclose(dist, [14 / 21, 7 / 21, 0, 0])
    rng = np.random.default_rng(0)
    s = rng.integers(0, 2, size=(50, 3, 2))
    dist = encode.initial_state_distribution(s, 2)
    for k in range(8):
        bits = [(k >> 2) & 1, (k >> 1) & 1, k & 1]
        assert dist[k] == np.mean([list(s[i, :, 0]) == bits for i in range(50)])


def test_codebook_dict_round_trip():
    cb = encode.fit_codebook(np.random.default_rng(1).normal(size=(8, 2, 3)), 2)
    back = encode.SaxCodebook.from_dict(cb.to_dict())
    assert np.array_equal(back.breakpoints, cb.breakpoints)
    assert np.array_equal(back.representatives, cb.representatives)
