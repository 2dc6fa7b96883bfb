import time
import numpy as np
import pytest

from qflow import qsim
from qflow.errors import ContractError, InvalidStateError, LayoutError
from qflow.qsim import AnsatzParams, CircuitLayout

from oracles import dense_u, dense_v, kron_all, ry_ref, rz_ref

def random_params(n_ports, n_anc, layers, seed, scale=np.pi):
    lay = CircuitLayout(n_ports, 2, n_anc)
    rng = np.random.default_rng(seed)
    return lay, AnsatzParams.random(lay, rng, layers, scale)


def random_state(dim, rng):
    s = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return s / np.linalg.norm(s)


def test_layout_counts():
    lay = CircuitLayout(3, 4, 2)
    assert lay.bits_per_port == 2 and lay.num_qubits == 8 and lay.joint_size == 64


@pytest.mark.parametrize("kw", [dict(num_ports=1, states_per_port=3),
                                dict(num_ports=11, states_per_port=4, num_ancilla=0),
                                dict(num_ports=0)])
def test_layout_rejects(kw):
    with pytest.raises(LayoutError):
        CircuitLayout(**kw)


def test_prepare_single_port():
    lay = CircuitLayout(1, 2, 0)
    assert np.allclose(qsim.prepare_from_state(lay, (0,)), [1, 0])
    assert np.allclose(qsim.prepare_from_state(lay, (1,)), [0, 1])


def test_prepare_three_ports_against_tensor_product():
    lay = CircuitLayout(3, 2, 2)
    e = [np.array([1, 0]), np.array([0, 1])]
    ref = kron_all([e[1], e[0], e[1], e[0], e[0]])
    s = qsim.prepare_from_state(lay, (1, 0, 1))
    assert np.flatnonzero(s)[0] == 0b10100
    assert np.allclose(s, ref)


def test_prepare_big_endian_within_port():
    lay = CircuitLayout(2, 4, 1)
    # port 0 = 2 -> bits 10, port 1 = 1 -> bits 01, ancilla 0
    assert np.flatnonzero(qsim.prepare_from_state(lay, (2, 1)))[0] == 0b10010


def test_prepare_rejects_out_of_range():
    with pytest.raises(InvalidStateError):
        qsim.prepare_from_state(CircuitLayout(2, 2, 0), (0, 2))


def test_param_shapes_validated():
    with pytest.raises(LayoutError):
        AnsatzParams(np.zeros((1, 3, 2)), np.zeros(3))
    with pytest.raises(LayoutError):
        AnsatzParams(np.zeros((1, 3, 3)), np.zeros(2))
    with pytest.raises(ContractError):
        AnsatzParams(np.full((1, 3, 3), np.nan), np.zeros(3))
    p = AnsatzParams(np.zeros((2, 4, 3)), np.zeros(4))
    assert p.size == 2 * 4 * 3 + 4
    assert p.entangle == ("ring", "distance-2")


def test_euler_stack_matches_products():
    rng = np.random.default_rng(1)
    angles = rng.uniform(-4, 4, size=(5, 3))
    for a, m in zip(angles, qsim.euler_stack(angles)):
        assert np.allclose(m, rz_ref(a[2]) @ ry_ref(a[1]) @ rz_ref(a[0]), atol=1e-14)


def test_cnot_patterns():
    assert qsim.cnot_pairs("ring", 2) == [(0, 1)]
    assert qsim.cnot_pairs("ring", 3) == [(0, 1), (1, 2), (2, 0)]
    assert qsim.cnot_pairs("distance-2", 4) == [(0, 2), (1, 3), (2, 0), (3, 1)]
    assert qsim.cnot_pairs("distance-2", 2) == []


@pytest.mark.parametrize("n_ports,n_anc,layers", [(1, 2, 1), (3, 0, 2), (2, 2, 3), (3, 2, 2)])
def test_evolve_matches_dense_oracle(n_ports, n_anc, layers):
    lay, p = random_params(n_ports, n_anc, layers, seed=n_ports * 10 + layers)
    rng = np.random.default_rng(5)
    s = random_state(lay.dim, rng)
    for t in (0.0, 1.7, 6.0):
        assert np.max(np.abs(qsim.evolve(s, p, t) - dense_u(p, t) @ s)) < 1e-10


def test_basis_change_is_dense_v():
    _, p = random_params(2, 1, 2, seed=4)
    assert np.allclose(qsim.basis_change(p), dense_v(p), atol=1e-12)


def test_identity_at_zero_time():
    lay, p = random_params(2, 2, 2, seed=9)
    s = random_state(lay.dim, np.random.default_rng(0))
    assert np.max(np.abs(qsim.evolve(s, p, 0.0) - s)) < 1e-12


def test_unitarity_and_adjoint():
    lay, p = random_params(2, 2, 2, seed=2)
    s = random_state(lay.dim, np.random.default_rng(3))
    out = qsim.evolve(s, p, 3.3)
    assert abs(np.linalg.norm(out) - 1) < 1e-10
    assert np.max(np.abs(qsim.evolve_adjoint(out, p, 3.3) - s)) < 1e-10


def test_semigroup():
    lay, p = random_params(1, 2, 2, seed=6)
    s = random_state(lay.dim, np.random.default_rng(1))
    a = qsim.evolve(s, p, 2.5)
    b = qsim.evolve(qsim.evolve(s, p, 1.0), p, 1.5)
    assert np.max(np.abs(a - b)) < 1e-10


def test_diagonal_only_keeps_basis_probabilities():
    lay = CircuitLayout(2, 2, 1)
    rng = np.random.default_rng(0)
    p = AnsatzParams(np.zeros((2, lay.num_qubits, 3)), rng.uniform(-3, 3, lay.num_qubits))
    for k in range(lay.dim):
        s = np.zeros(lay.dim, complex)
        s[k] = 1
        assert np.allclose(np.abs(qsim.evolve(s, p, 4.2)) ** 2, np.abs(s) ** 2, atol=1e-12)


def test_evolve_errors():
    lay, p = random_params(1, 1, 1, seed=0)
    with pytest.raises(LayoutError):
        qsim.evolve(np.ones(8) / np.sqrt(8), p, 1.0)
    with pytest.raises(ContractError):
        qsim.evolve(qsim.prepare_from_state(lay, (0,)), p, -1.0)


def test_joint_distribution_point_mass_at_zero():
    lay, p = random_params(3, 2, 2, seed=8)
    dist = qsim.joint_outcome_distribution(p, lay, (1, 0, 1), 0.0)
    ref = np.zeros((2, 2, 2))
    ref[1, 0, 1] = 1
    assert np.allclose(dist, ref, atol=1e-12)


def test_joint_distribution_traces_ancilla():
    lay, p = random_params(1, 1, 2, seed=12)
    s0 = np.zeros(4, complex)
    s0[0b10] = 1  # port state 1, ancilla 0
    amps = dense_u(p, 2.2) @ s0
    ref = [abs(amps[0b00]) ** 2 + abs(amps[0b01]) ** 2, abs(amps[0b10]) ** 2 + abs(amps[0b11]) ** 2]
    dist = qsim.joint_outcome_distribution(p, lay, (1,), 2.2)
    assert np.allclose(dist, ref, atol=1e-12)
    assert abs(dist.sum() - 1) < 1e-10


def test_three_port_marginal_against_reduction():
    lay, p = random_params(3, 1, 2, seed=13)
    dist = qsim.joint_outcome_distribution(p, lay, (0, 1, 1), 1.3)
    amps = dense_u(p, 1.3) @ qsim.prepare_from_state(lay, (0, 1, 1))
    probs = np.abs(amps) ** 2
    for d in range(3):
        # bit of qubit d in a 4-qubit big-endian index
        ref = [probs[[k for k in range(16) if (k >> (3 - d)) & 1 == b]].sum() for b in (0, 1)]
        assert np.allclose(qsim.port_marginal(dist, d), ref, atol=1e-12)


def test_transition_tables_agree_with_single_evaluations():
    lay, p = random_params(2, 1, 2, seed=21)
    tabs = qsim.transition_tables(p, lay, range(lay.joint_size), [1, 4])
    for ti, t in enumerate([1, 4]):
        for f in range(lay.joint_size):
            ref = qsim.joint_outcome_distribution(p, lay, lay.joint_state(f), t).ravel()
            assert np.allclose(tabs[ti, f], ref, atol=1e-12)


def test_port_marginal_examples():
    assert np.allclose(qsim.port_marginal(np.full((2, 2), 0.25), 0), [0.5, 0.5])
    pm = np.zeros((2, 2))
    pm[1, 0] = 1
    assert np.allclose(qsim.port_marginal(pm, 0), [0, 1])
    rng = np.random.default_rng(0)
    dist = rng.random((2, 4, 2))
    dist /= dist.sum()
    brute = np.zeros(4)
    for i in range(2):
        for j in range(4):
            for k in range(2):
                brute[j] += dist[i, j, k]
    assert np.allclose(qsim.port_marginal(dist, 1), brute, atol=1e-12)
    with pytest.raises(InvalidStateError):
        qsim.port_marginal(dist, 3)


def test_pair_marginal_orientation():
    rng = np.random.default_rng(1)
    dist = rng.random((2, 2, 2))
    dist /= dist.sum()
    assert np.allclose(qsim.pair_marginal(dist, 2, 0), dist.sum(axis=1).T)


def test_sample_outcomes():
    rng = np.random.default_rng(0)
    pm = np.array([0.0, 1.0, 0.0])
    assert list(qsim.sample_outcomes(pm, 100, rng)) == [0, 100, 0]
    c = qsim.sample_outcomes(np.array([0.5, 0.5]), 100_000, np.random.default_rng(7))
    assert c.sum() == 100_000 and abs(c[0] - 50_000) <= 5 * np.sqrt(100_000 * 0.25)
    a = qsim.sample_outcomes(np.array([0.2, 0.8]), 50, np.random.default_rng(4))
    b = qsim.sample_outcomes(np.array([0.2, 0.8]), 50, np.random.default_rng(4))
    assert np.array_equal(a, b)
    with pytest.raises(ContractError):
        qsim.sample_outcomes(np.array([0.5, 0.6]), 10, rng)
    with pytest.raises(ContractError):
        qsim.sample_outcomes(np.array([0.5, 0.5]), 0, rng)


def test_runtime_budget():
    lay, p = random_params(3, 2, 2, seed=1)
    s = qsim.prepare_from_state(lay, (0, 1, 0))
    t0 = time.perf_counter()
    for k in range(1000):
        qsim.evolve(s, p, k % 16)
    assert time.perf_counter() - t0 < 1.0
