"""
Exact statevector simulation of the time-evolution circuit.

Qubit order is port-major: the log2(N) target qubits of port 0 come first,
then port 1, ..., and the ancillas last. Basis indices are big-endian, so
qubit 0 is the most significant bit.

The evolution operator is U(theta, t) = V(theta1) D(theta2 * t) V(theta1)^dagger
where V is a stack of layers (an RZ-RY-RZ rotation on every qubit followed by
a CNOT pattern) and D is an RZ(theta2_k * t) on every qubit k.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ContractError, InvalidStateError, LayoutError

MAX_QUBITS = 20
ENTANGLE_PATTERNS = ("ring", "distance-2")

JointState = tuple


@dataclass(frozen=True)
class CircuitLayout:
    num_ports: int
    states_per_port: int = 2
    num_ancilla: int = 2

    def __post_init__(self):
        n = self.states_per_port
        if self.num_ports < 1:
            raise LayoutError("num_ports must be >= 1")
        if n < 2 or n & (n - 1):
            raise LayoutError(f"states_per_port must be a power of 2, got {n}")
        if not 0 <= self.num_ancilla:
            raise LayoutError("num_ancilla must be >= 0")
        if self.num_qubits > MAX_QUBITS:
            raise LayoutError(f"{self.num_qubits} qubits exceeds the simulator bound of {MAX_QUBITS}")

    @property
    def bits_per_port(self) -> int:
        return self.states_per_port.bit_length() - 1

    @property
    def num_targets(self) -> int:
        return self.num_ports * self.bits_per_port

    @property
    def num_qubits(self) -> int:
        return self.num_targets + self.num_ancilla

    @property
    def dim(self) -> int:
        return 1 << self.num_qubits

    @property
    def joint_size(self) -> int:
        return self.states_per_port ** self.num_ports

    @property
    def joint_shape(self) -> tuple:
        return (self.states_per_port,) * self.num_ports

    def joint_index(self, state: Sequence[int]) -> int:
        """Flat index of a joint state (port 0 most significant)."""
        state = tuple(int(s) for s in state)
        if len(state) != self.num_ports:
            raise InvalidStateError(f"expected {self.num_ports} port states, got {len(state)}")
        idx = 0
        for s in state:
            if not 0 <= s < self.states_per_port:
                raise InvalidStateError(f"port state {s} outside [0, {self.states_per_port})")
            idx = idx * self.states_per_port + s
        return idx

    def joint_state(self, index: int) -> JointState:
        return tuple(int(v) for v in np.unravel_index(index, self.joint_shape))

    def basis_index(self, state: Sequence[int]) -> int:
        return self.joint_index(state) << self.num_ancilla

    def to_dict(self) -> dict:
        return {"num_ports": self.num_ports, "states_per_port": self.states_per_port,
                "num_ancilla": self.num_ancilla}


@dataclass
class AnsatzParams:
    """Trainable angles: theta1 has shape (layers, qubits, 3), theta2 shape (qubits,)."""

    theta1: np.ndarray
    theta2: np.ndarray
    entangle: tuple = field(default=None)

    def __post_init__(self):
        self.theta1 = np.asarray(self.theta1, dtype=float)
        self.theta2 = np.asarray(self.theta2, dtype=float)
        if self.theta1.ndim != 3 or self.theta1.shape[2] != 3:
            raise LayoutError(f"theta1 must have shape (layers, qubits, 3), got {self.theta1.shape}")
        if self.theta2.shape != (self.theta1.shape[1],):
            raise LayoutError("theta2 must hold one angle per qubit")
        if self.entangle is None:
            self.entangle = default_patterns(self.num_layers)
        self.entangle = tuple(self.entangle)
        if len(self.entangle) != self.num_layers:
            raise LayoutError("one entangling pattern per layer is required")
        for p in self.entangle:
            if p not in ENTANGLE_PATTERNS:
                raise LayoutError(f"unknown entangling pattern {p!r}")
        if not (np.all(np.isfinite(self.theta1)) and np.all(np.isfinite(self.theta2))):
            raise ContractError("angles must be finite")

    @property
    def num_layers(self) -> int:
        return self.theta1.shape[0]

    @property
    def num_qubits(self) -> int:
        return self.theta1.shape[1]

    @property
    def size(self) -> int:
        return self.theta1.size + self.theta2.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta1.ravel(), self.theta2])

    def with_flat(self, vec) -> "AnsatzParams":
        vec = np.asarray(vec, dtype=float)
        k = self.theta1.size
        return AnsatzParams(vec[:k].reshape(self.theta1.shape), vec[k:].copy(), self.entangle)

    @classmethod
    def zeros(cls, layout: CircuitLayout, num_layers: int = 1, entangle=None) -> "AnsatzParams":
        n = layout.num_qubits
        return cls(np.zeros((num_layers, n, 3)), np.zeros(n), entangle)

    @classmethod
    def random(cls, layout: CircuitLayout, rng: np.random.Generator, num_layers: int = 1,
               scale: float = 0.1, entangle=None) -> "AnsatzParams":
        n = layout.num_qubits
        theta1 = rng.uniform(-scale, scale, size=(num_layers, n, 3))
        theta2 = rng.uniform(-scale, scale, size=n)
        return cls(theta1, theta2, entangle)


def default_patterns(num_layers: int) -> tuple:
    """Alternate adjacent-ring and distance-2 CNOT layers."""
    return tuple(ENTANGLE_PATTERNS[i % 2] for i in range(num_layers))


# -- gate matrices -----------------------------------------------------------

def rz(angle: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * angle), 0], [0, np.exp(0.5j * angle)]], dtype=complex)


def ry(angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def euler(angles) -> np.ndarray:
    """RZ(a), then RY(b), then RZ(c) as one 2x2 matrix."""
    a, b, c = angles
    return rz(c) @ ry(b) @ rz(a)


def cnot_pairs(pattern: str, n: int) -> list:
    if n < 2:
        return []
    if pattern == "ring":
        if n == 2:
            return [(0, 1)]
        return [(q, (q + 1) % n) for q in range(n)]
    if pattern == "distance-2":
        if n < 3:
            return []
        return [(q, (q + 2) % n) for q in range(n)]
    raise LayoutError(f"unknown entangling pattern {pattern!r}")


@lru_cache(maxsize=64)
def _cnot_layer_maps(pattern: str, n: int):
    """Return (forward, inverse) gather indices for the composed CNOT layer."""
    idx = np.arange(1 << n)
    image = idx.copy()
    for c, t in cnot_pairs(pattern, n):
        cbit, tbit = 1 << (n - 1 - c), 1 << (n - 1 - t)
        image = np.where(image & cbit, image ^ tbit, image)
    # new[image[x]] = old[x]  =>  new = old[inv], with inv[image[x]] = x
    inv = np.empty_like(image)
    inv[image] = idx
    return inv, image


@lru_cache(maxsize=64)
def _z_signs(n: int) -> np.ndarray:
    """(n, 2^n) array: +1 where qubit k is 0, -1 where it is 1."""
    idx = np.arange(1 << n)
    bits = (idx[None, :] >> (n - 1 - np.arange(n))[:, None]) & 1
    return 1.0 - 2.0 * bits


def diagonal_phases(theta2, t) -> np.ndarray:
    """Diagonal of D(theta2 * t) = tensor product of RZ(theta2_k * t)."""
    theta2 = np.asarray(theta2, dtype=float)
    return np.exp(-0.5j * (theta2 * t) @ _z_signs(theta2.size))


def apply_1q(state: np.ndarray, matrix: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Apply a 2x2 gate; state may carry trailing batch axes."""
    batch = state.shape[1:]
    s = state.reshape((1 << qubit, 2, -1))
    return np.matmul(matrix, s).reshape((1 << n,) + batch)


def euler_stack(angles) -> np.ndarray:
    """Vectorized `euler` over a (..., 3) array of angles; returns (..., 2, 2)."""
    a, b, c = np.moveaxis(np.asarray(angles, dtype=float), -1, 0)
    ea, ec = np.exp(-0.5j * a), np.exp(-0.5j * c)
    cb, sb = np.cos(b / 2), np.sin(b / 2)
    out = np.empty(a.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = ec * cb * ea
    out[..., 0, 1] = -ec * sb * ea.conj()
    out[..., 1, 0] = ec.conj() * sb * ea
    out[..., 1, 1] = ec.conj() * cb * ea.conj()
    return out


def _apply_layer(state, angles, pattern, n):
    mats = euler_stack(angles)
    for q in range(n):
        state = apply_1q(state, mats[q], q, n)
    fwd, _ = _cnot_layer_maps(pattern, n)
    return state[fwd]


def _apply_layer_dagger(state, angles, pattern, n):
    _, back = _cnot_layer_maps(pattern, n)
    state = state[back]
    mats = np.conj(np.swapaxes(euler_stack(angles), -1, -2))
    for q in range(n):
        state = apply_1q(state, mats[q], q, n)
    return state


def apply_v(state: np.ndarray, params: AnsatzParams) -> np.ndarray:
    n = params.num_qubits
    for layer in range(params.num_layers):
        state = _apply_layer(state, params.theta1[layer], params.entangle[layer], n)
    return state


def apply_v_dagger(state: np.ndarray, params: AnsatzParams) -> np.ndarray:
    n = params.num_qubits
    for layer in reversed(range(params.num_layers)):
        state = _apply_layer_dagger(state, params.theta1[layer], params.entangle[layer], n)
    return state


def basis_change(params: AnsatzParams) -> np.ndarray:
    """Dense matrix of V(theta1)."""
    dim = 1 << params.num_qubits
    return apply_v(np.eye(dim, dtype=complex), params)


def _check_layout(layout: CircuitLayout, params: AnsatzParams):
    if params.num_qubits != layout.num_qubits:
        raise LayoutError(
            f"params cover {params.num_qubits} qubits but layout has {layout.num_qubits}")


# -- public operations -------------------------------------------------------

def prepare_from_state(layout: CircuitLayout, from_state: Sequence[int]) -> np.ndarray:
    state = np.zeros(layout.dim, dtype=complex)
    state[layout.basis_index(from_state)] = 1.0
    return state


def evolve(state: np.ndarray, params: AnsatzParams, t: float) -> np.ndarray:
    """Return V D(theta2 t) V^dagger applied to `state`."""
    state = np.asarray(state, dtype=complex)
    if state.shape[0] != 1 << params.num_qubits:
        raise LayoutError(
            f"state of length {state.shape[0]} does not match {params.num_qubits} qubits")
    if t < 0:
        raise ContractError("t must be non-negative")
    out = apply_v_dagger(state, params)
    phases = diagonal_phases(params.theta2, t)
    out = phases.reshape((-1,) + (1,) * (out.ndim - 1)) * out
    return apply_v(out, params)


def evolve_adjoint(state: np.ndarray, params: AnsatzParams, t: float) -> np.ndarray:
    out = apply_v_dagger(np.asarray(state, dtype=complex), params)
    out = diagonal_phases(params.theta2, t).conj() * out
    return apply_v(out, params)


def tables_from_factors(v_left: np.ndarray, v_right_dag_cols: np.ndarray,
                        phases: np.ndarray, num_ancilla: int) -> np.ndarray:
    """
    Outcome tables for a batch of from-states and times.

    v_left: (dim, dim) matrix applied last; v_right_dag_cols: (dim, F) columns
    of V^dagger for the prepared basis states; phases: (T, dim) diagonals.
    Returns (T, F, dim >> num_ancilla) probabilities with ancillas summed out.
    """
    amps = np.einsum("ij,tj,jf->tfi", v_left, phases, v_right_dag_cols, optimize=True)
    probs = amps.real ** 2 + amps.imag ** 2
    T, F, dim = probs.shape
    return probs.reshape(T, F, dim >> num_ancilla, 1 << num_ancilla).sum(axis=-1)


def transition_tables(params: AnsatzParams, layout: CircuitLayout,
                      from_indices: Sequence[int], times: Sequence[float]) -> np.ndarray:
    """(T, F, N**D) joint outcome probabilities for flat from-state indices."""
    _check_layout(layout, params)
    v = basis_change(params)
    cols = np.asarray(from_indices, dtype=int) << layout.num_ancilla
    right = v[cols, :].conj().T
    phases = np.stack([diagonal_phases(params.theta2, t) for t in times])
    return tables_from_factors(v, right, phases, layout.num_ancilla)


def joint_outcome_distribution(params: AnsatzParams, layout: CircuitLayout,
                               from_state: Sequence[int], t: float) -> np.ndarray:
    """Joint probabilities of target-qubit outcomes, shape (N,) * D."""
    _check_layout(layout, params)
    state = evolve(prepare_from_state(layout, from_state), params, t)
    probs = np.abs(state) ** 2
    probs = probs.reshape(layout.joint_size, 1 << layout.num_ancilla).sum(axis=1)
    return probs.reshape(layout.joint_shape)


def port_marginal(dist: np.ndarray, d: int) -> np.ndarray:
    dist = np.asarray(dist)
    if not 0 <= d < dist.ndim:
        raise InvalidStateError(f"port index {d} out of range for {dist.ndim} ports")
    others = tuple(k for k in range(dist.ndim) if k != d)
    return dist.sum(axis=others)


def pair_marginal(dist: np.ndarray, d: int, d2: int) -> np.ndarray:
    """Bivariate marginal over ports (d, d2), axis order as given."""
    dist = np.asarray(dist)
    if d == d2:
        raise InvalidStateError("pair marginal needs two distinct ports")
    others = tuple(k for k in range(dist.ndim) if k not in (d, d2))
    out = dist.sum(axis=others)
    return out if d < d2 else out.T


def sample_outcomes(dist: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial shot counts with the same shape as `dist`."""
    dist = np.asarray(dist, dtype=float)
    if shots < 1:
        raise ContractError("shots must be >= 1")
    total = dist.sum()
    if abs(total - 1.0) > 1e-6:
        raise ContractError(f"distribution sums to {total}, not 1")
    p = np.clip(dist.ravel(), 0.0, None)
    counts = rng.multinomial(shots, p / p.sum())
    return counts.reshape(dist.shape)
