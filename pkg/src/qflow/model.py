"""
Training objective and optimizer.

The cost is a weighted KL term between the circuit's per-port conditionals
and the empirical transition matrices, plus a penalty on the gap between
empirical and model cross-port correlations of the increments.

Multi-port conditionals need a joint preparation. Every observed joint time-0
state is prepared with its empirical weight; the KL for port d compares the
port-d marginal with that port's transition row. The model correlation uses
the weight-averaged joint table.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import encode
from .encode import CorrelationTable, PanelData, SaxCodebook, TransitionTensor
from .errors import ConfigError, DivergenceError, NumericalError, ContractError
from .qsim import (AnsatzParams, CircuitLayout, basis_change, diagonal_phases,
                   joint_outcome_distribution, port_marginal, sample_outcomes,
                   _z_signs)

log = logging.getLogger(__name__)

ALPHA_MAX = 5.0
_PROB_FLOOR = 1e-300
_SHIFT = np.pi / 2


@dataclass
class TrainConfig:
    alpha: object = 1.0  # scalar or (D, D) symmetric matrix
    learning_rate: float = 0.1
    iterations: int = 300
    shots: Optional[int] = None  # None means exact probabilities
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    num_layers: int = 2
    num_ancilla: int = 2
    init_scale: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.shots is not None and self.shots < 1:
            raise ConfigError("shots must be >= 1")
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim == 2:
            if a.shape[0] != a.shape[1] or not np.allclose(a, a.T):
                raise ConfigError("alpha matrix must be square and symmetric")
        elif a.ndim != 0:
            raise ConfigError("alpha must be a scalar or a square matrix")
        if np.any(a < 0) or np.any(a > ALPHA_MAX):
            raise ConfigError(f"alpha entries must lie in [0, {ALPHA_MAX}]")

    def alpha_matrix(self, num_ports: int) -> np.ndarray:
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim == 0:
            m = np.full((num_ports, num_ports), float(a))
        else:
            if a.shape != (num_ports, num_ports):
                raise ConfigError(f"alpha matrix must be {num_ports}x{num_ports}")
            m = a.copy()
        np.fill_diagonal(m, 0.0)
        return m

    @property
    def mode(self) -> str:
        return "exact" if self.shots is None else f"sampled({self.shots})"

    def to_dict(self) -> dict:
        a = np.asarray(self.alpha, dtype=float)
        return {"alpha": a.tolist() if a.ndim else float(a), "learning_rate": self.learning_rate,
                "iterations": self.iterations, "shots": self.shots, "seed": self.seed,
                "adam_betas": list(self.adam_betas), "adam_eps": self.adam_eps,
                "num_layers": self.num_layers, "num_ancilla": self.num_ancilla,
                "init_scale": self.init_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["adam_betas"] = tuple(d.get("adam_betas", (0.9, 0.999)))
        return cls(**d)


@dataclass(frozen=True)
class CostBreakdown:
    term1: float
    term2: float

    @property
    def total(self) -> float:
        return self.term1 + self.term2


@dataclass
class TrainingData:
    """Everything the cost needs from the observed panel."""

    codebook: SaxCodebook
    transitions: TransitionTensor
    correlations: CorrelationTable
    init_dist: np.ndarray  # flat over N**D
    initial_counts: np.ndarray  # mean time-0 count per port
    times: np.ndarray = None  # increment steps entering the cost
    port_labels: list = None

    def __post_init__(self):
        if self.port_labels is None:
            self.port_labels = [f"port{d}" for d in range(self.codebook.num_ports)]
        self.init_dist = np.asarray(self.init_dist, dtype=float)
        self.initial_counts = np.asarray(self.initial_counts, dtype=float)
        if self.times is None:
            self.times = np.arange(1, self.codebook.num_steps)
        self.times = np.asarray(self.times, dtype=int)

    @property
    def num_ports(self):
        return self.codebook.num_ports

    @property
    def n_states(self):
        return self.codebook.n_states

    def layout(self, num_ancilla: int = 2) -> CircuitLayout:
        return CircuitLayout(self.num_ports, self.n_states, num_ancilla)


def prepare_training_data(panel, n_states: int = 2, method: str = "quantile",
                          pooling: str = "per-time",
                          smoothing: float = encode.DEFAULT_SMOOTHING) -> TrainingData:
    labels = None
    if isinstance(panel, PanelData):
        counts, labels = panel.counts, list(panel.port_labels)
    else:
        counts = np.asarray(panel)
    inc = encode.compute_increments(counts)
    cb = encode.fit_codebook(inc, n_states, method=method, pooling=pooling)
    states = encode.discretize(inc, cb)
    return TrainingData(
        codebook=cb,
        transitions=encode.build_transitions(states, n_states, smoothing),
        correlations=encode.empirical_correlations(inc, cb),
        init_dist=encode.initial_state_distribution(states, n_states),
        initial_counts=counts[:, :, 0].mean(axis=0),
        port_labels=labels,
    )


@dataclass
class TrainedModel:
    params: AnsatzParams
    layout: CircuitLayout
    data: TrainingData
    config: TrainConfig
    cost_history: list = field(default_factory=list)
    status: str = "ok"

    @property
    def codebook(self) -> SaxCodebook:
        return self.data.codebook

    @property
    def transitions(self) -> TransitionTensor:
        return self.data.transitions


# -- elementary pieces -------------------------------------------------------

def kl_divergence(p, q) -> float:
    """sum_j p_j log(p_j / q_j) with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if abs(p.sum() - 1) > 1e-6 or abs(q.sum() - 1) > 1e-6:
        raise ContractError("KL arguments must be normalized")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise DivergenceError("reference has zero mass where p is positive")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def model_conditional(params: AnsatzParams, layout: CircuitLayout, from_state, t: float, d: int,
                      shots: Optional[int] = None, rng: Optional[np.random.Generator] = None):
    dist = joint_outcome_distribution(params, layout, from_state, t)
    if shots is not None:
        rng = rng if rng is not None else np.random.default_rng()
        dist = sample_outcomes(dist, shots, rng) / shots
    return port_marginal(dist, d)


def correlation_from_joint(joint2, a_vals, a_mean, b_vals, b_mean) -> tuple:
    """
    Correlation of representative increments under a bivariate table.

    joint2[j, k] is the probability of (state j, state k); deviations are
    taken about the supplied data means. Returns (rho, defined).
    """
    joint2 = np.asarray(joint2, dtype=float)
    da = np.asarray(a_vals, dtype=float) - a_mean
    db = np.asarray(b_vals, dtype=float) - b_mean
    va = joint2.sum(axis=1) @ da ** 2
    vb = joint2.sum(axis=0) @ db ** 2
    if va <= _var_floor(da) or vb <= _var_floor(db):
        return 0.0, False
    return float(da @ joint2 @ db / math.sqrt(va * vb)), True


def _var_floor(dev):
    return 1e-12 * float(np.max(dev ** 2)) if dev.size else 0.0


def model_correlation(params: AnsatzParams, layout: CircuitLayout, codebook: SaxCodebook,
                      t: int, d: int, d2: int, from_weights=None) -> tuple:
    """Model correlation between ports d and d2 at step t, averaged over from-states."""
    if d == d2:
        raise ContractError("model correlation needs two distinct ports")
    if from_weights is None:
        from_weights = np.full(layout.joint_size, 1.0 / layout.joint_size)
    w = np.asarray(from_weights, dtype=float)
    mix = np.zeros(layout.joint_shape)
    for idx in np.flatnonzero(w):
        mix += w[idx] * joint_outcome_distribution(params, layout, layout.joint_state(idx), t)
    others = tuple(k for k in range(layout.num_ports) if k not in (d, d2))
    pair = mix.sum(axis=others)
    if d > d2:
        pair = pair.T
    return correlation_from_joint(pair, codebook.representatives[d, t], codebook.means[d, t],
                                  codebook.representatives[d2, t], codebook.means[d2, t])


# -- batched cost ------------------------------------------------------------

class Objective:
    """
    Vectorized cost and gradient for one data bundle.

    Probability tables have shape (T, F, X): time steps in `data.times`,
    observed from-states, and flat joint outcomes.
    """

    def __init__(self, data: TrainingData, layout: CircuitLayout, alpha: np.ndarray,
                 shots: Optional[int] = None, seed: int = 0):
        if layout.num_ports != data.num_ports or layout.states_per_port != data.n_states:
            raise ConfigError("layout does not match the training data")
        self.data = data
        self.layout = layout
        self.alpha = np.asarray(alpha, dtype=float)
        self.shots = shots
        self._seeds = np.random.SeedSequence(seed)
        D, N, X = layout.num_ports, layout.states_per_port, layout.joint_size
        times = data.times

        self.from_idx = np.flatnonzero(data.init_dist > 0)
        self.weights = data.init_dist[self.from_idx]
        self.weights = self.weights / self.weights.sum()
        from_states = np.array([layout.joint_state(i) for i in self.from_idx]).reshape(-1, D)
        self.cols = self.from_idx << layout.num_ancilla

        comp = np.array(np.unravel_index(np.arange(X), layout.joint_shape))  # (D, X)
        self.onehot = (comp[:, None, :] == np.arange(N)[None, :, None]).astype(float)  # (D, N, X)

        P = data.transitions.probs
        # targets[t, f, d, :] = T_{d,t}(. | from_state[f, d])
        self.targets = np.stack([P[d, times][:, from_states[:, d], :] for d in range(D)], axis=2)
        self.log_targets = np.log(self.targets)

        A = data.codebook.representatives[:, times, :]  # (D, T, N)
        M = data.codebook.means[:, times]  # (D, T)
        dev = A - M[..., None]
        self.dev = np.stack([dev[d][:, comp[d]] for d in range(D)], axis=1)  # (T, D, X)
        self.dev_floor = 1e-12 * np.max(dev ** 2, axis=-1).T  # (T, D)
        rho = data.correlations.rho[:, :, times]
        ok = data.correlations.defined[:, :, times]
        self.rho = np.moveaxis(rho, -1, 0)  # (T, D, D)
        self.pair_weight = np.moveaxis(ok, -1, 0) * self.alpha[None]
        self.signs = _z_signs(layout.num_qubits)

    # tables -----------------------------------------------------------------
    def phases(self, theta2) -> np.ndarray:
        return np.stack([diagonal_phases(theta2, t) for t in self.data.times])

    def _tables(self, v_left, right, phases):
        x = phases[:, :, None] * right[None]  # (T, dim, F)
        amps = np.matmul(v_left, x)  # (T, dim, F)
        probs = amps.real ** 2 + amps.imag ** 2
        T, dim, F = probs.shape
        anc = self.layout.num_ancilla
        probs = probs.reshape(T, dim >> anc, 1 << anc, F).sum(axis=2)
        probs = np.transpose(probs, (0, 2, 1))
        if self.shots is not None:
            probs = self._sample(probs)
        return probs

    def _sample(self, probs):
        rng = np.random.default_rng(self._seeds.spawn(1)[0])
        T, F, X = probs.shape
        flat = np.clip(probs.reshape(-1, X), 0, None)
        flat = flat / flat.sum(axis=1, keepdims=True)
        counts = np.stack([rng.multinomial(self.shots, row) for row in flat])
        return (counts / self.shots).reshape(T, F, X)

    def tables(self, params: AnsatzParams) -> np.ndarray:
        v = basis_change(params)
        return self._tables(v, v[self.cols, :].conj().T, self.phases(params.theta2))

    # cost -------------------------------------------------------------------
    def evaluate(self, P: np.ndarray, need_grad: bool = True):
        """Return (CostBreakdown, dC/dP or None) for tables P."""
        w = self.weights
        m = np.einsum("tfx,djx->tfdj", P, self.onehot)
        mc = np.maximum(m, _PROB_FLOOR)
        logratio = np.log(mc) - self.log_targets
        term1 = float(np.einsum("f,tfdj->", w, np.where(m > 0, m * logratio, 0.0)))

        Q = np.einsum("f,tfx->tx", w, P)
        dev = self.dev
        var = np.einsum("tx,tdx->td", Q, dev ** 2)
        cov = np.einsum("tx,tdx,tex->tde", Q, dev, dev)
        valid = var > self.dev_floor
        safe_var = np.where(valid, var, 1.0)
        norm = np.sqrt(safe_var[:, :, None] * safe_var[:, None, :])
        rho_m = cov / norm
        pw = self.pair_weight * (valid[:, :, None] & valid[:, None, :])
        gap = self.rho - rho_m
        term2 = float(np.sum(pw * gap ** 2))
        cost = CostBreakdown(term1, term2)
        if not need_grad:
            return cost, None

        g_m = w[None, :, None, None] * (logratio + 1.0)
        dP = np.einsum("tfdj,djx->tfx", g_m, self.onehot)
        g = -2.0 * pw * gap  # d term2 / d rho_m
        a = g / norm
        b = g * rho_m / 2.0
        dQ = np.einsum("tde,tdx,tex->tx", a, dev, dev)
        dQ -= np.einsum("td,tdx->tx", b.sum(axis=2) / safe_var, dev ** 2)
        dQ -= np.einsum("te,tex->tx", b.sum(axis=1) / safe_var, dev ** 2)
        dP += w[None, :, None] * dQ[:, None, :]
        return cost, dP

    def model_correlations(self, params: AnsatzParams) -> tuple:
        """(rho_model, defined) arrays of shape (T, D, D) over `data.times`."""
        P = self.tables(params)
        Q = np.einsum("f,tfx->tx", self.weights, P)
        var = np.einsum("tx,tdx->td", Q, self.dev ** 2)
        cov = np.einsum("tx,tdx,tex->tde", Q, self.dev, self.dev)
        valid = var > self.dev_floor
        safe = np.where(valid, var, 1.0)
        rho = cov / np.sqrt(safe[:, :, None] * safe[:, None, :])
        ok = valid[:, :, None] & valid[:, None, :]
        return np.where(ok, rho, 0.0), ok

    def cost(self, params: AnsatzParams) -> CostBreakdown:
        return self.evaluate(self.tables(params), need_grad=False)[0]

    def value_and_grad(self, params: AnsatzParams):
        """Cost and parameter-shift gradient over params.flat()."""
        v = basis_change(params)
        right = v[self.cols, :].conj().T
        phases = self.phases(params.theta2)
        base = self._tables(v, right, phases)
        cost, G = self.evaluate(base)
        if not math.isfinite(cost.total):
            raise NumericalError(f"non-finite cost {cost}")

        grad = np.zeros(params.size)
        L, n, _ = params.theta1.shape
        k = 0
        for layer in range(L):
            for q in range(n):
                for e in range(3):
                    shifted = []
                    for s in (_SHIFT, -_SHIFT):
                        t1 = params.theta1.copy()
                        t1[layer, q, e] += s
                        shifted.append(basis_change(AnsatzParams(t1, params.theta2, params.entangle)))
                    vp, vm = shifted
                    d_left = self._tables(vp, right, phases) - self._tables(vm, right, phases)
                    d_right = (self._tables(v, vp[self.cols, :].conj().T, phases)
                               - self._tables(v, vm[self.cols, :].conj().T, phases))
                    grad[k] = 0.5 * np.sum(G * (d_left + d_right))
                    k += 1
        times = self.data.times.astype(float)
        for q in range(n):
            rot = np.exp(-0.5j * _SHIFT * self.signs[q])
            dp = self._tables(v, right, phases * rot) - self._tables(v, right, phases * rot.conj())
            grad[k] = 0.5 * np.sum(times[:, None, None] * G * dp)
            k += 1
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient")
        return cost, grad


def build_objective(data: TrainingData, config: TrainConfig, layout: CircuitLayout = None) -> Objective:
    layout = layout or data.layout(config.num_ancilla)
    return Objective(data, layout, config.alpha_matrix(data.num_ports), config.shots, config.seed)


def cost(params: AnsatzParams, data: TrainingData, config: TrainConfig,
         layout: CircuitLayout = None) -> CostBreakdown:
    return build_objective(data, config, layout).cost(params)


def gradient(params: AnsatzParams, data: TrainingData, config: TrainConfig,
             layout: CircuitLayout = None) -> np.ndarray:
    return build_objective(data, config, layout).value_and_grad(params)[1]


def finite_difference_gradient(fn, x, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (fn(x + e) - fn(x - e)) / (2 * step)
    return out


class Adam:
    def __init__(self, lr=0.1, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = self.v = None
        self.t = 0

    def step(self, x, grad):
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad ** 2
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(data: TrainingData, config: TrainConfig, callback=None) -> TrainedModel:
    layout = data.layout(config.num_ancilla)
    objective = build_objective(data, config, layout)
    rng = np.random.default_rng(config.seed)
    params = AnsatzParams.random(layout, rng, config.num_layers, config.init_scale)
    opt = Adam(config.learning_rate, config.adam_betas, config.adam_eps)
    history, status = [], "ok"
    x = params.flat()
    for it in range(config.iterations + 1):
        try:
            if it == config.iterations:
                c = objective.cost(params)
                if not math.isfinite(c.total):
                    raise NumericalError(f"non-finite cost {c}")
                history.append(c)
                break
            c, g = objective.value_and_grad(params)
        except NumericalError as exc:
            log.error("stopping at iteration %d: %s", it, exc)
            status = "nan-cost"
            break
        history.append(c)
        if callback is not None:
            callback(it, c)
        x = opt.step(x, g)
        params = params.with_flat(x)
    return TrainedModel(params, layout, data, config, history, status)
