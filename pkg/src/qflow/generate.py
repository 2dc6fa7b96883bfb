"""
Sample-path generation from a trained circuit.

A path starts from a joint time-0 state drawn from the empirical initial law.
At each step the circuit is prepared in a joint state, evolved to the target
step's time index and measured on all target qubits; the outcome is mapped
to representative increments and accumulated into counts.

Two modes exist. ``reinjection`` prepares the previous step's measured state;
``from-origin`` always prepares the day's time-0 state, which is how the
transition matrices were fitted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .encode import SaxCodebook, pearson
from .errors import ContractError
from .model import TrainedModel
from .qsim import joint_outcome_distribution, transition_tables

MODES = ("reinjection", "from-origin")


@dataclass
class SamplePath:
    states: np.ndarray  # (D, S) joint SAX states per increment step
    counts: np.ndarray  # (D, S + 1) reconstructed counts


@dataclass
class Ensemble:
    states: np.ndarray  # (P, D, S)
    counts: np.ndarray  # (P, D, S + 1)
    seed: Optional[int]
    mode: str

    def __len__(self):
        return self.states.shape[0]

    def path(self, k: int) -> SamplePath:
        return SamplePath(self.states[k], self.counts[k])


def _check_mode(mode):
    if mode not in MODES:
        raise ContractError(f"unknown sampling mode {mode!r}; expected one of {MODES}")


def step(current, t_next: int, model: TrainedModel, rng: np.random.Generator) -> tuple:
    """Prepare `current`, evolve to time index `t_next`, measure one joint outcome."""
    if not 1 <= t_next < model.codebook.num_steps:
        raise ContractError(f"t_next must lie in 1..{model.codebook.num_steps - 1}")
    dist = joint_outcome_distribution(model.params, model.layout, current, t_next).ravel()
    return model.layout.joint_state(_draw(dist, rng.random()))


def _draw(p, u) -> int:
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), p.size - 1))


class PathSampler:
    """Precomputed outcome tables for every (time index, from-state)."""

    def __init__(self, model: TrainedModel):
        self.model = model
        lay = model.layout
        self.num_steps = model.codebook.num_steps
        self.times = np.arange(1, self.num_steps)
        tables = transition_tables(model.params, lay, np.arange(lay.joint_size), self.times)
        self.cdf = np.cumsum(tables, axis=-1)  # (S-1, X, X)
        init = np.asarray(model.data.init_dist, dtype=float)
        self.init_cdf = np.cumsum(init / init.sum())
        self.reps = model.codebook.representatives  # (D, S, N)
        self.unravel = np.array(np.unravel_index(np.arange(lay.joint_size), lay.joint_shape)).T

    def _pick(self, cdf, u) -> int:
        return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), cdf.size - 1))

    def joint_path(self, rng: np.random.Generator, mode: str) -> np.ndarray:
        S = self.num_steps
        out = np.empty(S, dtype=np.int64)
        out[0] = self._pick(self.init_cdf, rng.random())
        for k, t in enumerate(self.times):
            src = out[k] if mode == "reinjection" else out[0]
            out[t] = self._pick(self.cdf[k, src], rng.random())
        return out

    def path(self, x0, rng: np.random.Generator, mode: str = "reinjection") -> SamplePath:
        _check_mode(mode)
        joint = self.joint_path(rng, mode)
        states = self.unravel[joint].T  # (D, S)
        D, S = states.shape
        inc = self.reps[np.arange(D)[:, None], np.arange(S)[None, :], states]
        # sequential sums keep X[t + 1] == X[t] + A exactly
        counts = np.cumsum(np.concatenate([np.asarray(x0, dtype=float)[:, None], inc], axis=1),
                           axis=1)
        return SamplePath(states, counts)


def _x0(model: TrainedModel, x0):
    x0 = model.data.initial_counts if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (model.layout.num_ports,):
        raise ContractError(f"x0 must hold {model.layout.num_ports} initial counts")
    return x0


def generate_path(model: TrainedModel, x0=None, rng: Optional[np.random.Generator] = None,
                  mode: str = "reinjection") -> SamplePath:
    rng = rng if rng is not None else np.random.default_rng()
    return PathSampler(model).path(_x0(model, x0), rng, mode)


def generate_ensemble(model: TrainedModel, x0=None, n_paths: int = 1000, seed: int = 0,
                      mode: str = "reinjection") -> Ensemble:
    if n_paths < 1:
        raise ContractError("n_paths must be >= 1")
    _check_mode(mode)
    x0 = _x0(model, x0)
    sampler = PathSampler(model)
    streams = np.random.SeedSequence(seed).spawn(n_paths)
    paths = [sampler.path(x0, np.random.default_rng(s), mode) for s in streams]
    return Ensemble(np.stack([p.states for p in paths]), np.stack([p.counts for p in paths]),
                    seed, mode)


def expected_counts(model: TrainedModel, x0=None, mode: str = "reinjection") -> np.ndarray:
    """Exact mean count path (D, S + 1) by propagating the joint-state law."""
    _check_mode(mode)
    x0 = _x0(model, x0)
    sampler = PathSampler(model)
    tables = np.diff(np.concatenate([np.zeros(sampler.cdf.shape[:2] + (1,)), sampler.cdf], axis=-1),
                     axis=-1)
    init = np.asarray(model.data.init_dist, dtype=float)
    init = init / init.sum()
    D, S = model.layout.num_ports, sampler.num_steps
    law = [init]
    for k in range(S - 1):
        src = law[-1] if mode == "reinjection" else init
        law.append(src @ tables[k])
    mean = np.empty((D, S + 1))
    mean[:, 0] = x0
    for t in range(S):
        comp = sampler.unravel  # (X, D)
        step_mean = np.array([law[t] @ sampler.reps[d, t, comp[:, d]] for d in range(D)])
        mean[:, t + 1] = mean[:, t] + step_mean
    return mean


@dataclass
class EnsembleStats:
    mean_counts: np.ndarray  # (D, S + 1)
    std_counts: np.ndarray
    increments: np.ndarray  # (P, D, S)
    deviations: np.ndarray  # increments minus their per-(d, t) ensemble mean
    rho: np.ndarray  # (D, D, S)
    defined: np.ndarray  # (D, D, S)
    data_rho: Optional[np.ndarray] = None
    degenerate: bool = False


def ensemble_statistics(ens: Ensemble, codebook: Optional[SaxCodebook] = None,
                        data_rho=None) -> EnsembleStats:
    """Mean curves and cross-port increment correlations across paths."""
    if len(ens) < 1:
        raise ContractError("empty ensemble")
    counts = ens.counts
    inc = np.diff(counts, axis=-1)
    dev = inc - inc.mean(axis=0, keepdims=True)
    _, D, S = inc.shape
    rho = np.zeros((D, D, S))
    defined = np.zeros((D, D, S), dtype=bool)
    for t in range(S):
        for d in range(D):
            for d2 in range(d, D):
                r, ok = pearson(inc[:, d, t], inc[:, d2, t])
                rho[d, d2, t] = rho[d2, d, t] = r
                defined[d, d2, t] = defined[d2, d, t] = ok
    return EnsembleStats(counts.mean(axis=0), counts.std(axis=0), inc, dev, rho, defined,
                         None if data_rho is None else np.asarray(data_rho),
                         degenerate=not defined.any() or len(ens) < 2)
