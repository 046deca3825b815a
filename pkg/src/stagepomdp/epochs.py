"""Epoch processes and trajectory simulation on the extended space.

With stage duration h, each stage ends with a real transition (drawn from
the base kernel P) with probability h, otherwise the state freezes.  The
indicator marks X_j ~ Bernoulli(h) are independent of everything else, the
j-th epoch is the block of stages between the (j-1)-th and j-th mark, and
epoch lengths are i.i.d. geometric(h).

Simulating the duration-h model via (base P, marks) instead of the mixed
kernel gives the same law and exposes the epoch structure directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularSystem
from .model import PomdpModel, validate_stage_duration
from .strategies import Strategy

#: residual tolerance for the epoch-operator linear solve
OPERATOR_RESIDUAL_TOL = 1e-10


def worker_rng(master_seed, *key):
    """Derive a reproducible per-worker stream from a master seed.

    The split is ``SeedSequence(master_seed, spawn_key=key)``; distinct keys
    give statistically independent streams.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


def as_generator(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def sample_index(rng, probs):
    """Sample an index from a small probability vector (linear scan)."""
    u = rng.random()
    acc = 0.0
    last = len(probs) - 1
    for i in range(last):
        acc += probs[i]
        if u < acc:
            return i
    return last


@dataclass(frozen=True)
class EpochSample:
    """Epoch lengths N_1..N_k and boundaries T_0=0, T_i = N_1 + ... + N_i."""

    lengths: np.ndarray

    @property
    def boundaries(self):
        out = np.zeros(len(self.lengths) + 1, dtype=np.int64)
        np.cumsum(self.lengths, out=out[1:])
        return out


def sample_epochs(h, k, seed_or_rng) -> EpochSample:
    """Draw k i.i.d. geometric(h) epoch lengths.

    Inverse-CDF form ceil(ln U / ln(1-h)) with U uniform on (0, 1];
    h = 1 degenerates to all-ones.
    """
    h = validate_stage_duration(h)
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = as_generator(seed_or_rng)
    if h == 1.0:
        return EpochSample(np.ones(k, dtype=np.int64))
    u = 1.0 - rng.random(k)  # uniform on (0, 1]
    lengths = np.ceil(np.log(u) / math.log1p(-h)).astype(np.int64)
    lengths[lengths < 1] = 1
    return EpochSample(lengths)


def geometric_tail(h, m):
    """P(N >= m) = (1-h)^(m-1) for an epoch length N ~ geometric(h)."""
    h = validate_stage_duration(h)
    if m < 1:
        raise ValueError("m must be >= 1")
    return (1.0 - h) ** (m - 1)


@dataclass(frozen=True)
class ExtendedTrajectory:
    """States, actions, signals and transition marks for one play.

    ``marks[j] == 0`` means the state froze at the end of stage j, so
    ``states[j+1] == states[j]`` whenever both stages are recorded.
    """

    states: np.ndarray
    actions: np.ndarray
    signals: np.ndarray
    marks: np.ndarray

    @property
    def horizon(self):
        return len(self.states)

    def epoch_boundaries(self):
        """Stage numbers (1-based) at which a real transition occurred."""
        return np.nonzero(self.marks)[0] + 1


def _simulate(model: PomdpModel, strategy: Strategy, marks, rng):
    """Run one play of the given length with a predetermined mark schedule."""
    horizon = len(marks)
    states = np.empty(horizon, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    signals = np.empty(horizon, dtype=np.int64)
    transition = model.transition
    signal_map = model.signal_map

    state = sample_index(rng, model.init)
    cursor = strategy.start(int(signal_map[state]))
    for j in range(horizon):
        states[j] = state
        signals[j] = signal_map[state]
        action = sample_index(rng, cursor.action_distribution())
        actions[j] = action
        if marks[j]:
            state = sample_index(rng, transition[state, action])
        if j + 1 < horizon:
            cursor = cursor.step(action, int(signal_map[state]))
    return ExtendedTrajectory(states, actions, signals, np.asarray(marks))


def simulate_gh(model: PomdpModel, strategy: Strategy, h, horizon,
                seed_or_rng) -> ExtendedTrajectory:
    """Simulate `horizon` stages of the duration-h model on the extended space."""
    h = validate_stage_duration(h)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = as_generator(seed_or_rng)
    marks = (rng.random(horizon) < h).astype(np.int8) if h < 1.0 else \
        np.ones(horizon, dtype=np.int8)
    return _simulate(model, strategy, marks, rng)


def simulate_epochs_gh(model: PomdpModel, strategy: Strategy, h, k,
                       seed_or_rng, extra_stages=0, min_horizon=0):
    """Simulate k complete epochs (plus extra stages, up to a minimum horizon).

    Returns ``(trajectory, epochs)`` where the trajectory has horizon
    ``max(T_k + extra_stages, min_horizon)``.  Drawing the epoch lengths
    first and fixing the mark schedule is equivalent in law because the
    marks are independent of states and actions.
    """
    h = validate_stage_duration(h)
    rng = as_generator(seed_or_rng)
    epochs = sample_epochs(h, k, rng)
    t_k = int(epochs.boundaries[-1])
    horizon = max(t_k + int(extra_stages), int(min_horizon))
    marks = np.zeros(horizon, dtype=np.int8)
    marks[epochs.boundaries[1:] - 1] = 1
    if horizon > t_k:
        marks[t_k:] = (rng.random(horizon - t_k) < h).astype(np.int8)
    return _simulate(model, strategy, marks, rng), epochs


def epoch_memory_operator(matrix, h):
    """Expected power E[M^(N-1)] for N ~ geometric(h): h (I - (1-h) M)^(-1).

    ``matrix`` must be row-stochastic; the result is again row-stochastic.
    The system is nonsingular for h > 0 since the spectral radius of
    (1-h) M is at most 1-h < 1.
    """
    h = validate_stage_duration(h)
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    if m.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if h == 1.0:
        return np.eye(n)
    system = np.eye(n) - (1.0 - h) * m
    try:
        out = np.linalg.solve(system, h * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    residual = np.max(np.abs(system @ out - h * np.eye(n)))
    if residual > OPERATOR_RESIDUAL_TOL:
        raise SingularSystem(f"solve residual {residual:.3e}")
    return out
