"""Payoff functionals: discounted payoff, long-run average, value estimates.

The discounted payoff of a strategy at stage duration h uses the weights
lam*h*(1-lam*h)^(i-1), which sum to one; as a weight sequence this equals
plain discounting at the effective rate lam*h.  The long-run average is the
liminf of expected Cesaro means; finite-horizon estimators report a
trailing-window minimum as a conservative proxy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .epochs import as_generator, simulate_gh
from .errors import (
    BudgetExceeded,
    ImpossibleObservation,
    NotConverged,
    SingularSystem,
)
from .mimic import FilterMachine
from .model import (
    PomdpModel,
    is_fully_observed,
    stage_duration_transform,
    validate_stage_duration,
)
from .strategies import (
    DEFAULT_ENUMERATION_BUDGET,
    FiniteStateController,
    SequenceStrategy,
    Strategy,
    sequence_as_controller,
)

DEFAULT_LAMBDA_GRID = (0.1, 0.05, 0.02, 0.01, 0.005)

#: sup-norm residual at which value iteration stops
VI_RESIDUAL_TOL = 1e-9

#: fraction of trailing checkpoints used by the liminf proxy
TRAILING_WINDOW = 0.2


@dataclass(frozen=True)
class PayoffEstimate:
    """A payoff value with its provenance.

    mode is one of 'exact', 'truncated', 'monte_carlo', 'approximate';
    ``bound`` is a deterministic error bound (truncated/approximate modes),
    ``std_error``/``n`` describe Monte Carlo noise. ``diagnostics`` carries
    estimator-specific numbers whose sum is the estimate's self-reported
    slack (used by the monotonicity check).
    """

    value: float
    mode: str
    std_error: float | None = None
    bound: float | None = None
    n: int | None = None
    diagnostics: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def slack(self):
        total = sum(v for v in self.diagnostics.values() if isinstance(v, float))
        if self.bound is not None:
            total += self.bound
        return total


# --- beliefs ---------------------------------------------------------------

def belief_update(model: PomdpModel, belief, action, signal):
    """Bayes step of a belief through the kernel and the deterministic signal."""
    belief = np.asarray(belief, dtype=np.float64)
    pushed = belief @ model.transition[:, action, :]
    pushed = np.where(model.signal_map == signal, pushed, 0.0)
    total = pushed.sum()
    if total <= 0.0:
        raise ImpossibleObservation(
            f"signal {model.signal_names[signal]!r} has probability 0 after action "
            f"{model.action_names[action]!r}"
        )
    return pushed / total


# --- exact chain machinery -------------------------------------------------

def _stationary_distribution(chain):
    n = chain.shape[0]
    system = chain.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.lstsq(system, rhs, rcond=None)[0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    pi = np.clip(pi, 0.0, None)
    total = pi.sum()
    if total <= 0.0:
        raise SingularSystem("stationary solve returned zero mass")
    pi /= total
    if np.max(np.abs(pi @ chain - pi)) > 1e-8:
        raise SingularSystem("stationary distribution residual too large")
    return pi


def cesaro_average(chain, init, payoffs):
    """Exact Cesaro-limit average payoff of a finite Markov chain.

    Decomposes the chain into recurrent classes and transient states; the
    limit is the absorption-probability-weighted mix of per-class stationary
    averages.  Exists for every finite chain (periodicity included).
    """
    chain = np.asarray(chain, dtype=np.float64)
    init = np.asarray(init, dtype=np.float64)
    payoffs = np.asarray(payoffs, dtype=np.float64)
    n = chain.shape[0]
    adjacency = chain > 0.0
    n_comp, labels = connected_components(
        csr_matrix(adjacency), directed=True, connection="strong"
    )
    members = [np.nonzero(labels == c)[0] for c in range(n_comp)]
    recurrent = []
    for c in range(n_comp):
        inside = np.zeros(n, dtype=bool)
        inside[members[c]] = True
        if not adjacency[np.ix_(members[c], ~inside)].any():
            recurrent.append(c)

    class_value = {}
    for c in recurrent:
        sub = chain[np.ix_(members[c], members[c])]
        pi = _stationary_distribution(sub)
        class_value[c] = float(pi @ payoffs[members[c]])

    recurrent_states = np.concatenate([members[c] for c in recurrent])
    is_recurrent = np.zeros(n, dtype=bool)
    is_recurrent[recurrent_states] = True
    transient = np.nonzero(~is_recurrent)[0]

    value = sum(float(init[i]) * class_value[labels[i]]
                for i in recurrent_states if init[i] > 0.0)
    if transient.size and init[transient].sum() > 0.0:
        q = chain[np.ix_(transient, transient)]
        reach = np.stack(
            [chain[np.ix_(transient, members[c])].sum(axis=1) for c in recurrent],
            axis=1,
        )
        try:
            absorb = np.linalg.solve(np.eye(len(transient)) - q, reach)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        weights = init[transient] @ absorb
        value += sum(w * class_value[c] for w, c in zip(weights, recurrent))
    return float(value)


def controller_product_chain(model: PomdpModel, controller: FiniteStateController,
                             h=1.0):
    """Markov chain on (state, memory) induced by the controller at duration h."""
    mh = stage_duration_transform(model, h) if h != 1.0 else model
    n_w, n_q = model.n_states, controller.n_memory
    update_by_state = controller.update[:, :, model.signal_map, :]  # (Q, A, W2, Q2)
    chain = np.einsum("qa,waz,qazr->wqzr", controller.rule, mh.transition,
                      update_by_state).reshape(n_w * n_q, n_w * n_q)
    payoffs = (model.payoff @ controller.rule.T).reshape(-1)  # (W, Q) flattened
    init = np.zeros((n_w, n_q))
    for w in range(n_w):
        init[w, controller.init_memory[model.signal_of(w)]] = model.init[w]
    return chain, init.reshape(-1), payoffs


def machine_product_chain(model: PomdpModel, machine: FilterMachine):
    """Markov chain on (state, filter node) for a mimic automaton in the base model."""
    n_w, n_nodes = model.n_states, machine.n_nodes
    n = n_w * n_nodes
    chain = np.zeros((n, n))
    payoffs = np.zeros(n)
    for node in range(n_nodes):
        alpha = machine.action_dists[node]
        for w in range(n_w):
            row = w * n_nodes + node
            payoffs[row] = float(alpha @ model.payoff[w])
            for a in range(model.n_actions):
                if alpha[a] <= 0.0:
                    continue
                for w2 in range(n_w):
                    p = model.transition[w, a, w2]
                    if p <= 0.0:
                        continue
                    nxt = machine.edges[node, a, model.signal_of(w2)]
                    if nxt < 0:
                        raise SingularSystem("machine edge missing on a live action")
                    chain[row, w2 * n_nodes + nxt] += alpha[a] * p
    init = np.zeros(n)
    for w in range(n_w):
        if model.init[w] > 0.0:
            init[w * n_nodes + machine.init_nodes[model.signal_of(w)]] = model.init[w]
    return chain, init, payoffs


def longrun_average_exact_fsc(model: PomdpModel, controller, h) -> PayoffEstimate:
    """Exact long-run average payoff of a finite-state controller at duration h."""
    h = validate_stage_duration(h)
    if isinstance(controller, SequenceStrategy):
        controller = sequence_as_controller(controller, model.n_signals)
    if not isinstance(controller, FiniteStateController):
        raise TypeError(
            "exact long-run evaluation needs a finite-state controller or an "
            "action sequence; use longrun_average_mc for general strategies"
        )
    chain, init, payoffs = controller_product_chain(model, controller, h)
    value = cesaro_average(chain, init, payoffs)
    return PayoffEstimate(value, "exact", metadata={"h": h})


# --- Monte Carlo long-run average -------------------------------------------

def longrun_average_mc(model: PomdpModel, strategy: Strategy, h, horizon,
                       n_traj, seed_or_rng, n_checkpoints=50) -> PayoffEstimate:
    """Estimate the long-run average payoff by simulation.

    Cesaro means are logged at checkpoints; the reported value is the
    minimum of the mean curve over the trailing 20% of checkpoints (a
    conservative finite-horizon liminf proxy), with the standard error at
    that checkpoint.
    """
    h = validate_stage_duration(h)
    rng = as_generator(seed_or_rng)
    checkpoints = np.unique(
        np.linspace(1, horizon, min(n_checkpoints, horizon)).astype(np.int64)
    )
    per_traj = np.empty((n_traj, len(checkpoints)))
    for i in range(n_traj):
        traj = simulate_gh(model, strategy, h, horizon, rng)
        stage_payoffs = model.payoff[traj.states, traj.actions]
        cums = np.cumsum(stage_payoffs)
        per_traj[i] = cums[checkpoints - 1] / checkpoints
    curve = per_traj.mean(axis=0)
    if n_traj > 1:
        se = per_traj.std(axis=0, ddof=1) / math.sqrt(n_traj)
    else:
        se = np.zeros(len(checkpoints))
    window = max(1, math.ceil(TRAILING_WINDOW * len(checkpoints)))
    tail_idx = len(checkpoints) - window + int(np.argmin(curve[-window:]))
    return PayoffEstimate(
        float(curve[tail_idx]),
        "monte_carlo",
        std_error=float(se[tail_idx]),
        n=n_traj,
        metadata={
            "h": h,
            "horizon": int(horizon),
            "checkpoint": int(checkpoints[tail_idx]),
            "final_mean": float(curve[-1]),
            "final_se": float(se[-1]),
        },
    )


# --- discounted payoff of a fixed strategy -----------------------------------

def _discounted_exact_controller(model, controller, lam, h):
    eff = lam * h
    chain, init, payoffs = controller_product_chain(model, controller, h)
    n = chain.shape[0]
    try:
        values = np.linalg.solve(np.eye(n) - (1.0 - eff) * chain, eff * payoffs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return float(init @ values)


def _discounted_truncated(model, strategy, lam, h, tol, budget):
    eff = lam * h
    mh = stage_duration_transform(model, h) if h != 1.0 else model
    bound_m = max(model.max_abs_payoff, 1e-300)
    horizon = max(1, math.ceil(math.log(tol / bound_m) / math.log1p(-eff))) \
        if eff < 1.0 else 1
    # frontier: cursor merge key -> (cursor, mass vector over states)
    frontier = {}
    for w in range(model.n_states):
        if model.init[w] <= 0.0:
            continue
        cursor = strategy.start(model.signal_of(w))
        key = cursor.merge_key()
        if key not in frontier:
            frontier[key] = (cursor, np.zeros(model.n_states))
        frontier[key][1][w] += model.init[w]
    total = 0.0
    weight = eff
    visits = 0
    for stage in range(horizon):
        new_frontier = {}
        for cursor, mass in frontier.values():
            visits += 1
            if visits > budget:
                raise BudgetExceeded(visits, budget, "discounted enumeration")
            alpha = cursor.action_distribution()
            total += weight * float(mass @ model.payoff @ alpha)
            if stage + 1 == horizon:
                continue
            for a in np.nonzero(alpha > 0.0)[0]:
                pushed = (mass * alpha[a]) @ mh.transition[:, int(a), :]
                for s in range(model.n_signals):
                    part = np.where(model.signal_map == s, pushed, 0.0)
                    if part.sum() <= 0.0:
                        continue
                    nxt = cursor.step(int(a), s)
                    key = nxt.merge_key()
                    if key in new_frontier:
                        new_frontier[key][1][:] += part
                    else:
                        new_frontier[key] = (nxt, part)
        frontier = new_frontier
        weight *= 1.0 - eff
        if not frontier or weight == 0.0:
            break
    bound = model.max_abs_payoff * (1.0 - eff) ** horizon
    return total, bound, horizon


def discounted_payoff(model: PomdpModel, strategy: Strategy, lam, h,
                      method="exact", *, tol=1e-12, n_traj=1000,
                      seed=0, budget=DEFAULT_ENUMERATION_BUDGET) -> PayoffEstimate:
    """Expected discounted payoff with weights lam*h*(1-lam*h)^(i-1).

    method 'exact' solves the product chain for controller-representable
    strategies and otherwise enumerates to a horizon with tail bound
    M*(1-lam*h)^T <= tol; 'mc' simulates.
    """
    h = validate_stage_duration(h)
    lam = float(lam)
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"lambda must be in (0, 1], got {lam!r}")
    if lam * h > 1.0:
        raise ValueError("lambda*h must be at most 1")
    eff = lam * h
    meta = {"h": h, "lam": lam}
    if method == "exact":
        controller = strategy
        if isinstance(strategy, SequenceStrategy):
            controller = sequence_as_controller(strategy, model.n_signals)
        if isinstance(controller, FiniteStateController):
            value = _discounted_exact_controller(model, controller, lam, h)
            return PayoffEstimate(value, "exact", metadata=meta)
        value, bound, horizon = _discounted_truncated(
            model, strategy, lam, h, tol, budget
        )
        meta["horizon"] = horizon
        return PayoffEstimate(value, "truncated", bound=bound, metadata=meta)
    if method == "mc":
        rng = as_generator(seed)
        bound_m = max(model.max_abs_payoff, 1e-300)
        horizon = max(1, math.ceil(math.log(tol / bound_m) / math.log1p(-eff))) \
            if eff < 1.0 else 1
        horizon = min(horizon, 200_000)
        weights = eff * (1.0 - eff) ** np.arange(horizon)
        samples = np.empty(n_traj)
        for i in range(n_traj):
            traj = simulate_gh(model, strategy, h, horizon, rng)
            samples[i] = weights @ model.payoff[traj.states, traj.actions]
        se = samples.std(ddof=1) / math.sqrt(n_traj) if n_traj > 1 else 0.0
        meta["horizon"] = horizon
        return PayoffEstimate(float(samples.mean()), "monte_carlo",
                              std_error=float(se), n=n_traj, metadata=meta)
    raise ValueError(f"unknown method {method!r}")


# --- discounted value (sup over strategies) ----------------------------------

def _tabular_discounted_value(mh: PomdpModel, eff, sweeps):
    """Optimal discounted value per state of a fully observed model.

    A short value-iteration seed, then exact linear solves of the greedy
    policy iterated to Bellman stability (policy iteration), so the result
    is exact up to solver roundoff regardless of the discount.
    """
    n_w = mh.n_states
    values = np.zeros(n_w)
    for _ in range(min(sweeps, 200)):
        q = eff * mh.payoff + (1.0 - eff) * np.einsum(
            "waz,z->wa", mh.transition, values
        )
        new_values = q.max(axis=1)
        residual = float(np.max(np.abs(new_values - values)))
        values = new_values
        if residual <= VI_RESIDUAL_TOL:
            break
    policy = None
    for _ in range(100):
        q = eff * mh.payoff + (1.0 - eff) * np.einsum(
            "waz,z->wa", mh.transition, values
        )
        new_policy = q.argmax(axis=1)
        if policy is not None and np.array_equal(new_policy, policy):
            break
        policy = new_policy
        p_pi = mh.transition[np.arange(n_w), policy, :]
        g_pi = mh.payoff[np.arange(n_w), policy]
        values = np.linalg.solve(np.eye(n_w) - (1.0 - eff) * p_pi, eff * g_pi)
    q = eff * mh.payoff + (1.0 - eff) * np.einsum("waz,z->wa", mh.transition, values)
    bellman_residual = float(np.max(np.abs(q.max(axis=1) - values)))
    return values, bellman_residual


def _belief_lattice(n_states, resolution):
    points = []

    def fill(prefix, remaining, slots):
        if slots == 1:
            points.append(prefix + [remaining])
            return
        for c in range(remaining + 1):
            fill(prefix + [c], remaining - c, slots - 1)

    fill([], resolution, n_states)
    grid = np.asarray(points, dtype=np.float64) / resolution
    index = {tuple(row): i for i, row in enumerate(points)}
    return grid, index


def _project_to_lattice(belief, resolution, index):
    scaled = belief * resolution
    base = np.floor(scaled).astype(np.int64)
    short = resolution - int(base.sum())
    if short > 0:
        fractional = scaled - base
        for slot in np.argsort(-fractional)[:short]:
            base[slot] += 1
    return index[tuple(base.tolist())]


def _belief_grid_value(mh: PomdpModel, eff, resolution, sweeps):
    grid, index = _belief_lattice(mh.n_states, resolution)
    n_pts = grid.shape[0]
    n_a, n_s = mh.n_actions, mh.n_signals
    rewards = grid @ mh.payoff  # (N, A)
    succ_mass = np.zeros((n_pts, n_a, n_s))
    succ_idx = np.zeros((n_pts, n_a, n_s), dtype=np.int64)
    for i in range(n_pts):
        for a in range(n_a):
            pushed = grid[i] @ mh.transition[:, a, :]
            for s in range(n_s):
                part = np.where(mh.signal_map == s, pushed, 0.0)
                mass = part.sum()
                if mass <= 0.0:
                    continue
                succ_mass[i, a, s] = mass
                succ_idx[i, a, s] = _project_to_lattice(part / mass, resolution,
                                                        index)
    values = np.zeros(n_pts)
    residual = math.inf
    for sweep in range(sweeps):
        cont = np.einsum("nas,nas->na", succ_mass, values[succ_idx])
        new_values = (eff * rewards + (1.0 - eff) * cont).max(axis=1)
        residual = float(np.max(np.abs(new_values - values)))
        values = new_values
        if residual <= VI_RESIDUAL_TOL:
            break
    else:
        raise NotConverged(sweeps, residual)

    def value_at(belief):
        return float(values[_project_to_lattice(belief, resolution, index)])

    return value_at, residual


def _initial_belief_value(model, value_at):
    """Mix the belief-value over the first observed signal."""
    total = 0.0
    for s in range(model.n_signals):
        part = np.where(model.signal_map == s, model.init, 0.0)
        mass = part.sum()
        if mass > 0.0:
            total += mass * value_at(part / mass)
    return float(total)


def discounted_value_estimate(model: PomdpModel, lam, h, grid_resolution=60,
                              sweeps=400_000) -> PayoffEstimate:
    """Estimate the optimal discounted value at stage duration h.

    Fully observed models reduce to exact dynamic programming over states
    (no grid error); otherwise the value is computed on a belief simplex
    lattice with nearest-point projection and flagged approximate.  The
    belief-grid diagnostics report the stopping bound and a grid-refinement
    gap (value change from half resolution to full resolution).
    """
    h = validate_stage_duration(h)
    lam = float(lam)
    if not (0.0 < lam <= 1.0):
        raise ValueError(f"lambda must be in (0, 1], got {lam!r}")
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    eff = lam * h
    mh = stage_duration_transform(model, h) if h != 1.0 else model
    meta = {"h": h, "lam": lam}
    if is_fully_observed(model):
        values, bellman_residual = _tabular_discounted_value(mh, eff, sweeps)
        stopping = bellman_residual * (1.0 - eff) / eff if eff < 1.0 else 0.0
        return PayoffEstimate(
            float(model.init @ values), "exact",
            diagnostics={"stopping_bound": stopping},
            metadata=meta,
        )
    value_at, residual = _belief_grid_value(mh, eff, grid_resolution, sweeps)
    total = _initial_belief_value(model, value_at)
    coarse_at, _ = _belief_grid_value(mh, eff, max(2, grid_resolution // 2), sweeps)
    grid_gap = abs(total - _initial_belief_value(model, coarse_at))
    stopping = residual * (1.0 - eff) / eff if eff < 1.0 else 0.0
    meta["grid_resolution"] = grid_resolution
    return PayoffEstimate(
        total, "approximate",
        diagnostics={"stopping_bound": stopping, "grid_gap": grid_gap},
        metadata=meta,
    )


def asymptotic_value_estimate(model: PomdpModel, h, lam_grid=DEFAULT_LAMBDA_GRID,
                              grid_resolution=60, sweeps=400_000) -> PayoffEstimate:
    """Estimate the small-discount limit of the value at stage duration h.

    Sweeps the discount grid (strictly decreasing) and reports the last
    value; the slope between the last two grid points and the gap between
    them are the convergence diagnostics.  Explicitly approximate.
    """
    lam_grid = [float(x) for x in lam_grid]
    if len(lam_grid) < 2:
        raise ValueError("lam_grid needs at least two points")
    if any(b >= a for a, b in zip(lam_grid, lam_grid[1:])) or lam_grid[-1] <= 0:
        raise ValueError("lam_grid must be strictly decreasing and positive")
    estimates = [
        discounted_value_estimate(model, lam, h, grid_resolution, sweeps)
        for lam in lam_grid
    ]
    values = [e.value for e in estimates]
    gap = abs(values[-1] - values[-2])
    trend = (values[-1] - values[-2]) / (lam_grid[-1] - lam_grid[-2])
    stopping = sum(e.diagnostics.get("stopping_bound", 0.0) for e in estimates)
    grid_gap = estimates[-1].diagnostics.get("grid_gap", 0.0)
    return PayoffEstimate(
        values[-1], "approximate",
        diagnostics={"lambda_gap": gap, "stopping_bound": stopping,
                     "grid_gap": grid_gap},
        metadata={
            "h": float(h),
            "lambda_grid": tuple(lam_grid),
            "values": tuple(values),
            "lambda_trend": trend,
        },
    )
