import math

import numpy as np
import pytest

from stagepomdp.epochs import simulate_gh, worker_rng
from stagepomdp.errors import BudgetExceeded
from stagepomdp.model import stage_duration_transform
from stagepomdp.strategies import (
    FiniteStateController,
    History,
    SequenceStrategy,
    TableStrategy,
    exact_history_distribution,
    sequence_as_controller,
    uniform_action,
)
from stagepomdp.verify import figure1_model, random_pomdp_model


def all_histories(model, depth):
    hists = [History(s) for s in range(model.n_signals)]
    for _ in range(depth - 1):
        hists = [h.child(a, s) for h in hists
                 for a in range(model.n_actions)
                 for s in range(model.n_signals)]
    return hists


def test_history_length_and_child():
    h = History(0)
    assert h.length == 1 and h.last_signal == 0
    h2 = h.child(1, 0)
    assert h2.length == 2 and h2.steps == ((1, 0),) and h2.last_signal == 0


def test_history_encoding_injective():
    keys = set()
    count = 0
    for depth in (1, 2, 3):
        for s1 in range(2):
            base = History(s1)
            prefixes = [base]
            for _ in range(depth - 1):
                prefixes = [p.child(a, s) for p in prefixes
                            for a in range(1) for s in range(2)]
            for hist in prefixes:
                keys.add(hist.encode(1, 2))
                count += 1
    assert len(keys) == count


def test_sequence_strategy_cycles():
    seq = SequenceStrategy.pure([0, 1], 2)
    hist = History(0)
    assert seq.act(hist)[0] == 1.0                      # length 1 -> a
    hist = hist.child(0, 0)
    assert seq.act(hist)[1] == 1.0                      # length 2 -> b
    hist = hist.child(1, 0)
    assert seq.act(hist)[0] == 1.0                      # length 3 -> a again


def test_sequence_cursor_matches_act():
    seq = SequenceStrategy([np.array([0.3, 0.7]), np.array([1.0, 0.0])])
    cursor = seq.start(0)
    hist = History(0)
    for step in range(5):
        assert np.array_equal(cursor.action_distribution(), seq.act(hist))
        cursor = cursor.step(step % 2, 0)
        hist = hist.child(step % 2, 0)


def test_constant_single_memory_controller_uniform():
    ctrl = FiniteStateController(
        init_memory=[0],
        rule=[[0.5, 0.5]],
        update=np.ones((1, 2, 1, 1)),
    )
    for hist in all_histories(figure1_model(), 3):
        assert np.array_equal(ctrl.act(hist), uniform_action(2))


def test_table_strategy_past_depth_default():
    hist1 = History(0)
    table = TableStrategy(2, 2, {hist1: [1.0, 0.0]}, default=[0.25, 0.75])
    assert np.array_equal(table.act(hist1), [1.0, 0.0])
    deep = hist1.child(0, 0).child(1, 0)
    assert np.array_equal(table.act(deep), [0.25, 0.75])
    # missing within-depth entries also fall back to the default
    assert np.array_equal(table.act(hist1.child(1, 0)), [0.25, 0.75])


def test_controller_posterior_conditions_on_actions():
    # two memories, distinguishable by the first action: posterior must
    # collapse onto the memory that could have produced the action
    ctrl = FiniteStateController(
        init_memory=[0],
        rule=[[1.0, 0.0], [0.0, 1.0]],
        update=np.stack([
            np.stack([np.full((1, 2), [0.5, 0.5]), np.full((1, 2), [0.5, 0.5])]),
            np.stack([np.full((1, 2), [0.5, 0.5]), np.full((1, 2), [0.5, 0.5])]),
        ]),
    )
    cursor = ctrl.start(0).step(0, 0)   # observed action 0 -> memory was q0
    assert np.allclose(cursor.belief, [0.5, 0.5])
    degenerate = ctrl.start(0).step(1, 0)   # q0 never plays action 1
    assert np.array_equal(degenerate.action_distribution(), uniform_action(2))


def test_sequence_as_controller_equivalent_mixed():
    # fully mixed sequence: every history is reachable, so the controller
    # posterior never degenerates and the two agree everywhere
    model = random_pomdp_model()
    seq = SequenceStrategy([np.array([0.3, 0.7]), np.array([0.6, 0.4])])
    ctrl = sequence_as_controller(seq, model.n_signals)
    for hist in all_histories(model, 3):
        assert np.allclose(ctrl.act(hist), seq.act(hist), atol=1e-14)


def test_sequence_as_controller_equivalent_pure_on_reachable():
    # a pure cyclic sequence only generates histories whose actions follow
    # the cycle; on those the controller agrees exactly, elsewhere the
    # controller's posterior is degenerate (uniform fallback by design)
    model = random_pomdp_model()
    seq = SequenceStrategy.pure([0, 1], model.n_actions)
    ctrl = sequence_as_controller(seq, model.n_signals)
    for hist in all_histories(model, 3):
        consistent = all(a == (t % 2) for t, (a, _) in enumerate(hist.steps))
        if consistent:
            assert np.array_equal(ctrl.act(hist), seq.act(hist))
        else:
            assert np.array_equal(ctrl.act(hist), uniform_action(2))


# --- exact history distribution --------------------------------------------------

def test_depth_one_distribution():
    model = random_pomdp_model()
    seq = SequenceStrategy.pure([0], model.n_actions)
    dist = exact_history_distribution(model, seq, 1)
    for w in range(model.n_states):
        if model.init[w] > 0:
            assert dist[(History(model.signal_of(w)), w)] == pytest.approx(
                model.init[w]
            )


def test_figure1_depth_two_deterministic():
    model = figure1_model()
    seq = SequenceStrategy.pure([0], 2)
    dist = exact_history_distribution(model, seq, 2)
    # the single deterministic move puts all mass on one history-state pair
    expected = (History(0, ((0, 0),)), 1)
    assert set(dist) == {expected}
    assert dist[expected] == pytest.approx(1.0)


def test_distribution_mass_one_at_depth_three():
    model = random_pomdp_model()
    seq = SequenceStrategy([np.array([0.4, 0.6])])
    dist = exact_history_distribution(model, seq, 3)
    assert sum(dist.values()) == pytest.approx(1.0, abs=1e-10)


def test_marginal_consistency():
    model = random_pomdp_model()
    strat = SequenceStrategy([np.array([0.4, 0.6]), np.array([0.9, 0.1])])
    for depth in (1, 2):
        shallow = exact_history_distribution(model, strat, depth)
        deep = exact_history_distribution(model, strat, depth + 1)
        by_hist = {}
        for (hist, _), p in deep.items():
            prefix = History(hist.first_signal, hist.steps[:-1])
            by_hist[prefix] = by_hist.get(prefix, 0.0) + p
        shallow_hist = {}
        for (hist, _), p in shallow.items():
            shallow_hist[hist] = shallow_hist.get(hist, 0.0) + p
        assert set(by_hist) == set(shallow_hist)
        for hist, p in shallow_hist.items():
            assert by_hist[hist] == pytest.approx(p, abs=1e-10)


def test_monte_carlo_history_consistency():
    # empirical frequencies of depth-3 histories in the duration-h model
    # match the exact distribution of the transformed model
    model = random_pomdp_model()
    h, depth, n = 0.5, 3, 20_000
    strat = SequenceStrategy([np.array([0.4, 0.6]), np.array([0.9, 0.1])])
    exact = {}
    for (hist, _), p in exact_history_distribution(
            stage_duration_transform(model, h), strat, depth).items():
        exact[hist] = exact.get(hist, 0.0) + p
    rng = worker_rng(31, 0)
    counts = {}
    for _ in range(n):
        traj = simulate_gh(model, strat, h, depth, rng)
        steps = tuple(
            (int(traj.actions[j]), int(traj.signals[j + 1]))
            for j in range(depth - 1)
        )
        hist = History(int(traj.signals[0]), steps)
        counts[hist] = counts.get(hist, 0) + 1
    for hist, p in exact.items():
        freq = counts.get(hist, 0) / n
        se = math.sqrt(max(p * (1 - p), 1e-12) / n)
        assert abs(freq - p) <= 3.5 * se


def test_budget_guard():
    model = random_pomdp_model()
    seq = SequenceStrategy.pure([0], model.n_actions)
    with pytest.raises(BudgetExceeded):
        exact_history_distribution(model, seq, 30, budget=1000)
