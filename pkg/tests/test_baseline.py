import numpy as np
import pytest

from latprune.baseline import (
    BaselineState,
    exponential_schedule,
    halp_step,
    run_halp,
    write_trace_csv,
)
from latprune.errors import EmptyLayerResult, InvalidBudget
from latprune.extract import validate_plan
from latprune.importance import ChannelScores, aggregate_layer_importance
from latprune.latency import dense_latency, halp_channel_cost, halp_error_bound
from latprune.netgraph import NetworkSpec, validate_network
from latprune.solver import build_problem
from latprune.synth import medium_instance

from conftest import dense_table, make_layer


def test_schedule_single_step_is_target():
    assert exponential_schedule(100.0, 25.0, 1) == [25.0]


def test_schedule_geometric_midpoint():
    assert exponential_schedule(100.0, 25.0, 2) == pytest.approx([50.0, 25.0], rel=1e-12)


def test_schedule_last_element_is_target():
    for steps in (1, 3, 7, 30):
        budgets = exponential_schedule(12.5, 3.3, steps)
        assert budgets[-1] == pytest.approx(3.3, abs=1e-9)
        assert all(b1 > b2 for b1, b2 in zip(budgets, budgets[1:]))
        if steps > 1:
            assert budgets[0] < 12.5


def test_schedule_rejects_bad_budgets():
    with pytest.raises(InvalidBudget):
        exponential_schedule(10.0, 0.0, 5)
    with pytest.raises(InvalidBudget):
        exponential_schedule(10.0, 11.0, 5)
    with pytest.raises(InvalidBudget):
        exponential_schedule(10.0, 5.0, 0)


def _stale_toy():
    """Two layers; the second layer's table gets cheaper as inputs shrink,
    so the frozen-input estimate undercounts the true latency."""
    net = validate_network(NetworkSpec(
        layers=(make_layer(1, 2), make_layer(2, 2)),
        input_channels=2,
    ))
    tables = {
        1: dense_table(1, [[1.0, 2.0], [1.0, 2.0]]),
        2: dense_table(2, [[5.0, 6.0], [2.0, 3.0]]),
    }
    scores = {
        1: ChannelScores(1, np.asarray([1.0, 0.1])),
        2: ChannelScores(2, np.asarray([1.0, 1.0])),
    }
    imps = {lid: aggregate_layer_importance(s) for lid, s in scores.items()}
    return net, tables, imps


def test_slack_budget_removes_nothing():
    net, tables, imps = _stale_toy()
    state = BaselineState(kept={1: 2, 2: 2})
    new_state, row = halp_step(net, imps, tables, state, budget_ms=5.0)
    assert new_state.kept == {1: 2, 2: 2}
    assert row.estimated_ms == 5.0
    assert row.true_ms == 5.0


def test_stale_estimate_undercounts_by_the_error_terms():
    net, tables, imps = _stale_toy()
    state = BaselineState(kept={1: 2, 2: 2})
    new_state, row = halp_step(net, imps, tables, state, budget_ms=4.0)
    assert new_state.kept == {1: 1, 2: 2}
    assert row.estimated_ms <= 4.0
    assert row.true_ms > row.estimated_ms
    # the undercount is exactly the summed stale-cost errors of layer 2
    t2 = tables[2]
    signed_error = sum(
        halp_channel_cost(t2, 1, j) - halp_channel_cost(t2, 2, j) for j in (1, 2)
    )
    assert row.true_ms - row.estimated_ms == pytest.approx(signed_error, abs=1e-12)
    for j in (1, 2):
        err = abs(halp_channel_cost(t2, 1, j) - halp_channel_cost(t2, 2, j))
        assert err <= halp_error_bound(t2, 2, 1, j) + 1e-15


def test_empty_layer_is_surfaced():
    net, tables, imps = _stale_toy()
    state = BaselineState(kept={1: 2, 2: 2})
    with pytest.raises(EmptyLayerResult) as exc:
        halp_step(net, imps, tables, state, budget_ms=2.5)
    assert exc.value.layer_ids == [2]
    assert exc.value.trace[0].layers_at_zero == 1
    # the failed step did not silently bump counts back up
    assert state.kept == {1: 2, 2: 2}


def test_run_halp_trace_and_plan():
    net, scores, tables = medium_instance()
    dense = dense_latency(net, tables)
    p = build_problem(net, scores, tables, budget_ms=0.55 * dense)
    plan, trace = run_halp(p, steps=8)
    assert len(trace) == 8
    assert [row.step for row in trace] == list(range(1, 9))
    assert plan.removed_blocks == ()
    assert plan.solver_status == "Baseline"
    # coupling-aware packing keeps the plan structurally valid
    report = validate_plan(plan, net, tables, budget_ms=float("inf"))
    assert report.ok


def test_iterative_runs_track_budget_better_than_one_shot():
    net, scores, tables = medium_instance()
    dense = dense_latency(net, tables)
    budget = 0.55 * dense
    p = build_problem(net, scores, tables, budget_ms=budget)

    def final_deviation(steps):
        try:
            _, trace = run_halp(p, steps)
        except EmptyLayerResult:
            return float("inf")
        return abs(trace[-1].true_ms - budget) / budget

    assert final_deviation(1) > final_deviation(20)


def test_per_channel_errors_bounded_throughout_run():
    net, scores, tables = medium_instance()
    imps = {lid: aggregate_layer_importance(s) for lid, s in scores.items()}
    dense = dense_latency(net, tables)
    budgets = exponential_schedule(dense, 0.55 * dense, 6)
    state = BaselineState(kept={l.layer_id: l.max_out_channels for l in net.layers})
    for budget in budgets:
        frozen = {
            l.layer_id: net.input_channels if l.layer_id == 1 else state.kept[l.layer_id - 1]
            for l in net.layers
        }
        state, _ = halp_step(net, imps, tables, state, budget)
        for layer in net.layers:
            lid = layer.layer_id
            p = frozen[lid]
            p_hat = net.input_channels if lid == 1 else state.kept[lid - 1]
            t = tables[lid]
            for j in range(1, state.kept[lid] + 1):
                err = abs(halp_channel_cost(t, p_hat, j) - halp_channel_cost(t, p, j))
                assert err <= halp_error_bound(t, p, p_hat, j) + 1e-12


def test_estimate_converges_to_truth_on_monotone_tables():
    net, scores, tables = medium_instance()
    dense = dense_latency(net, tables)
    p = build_problem(net, scores, tables, budget_ms=0.5 * dense)
    _, trace = run_halp(p, steps=20)
    gaps = [abs(r.estimated_ms - r.true_ms) / r.budget_ms for r in trace]
    assert gaps[-1] < gaps[0]
    assert gaps[-1] < 0.05


def test_trace_csv_format(tmp_path):
    net, scores, tables = medium_instance()
    p = build_problem(net, scores, tables, budget_ms=0.5 * dense_latency(net, tables))
    _, trace = run_halp(p, steps=3)
    out = tmp_path / "trace.csv"
    write_trace_csv(trace, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "step,budget_ms,estimated_ms,true_ms,layers_at_zero"
    assert len(lines) == 4
