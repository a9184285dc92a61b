import io
from fractions import Fraction

import pytest
from hypothesis import given, settings

from vilab.fh import FhParams, Variant, build_fh, predicted_switch_iteration
from vilab.mdp import Mdp, Policy, ValueFunction, all_policies, evaluate_policy
from vilab.numeric import Backend
from vilab.solvers import (
    MaxIter,
    NotReached,
    SpanEpsilon,
    StopReason,
    TargetPolicy,
    measure_switch_iteration,
    policy_iteration,
    read_trace,
    value_iteration,
    worst_policy,
    write_trace,
)

from conftest import random_mdps

F = Fraction
OPTIMAL = Policy((0, 0, 0))


def brute_force_greedy_at_state1(eps_k, beta, steps):
    """Greedy action at state 1 for j = 1..steps, from the raw recursion (k=2)."""
    v3 = F(0)
    out = []
    reward_k = beta / (1 - beta) * (1 - eps_k)
    for _ in range(steps):
        q0, qk = beta * v3, reward_k
        out.append(0 if q0 >= qk else 2)
        v3 = 1 + beta * v3
    return out


# --- value iteration -----------------------------------------------------------


def test_target_policy_stops_at_switch(fh_k2):
    _, mdp = fh_k2
    trace = value_iteration(mdp, [TargetPolicy(OPTIMAL)])
    oracle = brute_force_greedy_at_state1(F(1, 256), F(1, 2), 12)
    assert oracle.index(0) + 1 == 9
    assert trace.stop_reason is StopReason.POLICY_TARGET_REACHED
    assert trace.count == 9
    assert [rec.greedy[1] for rec in trace.iterations[1:]] == oracle[:9]
    assert [rec.j for rec in trace.iterations] == list(range(10))


def test_single_action_mdp_fires_immediately():
    mdp = Mdp(2, {1: (4,), 2: (0,)}, {(1, 4): {2: F(1)}, (2, 0): {1: F(1)}},
              {(1, 4): F(1), (2, 0): F(-1)}, F(1, 3))
    trace = value_iteration(mdp, [TargetPolicy(Policy((4, 0)))])
    assert trace.count == 1


def test_exp_instance_stays_on_k_past_threshold():
    params = FhParams(1, (4,), F(9, 10), Variant.EXP, 128)
    mdp = build_fh(params)
    trace = value_iteration(mdp, [MaxIter(45)], trace_values=False)
    greedy = {rec.j: rec.greedy[1] for rec in trace.iterations[1:]}
    assert all(greedy[j] == 1 for j in range(1, 39))
    assert greedy[39] == 0


def test_max_iter_counts_backups_exactly(fh_k2):
    _, mdp = fh_k2
    for n in (1, 3, 17):
        trace = value_iteration(mdp, [MaxIter(n)])
        assert trace.count == n and len(trace.iterations) == n + 1
        assert trace.stop_reason is StopReason.MAX_ITERATIONS
    assert value_iteration(mdp, [MaxIter(3)]).last.greedy[1] == 2


def test_first_rule_to_fire_wins(fh_k2):
    _, mdp = fh_k2
    trace = value_iteration(mdp, [TargetPolicy(OPTIMAL), MaxIter(5)])
    assert trace.stop_reason is StopReason.MAX_ITERATIONS
    # both fire at j=9; list order decides
    trace = value_iteration(mdp, [TargetPolicy(OPTIMAL), MaxIter(9)])
    assert trace.stop_reason is StopReason.POLICY_TARGET_REACHED
    trace = value_iteration(mdp, [MaxIter(9), TargetPolicy(OPTIMAL)])
    assert trace.stop_reason is StopReason.MAX_ITERATIONS


def test_patience(fh_k2):
    _, mdp = fh_k2
    trace = value_iteration(mdp, [TargetPolicy(OPTIMAL, patience=4)])
    assert trace.count == 12


def test_span_rule(fh_k2):
    _, mdp = fh_k2
    trace = value_iteration(mdp, [SpanEpsilon(F(1, 1000))])
    assert trace.stop_reason is StopReason.SPAN_TOLERANCE
    prev, last = trace.iterations[-2].v, trace.last.v
    diffs = [a - b for a, b in zip(last, prev)]
    assert max(diffs) - min(diffs) < F(1, 1000)


def test_residuals_contract(fh_k2):
    params, mdp = fh_k2
    trace = value_iteration(mdp, [MaxIter(40)])
    residuals = [rec.residual for rec in trace.iterations[1:]]
    assert all(b <= params.beta * a for a, b in zip(residuals, residuals[1:]))


def test_rule_validation(fh_k2):
    _, mdp = fh_k2
    with pytest.raises(ValueError):
        value_iteration(mdp, [])
    with pytest.raises(ValueError):
        MaxIter(0)
    with pytest.raises(ValueError):
        SpanEpsilon(F(0))
    with pytest.raises(ValueError):
        TargetPolicy(OPTIMAL, patience=0)
    with pytest.raises(ValueError):
        value_iteration(mdp, [TargetPolicy(Policy((7, 0, 0)))])


def test_trace_without_values(fh_k2):
    _, mdp = fh_k2
    trace = value_iteration(mdp, [MaxIter(5)], trace_values=False)
    assert all(rec.v is None for rec in trace.iterations)
    assert trace.last.residual == F(1, 16)


def test_custom_start_vector(fh_k2):
    params, mdp = fh_k2
    star = ValueFunction((F(1), F(0), F(2)), Backend.rational())
    trace = value_iteration(mdp, [MaxIter(2)], v0=star)
    assert trace.last.v == star
    assert trace.last.residual == 0


def test_trace_export(fh_k2):
    _, mdp = fh_k2
    trace = value_iteration(mdp, [TargetPolicy(OPTIMAL)])
    buf = io.StringIO()
    write_trace(trace, mdp, buf)
    rows, summary = read_trace(buf.getvalue().splitlines())
    assert summary == {"stop_reason": "PolicyTargetReached", "iterations": 9}
    assert rows[9]["greedy"] == {"1": 0, "2": 0, "3": 0}
    assert rows[1]["residual"] == "1/1"
    assert rows[4]["v"]["3"] == "15/8"


def test_greedy_at_state1_never_reverts(fh_k2):
    _, mdp = fh_k2
    trace = value_iteration(mdp, [MaxIter(60)], trace_values=False)
    seq = [rec.greedy[1] for rec in trace.iterations[1:]]
    first = seq.index(0)
    assert all(a == 0 for a in seq[first:])


# --- switch measurement ---------------------------------------------------------


def test_measure_switch_dyadic(fh_k2):
    _, mdp = fh_k2
    assert measure_switch_iteration(mdp, 1, 0, 1000) == 9
    assert measure_switch_iteration(mdp, 1, 0, 8) == NotReached(8)


def test_measure_switch_bigfloat_matches_prediction():
    params = FhParams(1, (40,), F(1, 2), Variant.EXP)
    mdp = build_fh(params)
    assert measure_switch_iteration(mdp, 1, 0, 10**5) == predicted_switch_iteration(params) == 59


def test_double_precision_loses_the_switch():
    params = FhParams(1, (40,), F(1, 2), Variant.EXP)
    mdp = build_fh(params, Backend.double())
    # 1 - e**-40 rounds to 1, so r(1,1) equals beta/(1-beta); once V(3) rounds
    # to 2 the two actions tie and action 0 wins before the true switch
    assert mdp.rewards[(1, 1)] == 1.0
    measured = measure_switch_iteration(mdp, 1, 0, 10**5)
    assert measured != predicted_switch_iteration(params)
    assert measured == 55


def test_measure_rejects_unknown_action(fh_k2):
    _, mdp = fh_k2
    with pytest.raises(ValueError):
        measure_switch_iteration(mdp, 2, 1, 10)


# --- policy iteration ------------------------------------------------------------


def test_pi_from_worst_fh_start(fh_k2):
    _, mdp = fh_k2
    result = policy_iteration(mdp, Policy((2, 0, 0)))
    assert result.policy == OPTIMAL
    assert result.iterations == 2
    assert result.history == (Policy((2, 0, 0)), OPTIMAL)


def test_pi_from_optimum(fh_k2):
    _, mdp = fh_k2
    result = policy_iteration(mdp, OPTIMAL)
    assert result.policy == OPTIMAL and result.iterations == 1


def test_worst_policy_of_fh(fh_k2):
    _, mdp = fh_k2
    assert worst_policy(mdp) == Policy((1, 0, 0))


def brute_force_optimum(mdp):
    values = {p: evaluate_policy(mdp, p) for p in all_policies(mdp)}
    best = [max(v[x] for v in values.values()) for x in mdp.states]
    return best, values


@settings(max_examples=150, deadline=None)
@given(random_mdps(max_states=4, max_actions=3))
def test_pi_matches_enumeration(mdp):
    best, values = brute_force_optimum(mdp)
    start = Policy([mdp.actions[x][-1] for x in mdp.states])
    result = policy_iteration(mdp, start)
    assert list(result.values) == best
    assert result.iterations <= mdp.policy_count()
    # each improvement step raises the value somewhere and lowers it nowhere
    for before, after in zip(result.history, result.history[1:]):
        vb, va = values[before], values[after]
        assert all(a >= b for a, b in zip(va, vb)) and any(a > b for a, b in zip(va, vb))
