"""Value iteration with pluggable stopping rules, and Howard policy iteration."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .mdp import (
    Mdp,
    Policy,
    ValueFunction,
    backup_with_policy,
    check_policy,
    evaluate_policy,
)
from .numeric import Scalar


class StopReason(str, enum.Enum):
    POLICY_TARGET_REACHED = "PolicyTargetReached"
    SPAN_TOLERANCE = "SpanTolerance"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class TargetPolicy:
    """Stop once the greedy policy has equalled ``policy`` for ``patience`` iterations in a row."""

    policy: Policy
    patience: int = 1

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class SpanEpsilon:
    """Stop when the span of ``V_j - V_{j-1}`` drops below ``epsilon``."""

    epsilon: Scalar

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class MaxIter:
    limit: int

    def __post_init__(self):
        if self.limit < 1:
            raise ValueError("iteration limit must be >= 1")


StopRule = TargetPolicy | SpanEpsilon | MaxIter


@dataclass(frozen=True)
class IterationRecord:
    """``v`` is ``V_j`` (``None`` when values are not traced); ``greedy`` is
    the policy chosen by the backup that produced ``V_j`` (``None`` for j = 0)."""

    j: int
    v: ValueFunction | None
    greedy: Policy | None
    residual: Scalar | None


@dataclass
class VITrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    stop_reason: StopReason | None = None

    @property
    def last(self) -> IterationRecord:
        return self.iterations[-1]

    @property
    def count(self) -> int:
        """Number of backups performed."""
        return self.last.j

    def values(self) -> list[ValueFunction]:
        return [rec.v for rec in self.iterations]


def value_iteration(
    mdp: Mdp,
    rules: Sequence[StopRule],
    v0: ValueFunction | None = None,
    trace_values: bool = True,
) -> VITrace:
    """Run ``V_{j+1} = T V_j`` from ``v0`` (zero by default) until a rule fires.

    Rules are checked in the order given after each backup; the first one
    that fires names the stop reason.
    """
    if not rules:
        raise ValueError("value_iteration needs at least one stop rule")
    for rule in rules:
        if isinstance(rule, TargetPolicy):
            check_policy(mdp, rule.policy)
    v = ValueFunction.zeros(mdp) if v0 is None else v0
    trace = VITrace()
    trace.iterations.append(IterationRecord(0, v if trace_values else None, None, None))
    streak = {id(rule): 0 for rule in rules}
    backend = mdp.backend
    j = 0
    while True:
        new_v, greedy = backup_with_policy(mdp, v)
        j += 1
        with backend.context():
            diffs = [a - b for a, b in zip(new_v, v)]
            residual = max(abs(d) for d in diffs)
        trace.iterations.append(IterationRecord(j, new_v if trace_values else None, greedy, residual))
        v = new_v
        for rule in rules:
            if isinstance(rule, TargetPolicy):
                streak[id(rule)] = streak[id(rule)] + 1 if greedy == rule.policy else 0
                if streak[id(rule)] >= rule.patience:
                    trace.stop_reason = StopReason.POLICY_TARGET_REACHED
            elif isinstance(rule, SpanEpsilon):
                with backend.context():
                    if max(diffs) - min(diffs) < rule.epsilon:
                        trace.stop_reason = StopReason.SPAN_TOLERANCE
            elif j >= rule.limit:
                trace.stop_reason = StopReason.MAX_ITERATIONS
            if trace.stop_reason is not None:
                return trace


@dataclass(frozen=True)
class NotReached:
    """The target action was not selected within ``max_iter`` iterations."""

    max_iter: int

    def __str__(self) -> str:
        return "not_reached"


def measure_switch_iteration(mdp: Mdp, state: int, target_action: int, max_iter: int) -> int | NotReached:
    """Smallest ``j >= 1`` whose greedy policy (from ``V_{j-1}``, ``V_0 = 0``)
    picks ``target_action`` at ``state``."""
    if target_action not in mdp.actions[state]:
        raise ValueError(f"action {target_action} not available in state {state}")
    v = ValueFunction.zeros(mdp)
    for j in range(1, max_iter + 1):
        v, greedy = backup_with_policy(mdp, v)
        if greedy[state] == target_action:
            return j
    return NotReached(max_iter)


@dataclass(frozen=True)
class PIResult:
    policy: Policy
    iterations: int
    history: tuple[Policy, ...]
    values: ValueFunction


def _improve(mdp: Mdp, policy: Policy, v: ValueFunction) -> Policy:
    choice = []
    with mdp.backend.context():
        for x in mdp.states:
            incumbent = policy[x]
            best_a, best_q = incumbent, mdp.q_value(x, incumbent, v)
            for a in mdp.actions[x]:
                q = mdp.q_value(x, a, v)
                if q > best_q:
                    best_a, best_q = a, q
            choice.append(best_a)
    return Policy(choice)


def policy_iteration(mdp: Mdp, initial: Policy, max_iter: int | None = None) -> PIResult:
    """Howard policy iteration from ``initial``.

    Each iteration evaluates the current policy exactly and improves it
    greedily, keeping the incumbent action on ties (then the earliest
    strictly better action). ``iterations`` counts evaluate-and-improve
    rounds, including the final one that confirms the policy is stable.
    """
    check_policy(mdp, initial)
    limit = mdp.policy_count() if max_iter is None else max_iter
    policy = initial
    history = [policy]
    for count in range(1, limit + 1):
        v = evaluate_policy(mdp, policy)
        improved = _improve(mdp, policy, v)
        if improved == policy:
            return PIResult(policy, count, tuple(history), v)
        policy = improved
        history.append(policy)
    raise RuntimeError(f"policy iteration did not stabilise within {limit} iterations")


def worst_policy(mdp: Mdp) -> Policy:
    """A policy minimising the discounted value from every state."""
    negated = Mdp(
        mdp.n,
        mdp.actions,
        mdp.transitions,
        {key: -r for key, r in mdp.rewards.items()},
        mdp.discount,
        mdp.backend,
    )
    first = Policy([mdp.actions[x][0] for x in mdp.states])
    return policy_iteration(negated, first).policy


def optimal_policy(mdp: Mdp) -> Policy:
    first = Policy([mdp.actions[x][0] for x in mdp.states])
    return policy_iteration(mdp, first).policy


def write_trace(trace: VITrace, mdp: Mdp, fp: IO[str]):
    """Write ``trace`` as JSON lines, closing with a summary record."""
    fmt = mdp.backend.format
    for rec in trace.iterations:
        row = {
            "j": rec.j,
            "greedy": rec.greedy.as_dict() if rec.greedy is not None else {},
            "residual": fmt(rec.residual) if rec.residual is not None else None,
        }
        if rec.v is not None:
            row["v"] = {str(x): fmt(val) for x, val in enumerate(rec.v, start=1)}
        fp.write(json.dumps(row) + "\n")
    fp.write(json.dumps({"stop_reason": trace.stop_reason.value, "iterations": trace.count}) + "\n")


def read_trace(lines: Iterable[str]) -> tuple[list[dict], dict]:
    rows = [json.loads(line) for line in lines if line.strip()]
    return rows[:-1], rows[-1]
