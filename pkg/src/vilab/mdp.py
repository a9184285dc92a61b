"""Finite discounted MDPs: model, validation, Bellman backup, policy evaluation.

States are numbered ``1..n``; actions are nonnegative integers listed per
state in a fixed order, and that order decides ties (earliest wins).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

import jsonschema

from . import linalg
from .numeric import Backend, Scalar, ScalarFormatError


class BackendMismatchError(ValueError):
    pass


class InconsistentModelError(ArithmeticError):
    """Policy evaluation hit a singular system, so the model is not a valid MDP."""


class MdpFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Mdp:
    """Immutable finite MDP with sparse transitions.

    ``transitions`` maps ``(x, a)`` to ``((y, p), ...)``; ``rewards`` maps
    ``(x, a)`` to ``r(x, a)``. Construction does not check the model; call
    :func:`validate` for that.
    """

    n: int
    actions: Mapping[int, tuple[int, ...]]
    transitions: Mapping[tuple[int, int], tuple[tuple[int, Scalar], ...]]
    rewards: Mapping[tuple[int, int], Scalar]
    discount: Scalar
    backend: Backend = field(default_factory=Backend.rational)

    def __post_init__(self):
        actions = {int(x): tuple(acts) for x, acts in self.actions.items()}
        transitions = {}
        for key, row in self.transitions.items():
            items = row.items() if isinstance(row, Mapping) else row
            transitions[tuple(key)] = tuple((int(y), p) for y, p in items)
        object.__setattr__(self, "actions", MappingProxyType(actions))
        object.__setattr__(self, "transitions", MappingProxyType(transitions))
        object.__setattr__(self, "rewards", MappingProxyType(dict(self.rewards)))

    @property
    def states(self) -> range:
        return range(1, self.n + 1)

    def pairs(self) -> Iterator[tuple[int, int]]:
        """All state-action pairs in state order, then action order."""
        for x in self.states:
            for a in self.actions.get(x, ()):
                yield x, a

    @property
    def m(self) -> int:
        """Total number of state-action pairs."""
        return sum(1 for _ in self.pairs())

    def q_value(self, x: int, a: int, v: ValueFunction) -> Scalar:
        acc = self.backend.zero
        for y, p in self.transitions[(x, a)]:
            acc = acc + p * v[y]
        return self.rewards[(x, a)] + self.discount * acc

    def policy_count(self) -> int:
        count = 1
        for x in self.states:
            count *= len(self.actions[x])
        return count


@dataclass(frozen=True)
class Policy:
    """Stationary deterministic policy; ``choice[x - 1]`` is the action at state ``x``."""

    choice: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "choice", tuple(int(a) for a in self.choice))

    def __getitem__(self, x: int) -> int:
        if x < 1:
            raise IndexError(x)
        return self.choice[x - 1]

    def __len__(self) -> int:
        return len(self.choice)

    def as_dict(self) -> dict[str, int]:
        return {str(x): a for x, a in enumerate(self.choice, start=1)}

    def replace(self, x: int, a: int) -> Policy:
        choice = list(self.choice)
        choice[x - 1] = a
        return Policy(tuple(choice))


@dataclass(frozen=True)
class ValueFunction:
    """State-indexed values sharing one backend; ``v[x]`` for ``x`` in ``1..n``."""

    values: tuple
    backend: Backend

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))

    @classmethod
    def zeros(cls, mdp: Mdp) -> ValueFunction:
        return cls((mdp.backend.zero,) * mdp.n, mdp.backend)

    def __getitem__(self, x: int) -> Scalar:
        if x < 1:
            raise IndexError(x)
        return self.values[x - 1]

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


@dataclass(frozen=True)
class Violation:
    kind: str
    location: tuple
    message: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.location}: {self.message}"


def all_policies(mdp: Mdp) -> Iterator[Policy]:
    """Enumerate every deterministic stationary policy (product of action sets)."""
    for choice in itertools.product(*(mdp.actions[x] for x in mdp.states)):
        yield Policy(choice)


def validate(mdp: Mdp) -> list[Violation]:
    """Return every structural and probabilistic defect of ``mdp``.

    An empty list means the model is a valid discounted MDP: nonempty action
    sets, in-range references, nonnegative probabilities summing to one
    (exactly for rationals, within ``2**(2 - bits)`` otherwise) and a
    discount in ``(0, 1)``.
    """
    out: list[Violation] = []
    backend = mdp.backend
    if not isinstance(mdp.n, int) or mdp.n < 1:
        out.append(Violation("states", (), f"n must be a positive integer, got {mdp.n!r}"))
        return out

    for x in sorted(mdp.actions):
        if x not in mdp.states:
            out.append(Violation("reference", (x,), "action set for unknown state"))
    for x in mdp.states:
        acts = mdp.actions.get(x)
        if not acts:
            out.append(Violation("actions", (x,), "empty or missing action set"))
            continue
        if len(set(acts)) != len(acts):
            out.append(Violation("actions", (x,), "duplicate action identifiers"))
        for a in acts:
            if not isinstance(a, int) or a < 0:
                out.append(Violation("actions", (x, a), "action ids must be nonnegative integers"))

    known = set(mdp.pairs())
    for key in mdp.transitions:
        if key not in known:
            out.append(Violation("reference", key, "transitions for unknown state-action pair"))
    for key in mdp.rewards:
        if key not in known:
            out.append(Violation("reference", key, "reward for unknown state-action pair"))

    tolerance = None if backend.exact else Fraction(1, 2 ** (backend.bits - 2))
    with backend.context():
        for x, a in mdp.pairs():
            if (x, a) not in mdp.rewards:
                out.append(Violation("reward", (x, a), "missing reward"))
            elif not backend.owns(mdp.rewards[(x, a)]):
                out.append(Violation("backend", (x, a), "reward is not a scalar of the model backend"))
            row = mdp.transitions.get((x, a))
            if not row:
                out.append(Violation("row-sum", (x, a), "no transitions"))
                continue
            seen = set()
            foreign = False
            total = backend.zero
            for y, p in row:
                if y not in mdp.states:
                    out.append(Violation("reference", (x, a, y), "successor state out of range"))
                if y in seen:
                    out.append(Violation("reference", (x, a, y), "duplicate successor"))
                seen.add(y)
                if not backend.owns(p):
                    out.append(Violation("backend", (x, a, y), "probability is not a scalar of the model backend"))
                    foreign = True
                    continue
                if p < 0:
                    out.append(Violation("range", (x, a, y), f"negative probability {p}"))
                total = total + p
            if not foreign:
                gap = abs(backend.convert(total) - backend.one)
                if (gap != 0) if tolerance is None else (gap > tolerance):
                    out.append(Violation("row-sum", (x, a), f"probabilities sum to {total}, not 1"))

        if not backend.owns(mdp.discount):
            out.append(Violation("backend", (), "discount is not a scalar of the model backend"))
        elif not 0 < mdp.discount < 1:
            out.append(Violation("discount", (), f"discount {mdp.discount} outside (0, 1)"))
    return out


def _check_backend(mdp: Mdp, v: ValueFunction):
    if v.backend != mdp.backend:
        raise BackendMismatchError(f"value function is {v.backend}, model is {mdp.backend}")
    if len(v) != mdp.n:
        raise ValueError(f"value function has {len(v)} entries, model has {mdp.n} states")


def check_policy(mdp: Mdp, policy: Policy):
    if len(policy) != mdp.n:
        raise ValueError(f"policy covers {len(policy)} states, model has {mdp.n}")
    for x in mdp.states:
        if policy[x] not in mdp.actions[x]:
            raise ValueError(f"action {policy[x]} not available in state {x}")


def backup_with_policy(mdp: Mdp, v: ValueFunction) -> tuple[ValueFunction, Policy]:
    """One Bellman backup together with the greedy policy it selects.

    Ties go to the action listed first in ``mdp.actions[x]``.
    """
    _check_backend(mdp, v)
    values, choice = [], []
    with mdp.backend.context():
        for x in mdp.states:
            best_a, best_q = None, None
            for a in mdp.actions[x]:
                q = mdp.q_value(x, a, v)
                if best_q is None or q > best_q:
                    best_a, best_q = a, q
            values.append(best_q)
            choice.append(best_a)
    return ValueFunction(values, mdp.backend), Policy(choice)


def bellman_backup(mdp: Mdp, v: ValueFunction) -> ValueFunction:
    return backup_with_policy(mdp, v)[0]


def greedy_policy(mdp: Mdp, v: ValueFunction) -> Policy:
    return backup_with_policy(mdp, v)[1]


def policy_backup(mdp: Mdp, policy: Policy, v: ValueFunction) -> ValueFunction:
    """Backup restricted to the actions chosen by ``policy``."""
    _check_backend(mdp, v)
    with mdp.backend.context():
        values = [mdp.q_value(x, policy[x], v) for x in mdp.states]
    return ValueFunction(values, mdp.backend)


def evaluate_policy(mdp: Mdp, policy: Policy) -> ValueFunction:
    """Discounted value of ``policy`` from every start state.

    Solves ``(I - beta P_phi) v = r_phi`` by Gaussian elimination in the model's
    arithmetic, so rational models get the exact value.
    """
    check_policy(mdp, policy)
    backend = mdp.backend
    with backend.context():
        zero, one = backend.zero, backend.one
        a = [[zero] * mdp.n for _ in mdp.states]
        b = []
        for x in mdp.states:
            act = policy[x]
            row = a[x - 1]
            row[x - 1] = one
            for y, p in mdp.transitions[(x, act)]:
                row[y - 1] = row[y - 1] - mdp.discount * p
            b.append(mdp.rewards[(x, act)])
        try:
            values = linalg.solve(a, b)
        except linalg.SingularMatrixError as exc:
            raise InconsistentModelError(f"policy evaluation system is singular: {exc}") from exc
    return ValueFunction(values, backend)


def compare_policies(mdp: Mdp, first: Policy, second: Policy) -> tuple[int, ...]:
    """Per-state comparison of two policies' values.

    Entry ``x - 1`` is ``1`` if ``first`` earns strictly more from ``x``,
    ``-1`` if strictly less and ``0`` on equality.
    """
    v1 = evaluate_policy(mdp, first)
    v2 = evaluate_policy(mdp, second)
    return tuple((a > b) - (a < b) for a, b in zip(v1, v2))


# ---------------------------------------------------------------------------
# JSON document format

_SCALAR = {"type": "string"}
_INT = {"type": "integer"}

MDP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n", "discount", "actions", "transitions", "rewards", "backend"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "discount": _SCALAR,
        "actions": {
            "type": "object",
            "patternProperties": {"^[0-9]+$": {"type": "array", "items": _INT}},
            "additionalProperties": False,
        },
        "transitions": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["x", "a", "y", "p"],
                "properties": {"x": _INT, "a": _INT, "y": _INT, "p": _SCALAR},
            },
        },
        "rewards": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["x", "a", "r"],
                "properties": {"x": _INT, "a": _INT, "r": _SCALAR},
            },
        },
        "backend": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["rational", "bigfloat", "double"]},
                "precision_bits": {"type": "integer", "minimum": 2},
            },
        },
    },
}


def mdp_to_json(mdp: Mdp) -> dict:
    fmt = mdp.backend.format
    return {
        "n": mdp.n,
        "discount": fmt(mdp.discount),
        "actions": {str(x): list(mdp.actions[x]) for x in sorted(mdp.actions)},
        "transitions": [
            {"x": x, "a": a, "y": y, "p": fmt(p)}
            for (x, a), row in mdp.transitions.items()
            for y, p in row
        ],
        "rewards": [{"x": x, "a": a, "r": fmt(r)} for (x, a), r in mdp.rewards.items()],
        "backend": mdp.backend.to_json(),
    }


def mdp_from_json(doc: dict) -> Mdp:
    """Build an :class:`Mdp` from its JSON document; raises :class:`MdpFormatError`."""
    try:
        jsonschema.validate(doc, MDP_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise MdpFormatError(f"{where}: {exc.message}") from None
    try:
        backend = Backend.from_json(doc["backend"])
    except ValueError as exc:
        raise MdpFormatError(f"backend: {exc}") from None

    def scalar(text: str, where: str) -> Scalar:
        try:
            return backend.parse(text)
        except ScalarFormatError as exc:
            raise MdpFormatError(f"{where}: {exc}") from None

    transitions: dict[tuple[int, int], dict[int, Scalar]] = {}
    for i, t in enumerate(doc["transitions"]):
        row = transitions.setdefault((t["x"], t["a"]), {})
        if t["y"] in row:
            raise MdpFormatError(f"transitions/{i}: duplicate entry for ({t['x']}, {t['a']}, {t['y']})")
        row[t["y"]] = scalar(t["p"], f"transitions/{i}/p")
    rewards = {}
    for i, r in enumerate(doc["rewards"]):
        key = (r["x"], r["a"])
        if key in rewards:
            raise MdpFormatError(f"rewards/{i}: duplicate reward for {key}")
        rewards[key] = scalar(r["r"], f"rewards/{i}/r")
    return Mdp(
        n=doc["n"],
        actions={int(x): acts for x, acts in doc["actions"].items()},
        transitions=transitions,
        rewards=rewards,
        discount=scalar(doc["discount"], "discount"),
        backend=backend,
    )


def dumps(mdp: Mdp) -> str:
    return json.dumps(mdp_to_json(mdp), indent=2)


def loads(text: str) -> Mdp:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MdpFormatError(f"invalid JSON: {exc}") from None
    return mdp_from_json(doc)

