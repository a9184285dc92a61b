"""The three-state family on which value iteration needs many iterations.

State 1 offers action 0 (to state 3, reward 0) and actions ``1..k`` (to the
absorbing zero-reward state 2, reward ``beta/(1-beta) * (1 - eps_i)``).
State 3 is absorbing with reward 1. Action 0 is optimal, but value iteration
keeps choosing action ``k`` until ``beta**(j-1) <= eps_k``.

``eps_i`` is ``exp(-M_i)`` for the ``exp`` variant and ``2**-M_i`` for the
``dyadic`` variant, which stays exact under rational arithmetic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import gmpy2

from .mdp import Mdp, Policy, ValueFunction
from .numeric import Backend, Scalar, UnrepresentableError, exp_neg, parse_exact, power

GUARD_BITS = 64


class Variant(str, enum.Enum):
    EXP = "exp"
    DYADIC = "dyadic"


class NotFhInstanceError(ValueError):
    pass


@dataclass(frozen=True)
class FhParams:
    k: int
    M: tuple[int, ...]
    beta: Fraction
    variant: Variant = Variant.EXP
    precision_bits: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "M", tuple(self.M))
        object.__setattr__(self, "variant", Variant(self.variant))
        if isinstance(self.beta, str):
            object.__setattr__(self, "beta", parse_exact(self.beta))
        else:
            object.__setattr__(self, "beta", Fraction(self.beta))
        if not isinstance(self.k, int) or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if len(self.M) != self.k:
            raise ValueError(f"need exactly k={self.k} values of M, got {len(self.M)}")
        if any(not isinstance(m, int) or m < 1 for m in self.M):
            raise ValueError("every M_i must be a natural number >= 1")
        if any(a >= b for a, b in zip(self.M, self.M[1:])):
            raise ValueError("M must be strictly increasing")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.precision_bits is not None:
            if self.variant is Variant.DYADIC:
                raise ValueError("precision_bits applies to the exp variant only")
            if self.precision_bits < 2:
                raise ValueError("precision_bits must be >= 2")

    @property
    def m(self) -> int:
        """Total number of state-action pairs of the generated model."""
        return self.k + 3

    @property
    def M_k(self) -> int:
        return self.M[-1]

    def working_precision(self) -> int:
        if self.precision_bits is not None:
            return self.precision_bits
        return required_precision_bits(self)

    def default_backend(self) -> Backend:
        if self.variant is Variant.DYADIC:
            return Backend.rational()
        return Backend.bigfloat(self.working_precision())

    def to_json(self) -> dict:
        doc = {
            "k": self.k,
            "M": list(self.M),
            "beta": f"{self.beta.numerator}/{self.beta.denominator}",
            "variant": self.variant.value,
        }
        if self.precision_bits is not None:
            doc["precision_bits"] = self.precision_bits
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> FhParams:
        unknown = set(doc) - {"k", "M", "beta", "variant", "precision_bits"}
        if unknown:
            raise ValueError(f"unknown FhParams fields: {sorted(unknown)}")
        return cls(
            k=doc["k"],
            M=tuple(doc["M"]),
            beta=parse_exact(doc["beta"]),
            variant=Variant(doc["variant"]),
            precision_bits=doc.get("precision_bits"),
        )


def epsilon(params: FhParams, i: int, backend: Backend) -> Scalar:
    """``eps_i`` in ``backend``: ``exp(-M_i)`` or ``2**-M_i``."""
    m = params.M[i - 1]
    if params.variant is Variant.EXP:
        return exp_neg(m, backend)
    return backend.convert(Fraction(1, 2**m))


def build_fh(params: FhParams, backend: Backend | None = None) -> Mdp:
    """Build the instance for ``params``; ``backend`` defaults to the variant's natural one."""
    backend = backend or params.default_backend()
    if params.variant is Variant.EXP and backend.exact:
        raise UnrepresentableError("irrational value unrepresentable; use DyadicReward variant")
    with backend.context():
        beta = backend.convert(params.beta)
        one, zero = backend.one, backend.zero
        scale = beta / (one - beta)
        transitions = {(1, 0): ((3, one),), (2, 0): ((2, one),), (3, 0): ((3, one),)}
        rewards = {(1, 0): zero, (2, 0): zero, (3, 0): one}
        for i in range(1, params.k + 1):
            transitions[(1, i)] = ((2, one),)
            rewards[(1, i)] = scale * (one - epsilon(params, i, backend))
    actions = {1: tuple(range(params.k + 1)), 2: (0,), 3: (0,)}
    ordered = {key: transitions[key] for key in sorted(transitions)}
    return Mdp(3, actions, ordered, {key: rewards[key] for key in sorted(rewards)}, beta, backend)


def optimal_fh_policy() -> Policy:
    return Policy((0, 0, 0))


def closed_form_values(params: FhParams, j: int, backend: Backend | None = None) -> ValueFunction:
    """``V_j`` of value iteration started at zero, computed without iterating.

    For ``j >= 1``: ``V_j(2) = 0``, ``V_j(3) = (1 - beta**j)/(1 - beta)`` and
    ``V_j(1) = max(beta (1 - beta**(j-1))/(1 - beta), beta/(1 - beta) (1 - eps_k))``.
    """
    if j < 0:
        raise ValueError("j must be nonnegative")
    backend = backend or params.default_backend()
    with backend.context():
        zero, one = backend.zero, backend.one
        if j == 0:
            return ValueFunction((zero, zero, zero), backend)
        beta = backend.convert(params.beta)
        scale = beta / (one - beta)
        stay = scale * (one - power(beta, j - 1))
        leave = scale * (one - epsilon(params, params.k, backend))
        v3 = (one - power(beta, j)) / (one - beta)
        return ValueFunction((max(stay, leave), zero, v3), backend)


def _switch_threshold_bounds(params: FhParams) -> tuple[Fraction, Fraction]:
    """Rigorous rational bounds on ``M_k / -ln(beta)`` (``* ln 2`` for dyadic)."""
    p, q = params.beta.numerator, params.beta.denominator
    prec = 128 + 2 * max(p.bit_length(), q.bit_length(), params.M_k.bit_length())

    def bound(upper: bool) -> Fraction:
        # -ln(beta) = ln q - ln p; directed rounding on every step
        up, down = gmpy2.RoundUp, gmpy2.RoundDown
        # upper bound on t wants a lower bound on the rate, and vice versa
        rate_down, rate_up = (down, up) if upper else (up, down)
        with gmpy2.context(precision=prec, round=rate_down):
            ln_q = gmpy2.log(gmpy2.mpz(q))
        with gmpy2.context(precision=prec, round=rate_up):
            ln_p = gmpy2.log(gmpy2.mpz(p))
        with gmpy2.context(precision=prec, round=rate_down):
            rate = gmpy2.sub(ln_q, ln_p)
        with gmpy2.context(precision=prec, round=up if upper else down):
            numer = gmpy2.mpfr(params.M_k)
            if params.variant is Variant.DYADIC:
                numer = gmpy2.mul(numer, gmpy2.const_log2())
            t = gmpy2.div(numer, rate)
        return Fraction(*(int(c) for c in t.as_integer_ratio()))

    return bound(False), bound(True)


def switch_threshold(params: FhParams) -> Fraction:
    """``M_k / -ln(beta)`` (times ``ln 2`` for dyadic), accurate to ~128 bits."""
    lo, hi = _switch_threshold_bounds(params)
    return (lo + hi) / 2


def _log_switch_estimate(params: FhParams) -> int:
    lo, hi = _switch_threshold_bounds(params)
    if math.ceil(lo) != math.ceil(hi):
        # threshold within ~2**-120 of an integer; the exact check settles it
        return math.floor(lo) + 1
    return 1 + math.ceil(lo)


def predicted_switch_iteration(params: FhParams) -> int:
    """First iteration whose greedy policy picks action 0 at state 1.

    That is the smallest ``j >= 1`` with ``beta**(j-1) <= eps_k``; ties go
    to action 0. Dyadic instances are decided exactly by binary search; exp
    instances start from ``1 + ceil(M_k / -ln beta)`` and are confirmed at
    the working precision.
    """
    if params.variant is Variant.DYADIC:
        beta, eps = params.beta, Fraction(1, 2**params.M_k)

        def ok(j: int) -> bool:
            return power(beta, j - 1) <= eps

        hi = 1
        while not ok(hi):
            hi *= 2
        lo = hi // 2 + 1 if hi > 1 else 1
        while lo < hi:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid + 1
        return lo

    backend = Backend.bigfloat(params.working_precision())
    j = _log_switch_estimate(params)
    with backend.context():
        beta = backend.convert(params.beta)
        eps = epsilon(params, params.k, backend)
        while not power(beta, j - 1) <= eps:
            j += 1
        while j > 1 and power(beta, j - 2) <= eps:
            j -= 1
    return j


def required_precision_bits(params: FhParams) -> int:
    """Working precision for exp instances: ``ceil(M_k log2 e) + ceil(log2 j*) + 64``."""
    if params.variant is not Variant.EXP:
        raise ValueError("dyadic instances are exact and need no precision sizing")
    with gmpy2.context(precision=128, round=gmpy2.RoundUp):
        magnitude = int(gmpy2.ceil(gmpy2.mul(params.M_k, gmpy2.div(1, gmpy2.const_log2()))))
    j_star = _log_switch_estimate(params)
    return magnitude + (j_star - 1).bit_length() + GUARD_BITS


def _ceil_exp(n: int) -> int:
    # e**n is irrational for n >= 1, so a directed-up ceiling is exact at this precision
    with gmpy2.context(precision=128, round=gmpy2.RoundUp):
        hi = int(gmpy2.ceil(gmpy2.exp(n)))
    with gmpy2.context(precision=128, round=gmpy2.RoundDown):
        lo = int(gmpy2.ceil(gmpy2.exp(n)))
    assert hi == lo, "precision too small for e**n"
    return hi


def exponential_family(k_max: int, beta: Fraction | str, precision_override: int | None = None) -> list[FhParams]:
    """Instances ``k = 1..k_max`` with ``M_i = ceil(e**(i+3))`` and exp rewards."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    beta = parse_exact(beta) if isinstance(beta, str) else Fraction(beta)
    M = [_ceil_exp(i + 3) for i in range(1, k_max + 1)]
    family = []
    for k in range(1, k_max + 1):
        draft = FhParams(k, tuple(M[:k]), beta, Variant.EXP)
        bits = precision_override or required_precision_bits(draft)
        family.append(FhParams(k, tuple(M[:k]), beta, Variant.EXP, bits))
    return family


def recover_params(mdp: Mdp) -> FhParams:
    """Recognise an instance of the family and recover its parameters.

    ``M_i`` is recovered by rounding ``-ln eps_i`` (exp) or ``-log2 eps_i``
    (dyadic); the variant is dyadic only for rational models whose
    ``eps_i`` are powers of two.
    """
    acts = dict(mdp.actions)
    if mdp.n != 3 or acts.get(2) != (0,) or acts.get(3) != (0,):
        raise NotFhInstanceError("not a three-state instance with single actions at states 2 and 3")
    k = len(acts[1]) - 1
    if k < 1 or acts[1] != tuple(range(k + 1)):
        raise NotFhInstanceError("state 1 must offer actions 0..k with k >= 1")
    backend = mdp.backend
    with backend.context():
        one = backend.one
        expected = {(1, 0): ((3, one),), (2, 0): ((2, one),), (3, 0): ((3, one),)}
        expected.update({(1, i): ((2, one),) for i in range(1, k + 1)})
        if dict(mdp.transitions) != expected:
            raise NotFhInstanceError("transition structure differs from the family")
        if (mdp.rewards[(1, 0)], mdp.rewards[(2, 0)], mdp.rewards[(3, 0)]) != (0, 0, 1):
            raise NotFhInstanceError("rewards of action 0 differ from the family")
        beta = mdp.discount
        scale = beta / (one - beta)
        eps = [one - mdp.rewards[(1, i)] / scale for i in range(1, k + 1)]
    if any(not 0 < e < 1 for e in eps):
        raise NotFhInstanceError("rewards at state 1 are not of the form scale * (1 - eps)")
    if backend.exact:
        if not all(e.numerator == 1 and e.denominator & (e.denominator - 1) == 0 for e in eps):
            raise NotFhInstanceError("rational instance with non-dyadic epsilons")
        M = tuple(e.denominator.bit_length() - 1 for e in eps)
        return FhParams(k, M, beta, Variant.DYADIC)
    # rounded discounts are mapped back to the simplest nearby rational
    beta_exact = Fraction(*(int(c) for c in beta.as_integer_ratio()))
    beta_exact = beta_exact.limit_denominator(2 ** (backend.bits // 2))
    with backend.context():
        M = tuple(int(gmpy2.rint(-gmpy2.log(e))) for e in eps)
    bits = backend.precision_bits if backend.kind == "bigfloat" else None
    return FhParams(k, M, beta_exact, Variant.EXP, bits)
