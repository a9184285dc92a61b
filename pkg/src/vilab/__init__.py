"""Value iteration vs. policy iteration on discounted MDPs, in exact and
arbitrary-precision arithmetic."""

from .fh import (
    FhParams,
    Variant,
    build_fh,
    closed_form_values,
    exponential_family,
    predicted_switch_iteration,
    required_precision_bits,
)
from .mdp import (
    Mdp,
    Policy,
    ValueFunction,
    bellman_backup,
    compare_policies,
    evaluate_policy,
    greedy_policy,
    validate,
)
from .numeric import Backend, exp_neg, power
from .solvers import (
    MaxIter,
    NotReached,
    SpanEpsilon,
    TargetPolicy,
    measure_switch_iteration,
    policy_iteration,
    value_iteration,
)

__version__ = "0.1.0"
