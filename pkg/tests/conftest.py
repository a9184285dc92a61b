from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import strategies as st

from vilab.fh import FhParams, Variant, build_fh
from vilab.mdp import Mdp, ValueFunction
from vilab.numeric import Backend

RATIONAL = Backend.rational()

# criterion id -> (passed, detail); printed at the end of the run
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[0])):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def fh_k2():
    """Dyadic instance with k=2, M=(4, 8), beta=1/2."""
    params = FhParams(2, (4, 8), Fraction(1, 2), Variant.DYADIC)
    return params, build_fh(params)


small_fraction = st.builds(
    Fraction,
    st.integers(min_value=-20, max_value=20),
    st.integers(min_value=1, max_value=12),
)

discounts = st.builds(
    lambda a, b: Fraction(a, a + b),
    st.integers(min_value=1, max_value=9),
    st.integers(min_value=1, max_value=9),
)


@st.composite
def random_mdps(draw, max_states: int = 5, max_actions: int = 4) -> Mdp:
    n = draw(st.integers(min_value=1, max_value=max_states))
    actions, transitions, rewards = {}, {}, {}
    for x in range(1, n + 1):
        count = draw(st.integers(min_value=1, max_value=max_actions))
        ids = draw(st.lists(st.integers(0, 9), min_size=count, max_size=count, unique=True))
        actions[x] = tuple(ids)
        for a in ids:
            weights = draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
            if not any(weights):
                weights[draw(st.integers(0, n - 1))] = 1
            total = sum(weights)
            transitions[(x, a)] = {y: Fraction(w, total) for y, w in enumerate(weights, start=1) if w}
            rewards[(x, a)] = draw(small_fraction)
    return Mdp(n, actions, transitions, rewards, draw(discounts), RATIONAL)


def value_vectors(n: int):
    return st.lists(small_fraction, min_size=n, max_size=n).map(lambda vs: ValueFunction(vs, RATIONAL))
