import hypothesis
import hypothesis.strategies as st
import numpy as np
import pytest
from fractions import Fraction

from rauzylab.combinatorics import Permutation, irreducible_permutations
from rauzylab.iet import LengthVector

np.seterr(all="raise")

# acceptance verdicts, printed once more at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

IRREDUCIBLE = {d: list(irreducible_permutations(d)) for d in range(2, 6)}


@st.composite
def irreducible(draw, dims=(2, 3, 4, 5)):
    d = draw(st.sampled_from(dims))
    return draw(st.sampled_from(IRREDUCIBLE[d]))


@st.composite
def rational_lengths(draw, d, max_den=10**6):
    vals = draw(st.lists(st.integers(1, max_den), min_size=d, max_size=d))
    den = draw(st.integers(1, max_den))
    return LengthVector.of([Fraction(v, den) for v in vals])


@st.composite
def perm_and_lengths(draw, dims=(2, 3, 4, 5)):
    p = draw(irreducible(dims))
    return p, draw(rational_lengths(p.d))


@pytest.fixture
def p2():
    return Permutation.parse("a b / b a")


@pytest.fixture
def p3():
    return Permutation.reversal(3)


@pytest.fixture
def p4():
    return Permutation.reversal(4)
