"""Acceptance criteria 1-10 at their stated tolerances (about 25 minutes in total)."""

import pytest

from mixgate import acceptance

from conftest import ACCEPTANCE_LINES

SLOW = {3, 6, 10}


@pytest.mark.parametrize("number", [
    pytest.param(n, marks=pytest.mark.slow) if n in SLOW else n for n in acceptance.CHECKS
], ids=lambda n: f"criterion{n}")
def test_criterion(number):
    result = acceptance.run_all([number], echo=None)[0]
    ACCEPTANCE_LINES.append(result.line())
    print(result.line())
    assert result.passed, result.line()
