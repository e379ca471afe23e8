"""Acceptance criteria at their stated tolerances; one pass/fail line each."""

import pytest

from cgolab.checks import CHECKS


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number, capsys, tmp_path):
    result = CHECKS[number](out=str(tmp_path))
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.message
