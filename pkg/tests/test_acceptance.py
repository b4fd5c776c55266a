"""The twelve acceptance criteria, one test each.

Each test prints a single PASS/FAIL line with the observed numbers.  Set
DISTFLOW_LEVEL=full for the larger sample sizes.
"""

import os

import pytest

from distflow.verify import CRITERIA, format_line, run_criterion

LEVEL = os.environ.get("DISTFLOW_LEVEL", "quick")


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    r = run_criterion(number, seed=0, workers=1, level=LEVEL)
    with capsys.disabled():
        print("\n" + format_line(r))
    assert r.passed, format_line(r)
