"""Acceptance criteria 1-11 at full scale, one pass/fail line each.

Run directly (``python tests/test_acceptance.py``) or through pytest; under
pytest the lines are repeated in the terminal summary.
"""
import pytest

from reluverify import checks

RESULTS = []

# wall-clock limits in seconds stated with the criteria
TIME_LIMITS = {1: 10.0, 2: 10.0, 3: 60.0, 4: 300.0, 5: 60.0}


@pytest.mark.slow
@pytest.mark.parametrize("number", [number for number, _, _ in checks.CHECKS])
def test_criterion(number):
    res = checks.run_check(number, quick=False)
    RESULTS.append(res)
    print(res.line())
    assert res.passed, res.line()
    assert res.seconds < TIME_LIMITS.get(number, float("inf")), res.line()


if __name__ == "__main__":
    import sys

    results = [checks.run_check(number, quick=False) for number, _, _ in checks.CHECKS]
    for res in results:
        print(res.line(), flush=True)
    sys.exit(0 if all(r.passed for r in results) else 1)
