"""Acceptance suite: the thirteen end-to-end criteria at full budget.

Each test runs one experiment from :mod:`flowpost.experiments`, prints its
pass/fail line and then asserts the outcome. Thresholds live in the check
functions and are shared with ``flowpost bench``. The complete run trains
several models and takes on the order of an hour on one CPU core.
"""
import pytest

from flowpost.experiments import FULL, run_bench

CRITERIA = [
    ("C1", "conjugate"),
    ("C2", "funnel_joint"),
    ("C3", "funnel_posterior"),
    ("C4", "coverage"),
    ("C5", "nesting"),
    ("C6", "monotonicity"),
    ("C7", "rank"),
    ("C8", "gradients"),
    ("C9", "lemma"),
    ("C10", "ode_order"),
    ("C11", "metrics"),
    ("C12", "amortization"),
    ("C13", "scaling"),
]


@pytest.mark.parametrize("key,name", CRITERIA, ids=[f"{k}_{n}" for k, n in CRITERIA])
def test_criterion(key, name, record_criterion):
    (result,) = run_bench(name, seed=0, quick=False)
    assert result.key == key
    record_criterion(result)
    print(result.line())
    assert result.passed, result.line()


def test_full_budget_matches_protocol():
    # guards against someone shrinking the protocol sizes to get a pass
    assert FULL.conj_rows == 5000 and FULL.n_obs == 20
    assert FULL.coverage_reps == 100 and FULL.mh_steps == 100_000
