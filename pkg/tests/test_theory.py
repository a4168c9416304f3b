"""Closed-form bound verifiers."""

from __future__ import annotations

import numpy as np
import pytest

from memtrack import theory
from memtrack.memory_prompt import alibi_slopes


def test_tail_mass_bound_hand_case():
    """beta=-0.1, K=45: bound factors computed independently."""
    report = theory.tail_mass(-0.1, 45, 200)
    expected_bound = np.exp(-4.6) / (1.0 - np.exp(-0.1))
    assert abs(report.bound - expected_bound) < 1e-12
    assert report.exact_tail < report.bound


def test_horizon_formula_value():
    report = theory.tail_mass(-0.1, 45, 200)
    assert abs(report.horizon(0.01) - (np.log(100.0) / 0.1 - 1.0)) < 1e-9
    assert abs(report.horizon(0.01) - 45.051701859880914) < 1e-9


def test_strong_decay_tiny_tail():
    report = theory.tail_mass(-20.0, 1, 100)
    assert report.exact_tail < 1e-8


def test_tail_mass_domain_errors():
    with pytest.raises(theory.DomainError):
        theory.tail_mass(0.0, 10, 20)
    with pytest.raises(theory.DomainError):
        theory.tail_mass(-0.5, 20, 20)


def test_closed_form_matches_naive_summation():
    rng = np.random.default_rng(0)
    for _ in range(30):
        beta = -float(rng.uniform(0.01, 5.0))
        k = int(rng.integers(0, 50))
        l = k + int(rng.integers(1, 10_000))
        exact = theory.tail_mass(beta, k, l).exact_tail
        naive = theory.tail_mass_naive(beta, k, l)
        assert abs(exact - naive) <= 1e-12 * max(1.0, naive)


def test_tail_increases_with_l_converging_to_bound():
    tails = [theory.tail_mass(-0.1, 10, l).exact_tail for l in (20, 50, 100, 1000)]
    assert all(a < b for a, b in zip(tails, tails[1:]))
    bound = theory.tail_mass(-0.1, 10, 1000).bound
    assert tails[-1] <= bound
    assert bound - tails[-1] < 1e-12


def test_horizon_within_one_of_formula_grid():
    for beta in (-0.01, -0.05, -0.1, -0.5):
        for eta in (0.1, 0.01, 0.001):
            formula = int(np.ceil(np.log(1.0 / eta) / abs(beta) - 1.0))
            scanned = theory.min_horizon_with_bound(beta, eta)
            assert abs(scanned - formula) <= 1


def test_ratio_law_values():
    assert theory.attention_ratio_law(-0.3, 0) == 1.0
    assert abs(theory.attention_ratio_law(-0.25, 4) - np.exp(-1.0)) < 1e-12


def test_ratio_law_independent_of_bank_size():
    vals = {theory.attention_ratio_law(-0.2, 3, n_memories=n) for n in (8, 32, 200)}
    assert max(vals) - min(vals) < 1e-15


def test_ratio_law_on_deployed_slopes():
    for m in alibi_slopes(4):
        for gap in range(1, 17):
            measured = theory.attention_ratio_law(-float(m), gap)
            assert abs(measured - np.exp(-m * gap)) <= 1e-12


def test_ssm_influence_decay_rows():
    rows = theory.ssm_influence_decay(seed=0)
    assert [r[0] for r in rows] == [1, 2, 4, 8, 16]
    for k, measured, bound, ratio in rows:
        assert ratio <= 1.0 + 1e-12
        assert measured <= bound * (1 + 1e-12)


def test_ssm_influence_decay_many_draws():
    for seed in range(25):
        for _, measured, bound, ratio in theory.ssm_influence_decay(seed=seed):
            assert ratio <= 1.0 + 1e-12


def test_theory_report_all_ok():
    report = theory.theory_report(heads=4, n_decay_draws=5)
    assert report["all_ok"]
