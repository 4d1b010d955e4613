import math

import numpy as np
import pytest

from dflsim import rng
from dflsim.analysis import (
    BoundParams,
    Ordering,
    accuracy_variance,
    fairness_compare,
    mean_accuracy,
    quadratic_bound_rows,
    quadratic_testbed,
    robustness_compare,
    theorem1_bound,
    theorem2_bound,
)


class TestMetrics:
    def test_mean_examples(self):
        assert mean_accuracy([1.0, 1.0]) == 1.0
        assert mean_accuracy([0.8, 0.9]) == pytest.approx(0.85)

    def test_mean_matches_plain_sum(self):
        gen = rng.stream(70, purpose="test")
        for _ in range(20):
            values = gen.uniform(0, 1, size=int(gen.integers(1, 40)))
            total = 0.0
            for v in values:
                total += float(v)
            assert mean_accuracy(values) == pytest.approx(total / len(values), abs=1e-12)

    def test_variance_examples(self):
        assert accuracy_variance([90.0, 90.0]) == 0.0
        assert accuracy_variance([80.0, 90.0]) == pytest.approx(25.0)

    def test_variance_shift_invariant(self):
        gen = rng.stream(71, purpose="test")
        values = gen.uniform(0, 100, size=12)
        assert accuracy_variance(values) == pytest.approx(
            accuracy_variance(values + 13.0), abs=1e-9
        )

    def test_variance_nonnegative_and_zero_iff_equal(self):
        gen = rng.stream(72, purpose="test")
        for _ in range(50):
            values = gen.uniform(0, 100, size=6)
            assert accuracy_variance(values) >= 0.0
        assert accuracy_variance([5.0] * 8) <= 1e-12
        assert accuracy_variance([5.0, 5.0001]) > 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_accuracy([])
        with pytest.raises(ValueError):
            accuracy_variance([])


class TestComparisons:
    def test_fairness_basic(self):
        assert fairness_compare([90.0, 90.0], [80.0, 100.0]) is Ordering.FIRST
        assert fairness_compare([80.0, 100.0], [90.0, 90.0]) is Ordering.SECOND

    def test_fairness_identical_incomparable(self):
        assert fairness_compare([88.0, 92.0], [88.0, 92.0]) is Ordering.INCOMPARABLE

    def test_fairness_table_shaped_fixture(self):
        # reweighting vs plain averaging under 4-class label skew:
        # Var 4.125 (Acc 95.414) vs Var 107.049 (Acc 85.449)
        reweighted = [95.414 - math.sqrt(4.125), 95.414 + math.sqrt(4.125)]
        averaged = [85.449 - math.sqrt(107.049), 85.449 + math.sqrt(107.049)]
        assert accuracy_variance(reweighted) == pytest.approx(4.125)
        assert accuracy_variance(averaged) == pytest.approx(107.049)
        assert fairness_compare(reweighted, averaged) is Ordering.FIRST

    def test_robustness_basic(self):
        # benign means under sign flipping: 92.512 vs 18.718
        assert robustness_compare([92.512], [18.718]) is Ordering.FIRST
        assert robustness_compare([18.718], [92.512]) is Ordering.SECOND

    def test_robustness_equal_incomparable(self):
        assert robustness_compare([50.0, 60.0], [55.0, 55.0]) is Ordering.INCOMPARABLE

    def test_robustness_shift_preserves_order(self):
        a, b = [70.0, 80.0], [40.0, 45.0]
        assert robustness_compare(a, b) is robustness_compare(
            [x + 7 for x in a], [x + 7 for x in b]
        )


class TestBounds:
    def test_single_contraction_step(self):
        # 1 - 3*eta*L = 0.5 with G = 0 halves the initial distance
        p = BoundParams(smoothness=1.0, grad_bound=0.0, eta_schedule=(0.5 / 3.0,), d0=4.0)
        assert theorem1_bound(p, 0) == pytest.approx(2.0)

    def test_zero_rate_keeps_d0(self):
        p = BoundParams(1.0, 5.0, (0.0,) * 10, d0=3.5)
        for t in range(10):
            assert theorem1_bound(p, t) == pytest.approx(3.5)

    def test_recursion_matches_closed_form(self):
        eta, L, G, d0 = 0.07, 2.0, 1.3, 5.0
        p = BoundParams(L, G, (eta,) * 101, d0)
        for t in range(101):
            assert theorem1_bound(p, t) == pytest.approx(
                theorem2_bound(p, t), abs=1e-10
            )

    def test_plateau_limit(self):
        p = BoundParams(1.0, 1.0, (0.1,) * 1, d0=9.0)
        value = theorem2_bound(p, 10**6)
        assert value == pytest.approx(0.1 / 3.0, abs=1e-12)

    def test_zero_noise_geometric_decay(self):
        eta, L, d0 = 0.05, 1.0, 4.0
        p = BoundParams(L, 0.0, (eta,), d0)
        for t in (0, 3, 10):
            assert theorem2_bound(p, t) == pytest.approx(
                (1 - 3 * eta * L) ** (t + 1) * d0
            )

    def test_t_zero_cross_check(self):
        p = BoundParams(1.0, 0.0, (0.5 / 3.0,), d0=4.0)
        assert theorem2_bound(p, 0) == pytest.approx(2.0)
        assert theorem1_bound(p, 0) == pytest.approx(2.0)

    def test_monotone_toward_plateau(self):
        eta, L, G = 0.05, 1.0, 2.0
        plateau = eta * G**2 / (3 * L)
        above = BoundParams(L, G, (eta,), d0=10 * plateau)
        below = BoundParams(L, G, (eta,), d0=0.1 * plateau)
        hi = [theorem2_bound(above, t) for t in range(50)]
        lo = [theorem2_bound(below, t) for t in range(50)]
        assert all(a >= b - 1e-12 for a, b in zip(hi, hi[1:]))
        assert all(a <= b + 1e-12 for a, b in zip(lo, lo[1:]))

    def test_non_contractive_rate_warns_but_computes(self):
        p = BoundParams(1.0, 1.0, (0.5,), d0=1.0)
        with pytest.warns(UserWarning, match="non-contractive"):
            value = theorem2_bound(p, 3)
        assert math.isfinite(value)

    def test_dynamic_schedule_required_length(self):
        p = BoundParams(1.0, 1.0, (0.01, 0.02), d0=1.0)
        with pytest.raises(ValueError):
            theorem1_bound(p, 5)

    def test_theorem2_requires_constant_rate(self):
        p = BoundParams(1.0, 1.0, (0.01, 0.02), d0=1.0)
        with pytest.raises(ValueError):
            theorem2_bound(p, 1)


class TestQuadraticTestbed:
    def test_gradient_vanishes_at_optimum(self):
        testbed = quadratic_testbed(3.0, 8, seed=1)
        np.testing.assert_allclose(testbed.gradient(testbed.w_star), 0.0, atol=1e-12)

    def test_one_exact_step_reaches_optimum(self):
        L = 2.5
        testbed = quadratic_testbed(L, 6, seed=2)
        w = rng.stream(3, purpose="test").standard_normal(6)
        w_next = w - (1.0 / L) * testbed.gradient(w)
        np.testing.assert_allclose(w_next, testbed.w_star, atol=1e-12)

    def test_finite_difference_gradient_check(self):
        testbed = quadratic_testbed(1.7, 5, seed=4)
        gen = rng.stream(5, purpose="test")
        w = gen.standard_normal(5)
        step = 1e-6
        numeric = np.zeros(5)
        for i in range(5):
            up, down = w.copy(), w.copy()
            up[i] += step
            down[i] -= step
            numeric[i] = (testbed.objective(up) - testbed.objective(down)) / (2 * step)
        analytic = testbed.gradient(w)
        assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) <= 1e-6

    def test_bound_rows_structure(self):
        rows = quadratic_bound_rows(
            L=1.0, dim=8, eta=0.1, rounds=50, num_clients=3, noise_scale=0.05, seed=6
        )
        assert len(rows) == 50
        for t, empirical, bound, slack in rows:
            assert math.isfinite(empirical) and math.isfinite(bound)
            assert slack == pytest.approx(bound - empirical)
        # trajectory should approach the optimum on this contractive problem
        assert rows[-1][1] < rows[0][1]
