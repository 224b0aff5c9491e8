import numpy as np
import pytest

from strata_eval.allocation import (
    AllocationInput,
    estimate_stratum_sds,
    neyman,
)
from strata_eval.errors import AllZeroVarianceError, EmptyStratumError


class TestNeyman:
    def test_supplement_shares(self):
        # rho = (0.69, 0.31), sigma^2 = (0.023, 0.142) puts 47% of the
        # budget in the large low-variance stratum.
        allocation_input = AllocationInput(
            np.array([0.69, 0.31]),
            np.sqrt(np.array([0.023, 0.142])),
            budget=1000,
        )
        shares = allocation_input.continuous_allocation() / 1000
        assert shares[0] == pytest.approx(0.47, abs=0.005)
        assert shares[1] == pytest.approx(0.53, abs=0.005)
        counts = neyman(allocation_input)
        assert counts.sum() == 1000
        assert abs(counts[0] - 472) <= 1

    def test_symmetric_split(self):
        allocation_input = AllocationInput(
            np.array([0.5, 0.5]), np.array([1.0, 1.0]), budget=11
        )
        counts = neyman(allocation_input)
        assert counts.sum() == 11
        assert abs(counts[0] - counts[1]) <= 1

    def test_zero_variance_stratum_gets_nothing(self):
        allocation_input = AllocationInput(
            np.array([0.6, 0.4]), np.array([1.0, 0.0]), budget=25
        )
        counts = neyman(allocation_input)
        assert counts.tolist() == [25, 0]

    def test_positive_variance_floor(self):
        allocation_input = AllocationInput(
            np.array([0.98, 0.02]), np.array([5.0, 0.001]), budget=10
        )
        counts = neyman(allocation_input)
        assert counts.sum() == 10
        assert counts[1] >= 1

    def test_all_zero_variance_raises(self):
        with pytest.raises(AllZeroVarianceError):
            AllocationInput(np.array([0.5, 0.5]), np.zeros(2), budget=10)

    def test_rounding_preserves_budget(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n_strata = rng.integers(2, 6)
            rho = rng.dirichlet(np.ones(n_strata))
            sigma = rng.uniform(0.1, 3.0, size=n_strata)
            budget = int(rng.integers(n_strata, 500))
            allocation_input = AllocationInput(rho, sigma, budget)
            assert neyman(allocation_input).sum() == budget

    def test_continuous_optimum_never_beaten(self):
        # Random integer allocations never fall below the Cauchy-Schwarz
        # bound, and the rounded rule is within rounding slack of the
        # best allocation found.
        rng = np.random.default_rng(42)
        for trial in range(4):
            n_strata = int(rng.integers(2, 5))
            rho = rng.dirichlet(np.ones(n_strata))
            sigma = rng.uniform(0.2, 2.0, size=n_strata)
            budget = int(rng.integers(10 * n_strata, 200))
            allocation_input = AllocationInput(rho, sigma, budget)
            optimum = allocation_input.objective(
                allocation_input.continuous_allocation()
            )
            rounded = allocation_input.objective(neyman(allocation_input))
            best_random = np.inf
            for _ in range(10_000):
                counts = rng.multinomial(budget, rho)
                best_random = min(
                    best_random, allocation_input.objective(counts)
                )
            assert best_random >= optimum * (1.0 - 1e-12)
            slack = max(best_random - optimum, 1e-15)
            assert rounded <= best_random + 0.10 * slack + 1e-15


class TestStratumSds:
    def test_constant_influence(self):
        influence = np.array([2.0, 2.0, -3.0, -3.0])
        strata = np.array([1, 1, 2, 2])
        assert np.allclose(estimate_stratum_sds(influence, strata), [2.0, 3.0])

    def test_two_point_influence(self):
        influence = np.array([1.0, -1.0, 1.0, -1.0])
        strata = np.ones(4, dtype=int)
        assert estimate_stratum_sds(influence, strata)[0] == pytest.approx(1.0)

    def test_empty_stratum(self):
        with pytest.raises(EmptyStratumError):
            estimate_stratum_sds(np.ones(3), np.array([1, 1, 1]), n_strata=2)


class TestShrinkage:
    def test_shrinkage_interpolates_toward_equal_split(self):
        allocation_input = AllocationInput(
            np.array([0.8, 0.2]), np.array([2.0, 0.5]), budget=100
        )
        optimal = neyman(allocation_input)
        hedged = neyman(allocation_input, shrink_toward_equal=0.5)
        equal = neyman(allocation_input, shrink_toward_equal=1.0)
        assert equal.tolist() == [50, 50]
        assert optimal[0] > hedged[0] > equal[0]
        assert hedged.sum() == 100

    def test_shrinkage_validated(self):
        allocation_input = AllocationInput(
            np.array([0.5, 0.5]), np.array([1.0, 1.0]), budget=10
        )
        with pytest.raises(ValueError):
            neyman(allocation_input, shrink_toward_equal=1.5)
