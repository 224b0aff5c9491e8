"""Optimal (Neyman) allocation of a labeling budget across strata.

The asymptotic variance of a stratified influence-function estimator is
sum_s rho_s^2 sigma_s^2 / n_s, minimized over allocations summing to n
exactly when n_s is proportional to rho_s * sigma_s. Stratum SDs can be
supplied directly or pilot-estimated from per-unit influence records.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AllZeroVarianceError, EmptyStratumError


@dataclass(frozen=True)
class AllocationInput:
    """Stratum proportions, stratum influence SDs, and the total budget."""

    proportions: np.ndarray
    sds: np.ndarray
    budget: int

    def __post_init__(self):
        proportions = np.asarray(self.proportions, dtype=float)
        sds = np.asarray(self.sds, dtype=float)
        if proportions.shape != sds.shape or proportions.ndim != 1:
            raise ValueError("proportions and sds must be 1-d with equal length")
        if np.any(proportions <= 0) or abs(proportions.sum() - 1.0) > 1e-8:
            raise ValueError("proportions must be positive and sum to 1")
        if np.any(sds < 0):
            raise ValueError("sds must be nonnegative")
        if not np.any(sds > 0):
            raise AllZeroVarianceError("every stratum SD is zero")
        if self.budget < int(np.sum(sds > 0)):
            raise ValueError("budget smaller than the number of active strata")
        object.__setattr__(self, "proportions", proportions)
        object.__setattr__(self, "sds", sds)

    def continuous_allocation(self):
        mass = self.proportions * self.sds
        return self.budget * mass / mass.sum()

    def objective(self, allocation):
        """sum_s rho_s^2 sigma_s^2 / n_s (infinite if an active stratum gets 0)."""
        allocation = np.asarray(allocation, dtype=float)
        active = self.sds > 0
        if np.any(allocation[active] <= 0):
            return np.inf
        terms = (self.proportions[active] * self.sds[active]) ** 2
        return float(np.sum(terms / allocation[active]))


def neyman(allocation_input, shrink_toward_equal=0.0):
    """Integer allocation: largest-remainder rounding of n * rho*sigma/sum.

    Every stratum with positive SD receives at least one unit; the
    rounded allocation sums to the budget exactly. `shrink_toward_equal`
    in [0, 1] blends the optimal shares with an equal split - a hedge for
    SDs estimated from very small pilots, exposed without endorsement.
    """
    if not 0.0 <= shrink_toward_equal <= 1.0:
        raise ValueError("shrink_toward_equal must lie in [0, 1]")
    continuous = allocation_input.continuous_allocation()
    if shrink_toward_equal:
        equal = np.full_like(continuous, allocation_input.budget / continuous.size)
        continuous = (
            (1.0 - shrink_toward_equal) * continuous + shrink_toward_equal * equal
        )
    base = np.floor(continuous).astype(np.int64)
    remainder = continuous - base
    shortfall = allocation_input.budget - int(base.sum())
    if shortfall > 0:
        # Ties broken by lower stratum index for determinism.
        order = np.lexsort((np.arange(remainder.size), -remainder))
        base[order[:shortfall]] += 1
    active = allocation_input.sds > 0
    while np.any((base == 0) & active):
        needy = int(np.flatnonzero((base == 0) & active)[0])
        donor = int(np.argmax(base))
        if base[donor] <= 1:
            raise ValueError("budget too small to give every active stratum a unit")
        base[donor] -= 1
        base[needy] += 1
    return base


def estimate_stratum_sds(influence_records, strata, n_strata=None):
    """Within-stratum root-mean-square of per-unit influence values.

    Influence records should have (weighted) mean near zero overall; the
    second moment within each stratum is what the allocation needs.
    """
    influence = np.asarray(influence_records, dtype=float)
    strata = np.asarray(strata, dtype=np.int64)
    n_strata = int(strata.max()) if n_strata is None else int(n_strata)
    sds = np.empty(n_strata)
    for s in range(1, n_strata + 1):
        members = influence[strata == s]
        if members.size == 0:
            raise EmptyStratumError(f"no influence records in stratum {s}")
        sds[s - 1] = float(np.sqrt(np.mean(members**2)))
    return sds


def pilot_allocation(dataset, design, metric, budget, link=None, bandwidth_constant=1.0):
    """Neyman allocation with SDs pilot-estimated from the SL accuracy influence.

    Fits the supervised working model on the pilot, forms the accuracy
    influence records, and plugs the within-stratum RMS into the Neyman
    rule with the pilot's stratum proportions.
    """
    from .estimators import estimate_accuracy_sl, fit_theta_sl
    from .links import EXPIT

    link = EXPIT if link is None else link
    theta_fit = fit_theta_sl(dataset, design, link)
    estimate = estimate_accuracy_sl(
        theta_fit, dataset, design, metric, link, bandwidth_constant
    )
    strata_labeled = dataset.strata[dataset.labeled_mask]
    sds = estimate_stratum_sds(estimate.influence, strata_labeled, dataset.n_strata)
    allocation_input = AllocationInput(
        design.stratum_proportions, sds, budget
    )
    return {
        "input": allocation_input,
        "allocation": neyman(allocation_input),
        "shares": allocation_input.continuous_allocation() / budget,
        "sds": sds,
    }


def compare_designs(
    scenario,
    budget,
    replications,
    metrics=None,
    cv_config=None,
    solver_config=None,
    seed=0,
    n_jobs=None,
    progress=None,
):
    """Monte Carlo comparison of stratified vs uniform labeling designs.

    Simulates both sampling schemes on shared populations, fits the
    weighted supervised and semi-supervised estimators plus the
    unweighted naive supervised estimator under stratified sampling, and
    reports bias and relative-efficiency (MSE-ratio) grids against the
    scenario's oracle truth.
    """
    from .simulation import run_design_comparison

    return run_design_comparison(
        scenario,
        budget,
        replications,
        metrics=metrics,
        cv_config=cv_config,
        solver_config=solver_config,
        seed=seed,
        n_jobs=n_jobs,
        progress=progress,
    )
