"""Perturbation resampling for accuracy SEs and influence-based theta SEs.

Each perturbation replicate reweights the labeled units with i.i.d.
mean-one unit-variance multipliers: the combined working-model estimate
is updated in closed form from cross-fitted residual records, the
imputation and augmentation equations are re-solved under the normalized
perturbed weights, and the plug-in accuracy is recomputed over all N
units. The sample SD over replicates estimates the SE.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .ee_solver import SolverConfig, solve_weighted_score
from .errors import (
    NonConvergenceError,
    SingularJacobianError,
    TooManyFailuresError,
)
from .estimators import augment_imputation, information_matrix
from .links import EXPIT


@dataclass(frozen=True)
class PerturbationConfig:
    """Replicate count, multiplier family, seed, and CI level.

    Both multiplier families have mean one and unit variance:
    'exponential' draws Exp(1); 'two_point' draws {0, 2} equally.
    """

    replicates: int = 500
    distribution: str = "exponential"
    seed: int = 0
    ci_level: float = 0.95
    ci_method: str = "normal"

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least 2 perturbation replicates")
        if self.distribution not in ("exponential", "two_point"):
            raise ValueError(f"unknown multiplier family {self.distribution!r}")
        if self.ci_method not in ("normal", "percentile"):
            raise ValueError(f"unknown CI method {self.ci_method!r}")


def draw_multipliers(rng, size, distribution="exponential"):
    if distribution == "exponential":
        return rng.exponential(1.0, size)
    return 2.0 * rng.integers(0, 2, size).astype(float)


def _perturbed_coefficients(
    dataset, design, basis, bundle, multipliers, link, config, a_ssl
):
    """Metric-independent perturbed pieces: theta*, gamma*, weights, scale."""
    x_all = dataset.design_matrix()
    labeled_rows = dataset.labeled_indices()
    x_labeled = x_all[labeled_rows]
    w = design.weights[labeled_rows]
    multipliers = np.asarray(multipliers, dtype=float)

    # Closed-form update of the combined working-model estimate from the
    # cross-fitted residual records.
    mixed_residual = (
        bundle.w_diag[None, :] * bundle.r_ssl[:, None]
        + (1.0 - bundle.w_diag)[None, :] * bundle.r_sl[:, None]
    )
    loading = w * (multipliers - 1.0) / design.n_total
    shift = np.linalg.solve(a_ssl, (x_labeled * mixed_residual).T @ loading)
    theta_star = bundle.theta_ssl + shift

    perturbed_weights = w * multipliers
    scale = float(perturbed_weights.sum())
    gamma_star = solve_weighted_score(
        basis.values[labeled_rows],
        dataset.outcomes,
        perturbed_weights,
        link,
        config,
        scale=scale,
        start=bundle.gamma,
    ).coefficients
    return theta_star, gamma_star, perturbed_weights, scale


def perturb_once(
    dataset,
    design,
    basis,
    bundle,
    metric,
    multipliers,
    link=EXPIT,
    config=SolverConfig(),
    a_ssl=None,
):
    """One perturbed realization of the augmented SSL accuracy estimate.

    With all multipliers equal to one, every perturbed quantity reduces
    to its original value exactly: the closed-form coefficient update
    vanishes and the reweighted equations coincide with the originals,
    so warm starts return unchanged.
    """
    if a_ssl is None:
        a_ssl = information_matrix(dataset.design_matrix(), bundle.theta_ssl, link)
    theta_star, gamma_star, perturbed_weights, scale = _perturbed_coefficients(
        dataset, design, basis, bundle, multipliers, link, config, a_ssl
    )
    augmentation = augment_imputation(
        gamma_star,
        basis.values,
        theta_star,
        metric,
        dataset,
        design,
        link,
        config,
        solve_weights=perturbed_weights,
        solve_scale=scale,
    )
    return augmentation.plug_in_value()


def resample_se_set(
    dataset,
    design,
    basis,
    bundle,
    metrics,
    centers,
    link=EXPIT,
    solver_config=SolverConfig(),
    config=PerturbationConfig(),
):
    """Perturbation SEs/CIs for several metrics sharing coefficient solves.

    Per-replicate RNG streams are spawned from the master seed with
    numpy's SeedSequence, so serial and parallel evaluation orders give
    identical draws. The perturbed working-model and imputation
    coefficients are metric-independent and computed once per replicate;
    the augmentation and plug-in evaluation run per metric. Failed
    replicates are excluded and counted; more than B/2 failures aborts.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.replicates)
    a_ssl = information_matrix(dataset.design_matrix(), bundle.theta_ssl, link)
    values = {m.kind: [] for m in metrics}
    failures = 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        multipliers = draw_multipliers(rng, design.n_labeled, config.distribution)
        try:
            theta_star, gamma_star, perturbed_weights, scale = (
                _perturbed_coefficients(
                    dataset, design, basis, bundle, multipliers, link,
                    solver_config, a_ssl,
                )
            )
            replicate_values = {}
            for metric in metrics:
                augmentation = augment_imputation(
                    gamma_star, basis.values, theta_star, metric, dataset,
                    design, link, solver_config,
                    solve_weights=perturbed_weights, solve_scale=scale,
                )
                replicate_values[metric.kind] = augmentation.plug_in_value()
        except (NonConvergenceError, SingularJacobianError):
            failures += 1
            continue
        for kind, value in replicate_values.items():
            values[kind].append(value)
    successes = len(next(iter(values.values()))) if metrics else 0
    if successes < config.replicates / 2.0:
        raise TooManyFailuresError(
            f"{failures} of {config.replicates} perturbation replicates failed"
        )
    z = stats.norm.ppf(0.5 + config.ci_level / 2.0)
    results = {}
    for metric in metrics:
        kind = metric.kind
        draws = np.asarray(values[kind])
        se = float(draws.std(ddof=1))
        center = centers[kind]
        if config.ci_method == "normal":
            ci = (center - z * se, center + z * se)
        else:
            low, high = np.quantile(
                draws,
                [(1 - config.ci_level) / 2.0, (1 + config.ci_level) / 2.0],
            )
            ci = (center + (low - draws.mean()), center + (high - draws.mean()))
        results[kind] = {
            "se": se,
            "ci": ci,
            "center": center,
            "replicates": draws.size,
            "failures": failures,
            "values": draws,
        }
    return results


def resample_se(
    dataset,
    design,
    basis,
    bundle,
    metric,
    center,
    link=EXPIT,
    solver_config=SolverConfig(),
    config=PerturbationConfig(),
):
    """Perturbation SE and CI for one metric; see `resample_se_set`."""
    return resample_se_set(
        dataset, design, basis, bundle, (metric,), {metric.kind: center},
        link, solver_config, config,
    )[metric.kind]


def theta_ssl_covariance(bundle, forced_weights=None):
    """Covariance and ASEs of the combined working-model estimate.

    Combines the cross-fitted influence records with the per-coordinate
    combination weights; the returned `covariance` estimates
    cov(theta_ssl) directly (the asymptotic matrix divided by n).
    """
    w_diag = bundle.w_diag if forced_weights is None else np.asarray(forced_weights)
    records = (
        w_diag[None, :] * bundle.influence_check
        + (1.0 - w_diag)[None, :] * bundle.influence_sl
    )
    n = records.shape[0]
    asymptotic = records.T @ records / n
    covariance = asymptotic / n
    return {
        "covariance": covariance,
        "ase": np.sqrt(np.diag(covariance)),
        "asymptotic": asymptotic,
    }
