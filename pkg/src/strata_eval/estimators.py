"""Point estimators of the working-model coefficients and accuracy measures.

Implements the supervised IPW estimators, the two-step semi-supervised
estimators (flexible imputation, robustness augmentation, optimal
SL/SSL combination), the intrinsic-efficient variants, and the
density-ratio competitor. The squared-error loss is evaluated in its
linear-in-y form d(a, z) = a(1 - 2z) + z^2, which equals (y - z)^2 for
binary y and lets imputed means substitute for missing outcomes.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .ee_solver import (
    SolverConfig,
    solve_augmentation,
    solve_density_ratio_tilt,
    solve_projection,
    solve_weighted_score,
)
from .errors import CovarianceDegenerateWarning, ExtremeTiltWarning, SchemaError
from .links import EXPIT

_EXP_CLAMP = 30.0


@dataclass(frozen=True)
class AccuracyMetric:
    """Brier score or overall misclassification rate at threshold c.

    Classification uses the strict rule I{g(score) > c}; a fitted
    probability exactly at c classifies negative.
    """

    kind: str
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("brier", "omr"):
            raise SchemaError(f"unknown metric kind {self.kind!r}")
        if not 0.0 < self.threshold < 1.0:
            raise SchemaError("threshold must lie in (0, 1)")

    def predictions(self, link, scores):
        probabilities = link.g(scores)
        if self.kind == "brier":
            return probabilities
        return (probabilities > self.threshold).astype(float)


BRIER = AccuracyMetric("brier")
OMR = AccuracyMetric("omr")


def squared_error_loss(outcome_or_mean, prediction):
    """d(a, z) = a(1 - 2z) + z^2; equals (a - z)^2 when a is binary."""
    return outcome_or_mean * (1.0 - 2.0 * prediction) + prediction**2


@dataclass
class ThetaFit:
    variant: str
    coefficients: np.ndarray
    influence: np.ndarray = None
    combination_weights: np.ndarray = None
    extras: dict = field(default_factory=dict)


@dataclass
class ImputationFit:
    gamma: np.ndarray
    basis_values: np.ndarray
    ridge: float

    def fitted_link_scores(self):
        return self.basis_values @ self.gamma


@dataclass
class Augmentation:
    """Two-coefficient recalibration of an imputation against [1, Y]."""

    nu: np.ndarray
    predictions: np.ndarray
    imputed: np.ndarray

    def plug_in_value(self):
        return float(np.mean(squared_error_loss(self.imputed, self.predictions)))


@dataclass
class AccuracyEstimate:
    metric: str
    variant: str
    flavor: str
    value: float
    influence: np.ndarray = None
    se: float = None
    ci: tuple = None
    diagnostics: dict = field(default_factory=dict)


def information_matrix(design_matrix, theta, link):
    """A-hat = mean over all rows of x x' dg(theta' x)."""
    x = np.asarray(design_matrix, dtype=float)
    slope = link.dg(x @ theta)
    return (x.T * slope) @ x / x.shape[0]


def zeta_weights(design, strata_labeled):
    """Per-labeled-unit (rho_s / rho_1s)^2, the stratified variance loading."""
    ratio = design.stratum_proportions / design.labeled_proportions
    return ratio[strata_labeled - 1] ** 2


def fit_imputation(dataset, design, basis, link=EXPIT, config=SolverConfig()):
    """Ridge-penalized IPW fit of the imputation model on the basis."""
    labeled = dataset.labeled_mask
    outcome = solve_weighted_score(
        basis.values[labeled],
        dataset.outcomes,
        design.weights[labeled],
        link,
        config,
        scale=design.n_total,
    )
    return ImputationFit(outcome.coefficients, basis.values, config.ridge)


def fit_theta_sl(dataset, design, link=EXPIT, config=SolverConfig()):
    """Supervised IPW fit of the working model (no penalty).

    Influence records are e_i = A^-1 x_i (y_i - g(theta' x_i)) over the
    labeled rows, with A evaluated on all N rows at the fitted theta.
    """
    x_all = dataset.design_matrix()
    labeled = dataset.labeled_mask
    outcome = solve_weighted_score(
        x_all[labeled],
        dataset.outcomes,
        design.weights[labeled],
        link,
        config.with_ridge(0.0),
        scale=design.n_total,
    )
    theta = outcome.coefficients
    a_matrix = information_matrix(x_all, theta, link)
    residual = dataset.outcomes - link.g(x_all[labeled] @ theta)
    influence = np.linalg.solve(a_matrix, (x_all[labeled] * residual[:, None]).T).T
    return ThetaFit("SL", theta, influence, extras={"a_matrix": a_matrix})


def project_theta(design_matrix, fitted_probabilities, link=EXPIT, config=SolverConfig(), start=None):
    """Working-model coefficients matching supplied probabilities on all N."""
    outcome = solve_projection(
        design_matrix, fitted_probabilities, link, config.with_ridge(0.0), start=start
    )
    return outcome.coefficients


def augment_imputation(
    gamma,
    basis_values,
    theta,
    metric,
    dataset,
    design,
    link=EXPIT,
    config=SolverConfig(),
    solve_rows=None,
    solve_weights=None,
    solve_scale=None,
):
    """Solve the augmentation equation at theta and impute all N units.

    By default the equation runs over every labeled row with its design
    weight; CV passes `solve_rows` (positions into labeled order) plus
    fold-specific weights so held-out folds drive the recalibration.
    """
    x_all = dataset.design_matrix()
    predictions = metric.predictions(link, x_all @ theta)
    labeled_rows = dataset.labeled_indices()
    offsets_labeled = basis_values[labeled_rows] @ gamma
    z_labeled = np.column_stack(
        [np.ones(labeled_rows.size), predictions[labeled_rows]]
    )
    if solve_rows is None:
        solve_rows = np.arange(labeled_rows.size)
    if solve_weights is None:
        solve_weights = design.weights[labeled_rows][solve_rows]
    outcome = solve_augmentation(
        z_labeled[solve_rows],
        offsets_labeled[solve_rows],
        dataset.outcomes[solve_rows],
        solve_weights,
        link,
        config.with_ridge(0.0),
        scale=solve_scale,
    )
    nu = outcome.coefficients
    imputed = link.g(basis_values @ gamma + nu[0] + nu[1] * predictions)
    return Augmentation(nu, predictions, imputed)


def accuracy_derivative(dataset, design, theta, metric, link=EXPIT, bandwidth_constant=1.0):
    """IPW estimate of the accuracy measure's gradient in theta.

    Brier: -2 mean_w[dg (y - g) x]. OMR: the indicator is smoothed with a
    Gaussian kernel of bandwidth h0 * n^(-1/4) on the probability scale,
    giving mean_w[(1 - 2y) dg K_h(g - c) x].
    """
    x_all = dataset.design_matrix()
    labeled = dataset.labeled_mask
    x = x_all[labeled]
    y = dataset.outcomes
    w = design.weights[labeled]
    scores = x @ theta
    slope = link.dg(scores)
    if metric.kind == "brier":
        loading = -2.0 * slope * (y - link.g(scores))
    else:
        h = bandwidth_constant * design.n_labeled ** (-0.25)
        u = (link.g(scores) - metric.threshold) / h
        kernel = np.exp(-0.5 * u**2) / (np.sqrt(2.0 * np.pi) * h)
        loading = (1.0 - 2.0 * y) * slope * kernel
    return x.T @ (w * loading) / design.n_total


def smoothed_omr(dataset, design, theta, metric, link=EXPIT, bandwidth_constant=1.0):
    """Kernel-smoothed OMR surface used to validate the OMR derivative."""
    from scipy import stats

    x_all = dataset.design_matrix()
    labeled = dataset.labeled_mask
    y = dataset.outcomes
    w = design.weights[labeled]
    h = bandwidth_constant * design.n_labeled ** (-0.25)
    probabilities = link.g(x_all[labeled] @ theta)
    smooth_indicator = stats.norm.cdf((probabilities - metric.threshold) / h)
    return float(np.sum(w * (y + (1.0 - 2.0 * y) * smooth_indicator)) / design.n_total)


def estimate_accuracy_sl(
    theta_fit, dataset, design, metric, link=EXPIT, bandwidth_constant=1.0
):
    """Apparent IPW plug-in accuracy with per-unit influence records."""
    x_all = dataset.design_matrix()
    labeled = dataset.labeled_mask
    predictions = metric.predictions(link, x_all[labeled] @ theta_fit.coefficients)
    w = design.weights[labeled]
    losses = squared_error_loss(dataset.outcomes, predictions)
    value = float(np.sum(w * losses) / design.n_total)
    influence = None
    if theta_fit.influence is not None:
        gradient = accuracy_derivative(
            dataset, design, theta_fit.coefficients, metric, link, bandwidth_constant
        )
        influence = losses - value + theta_fit.influence @ gradient
    return AccuracyEstimate(metric.kind, theta_fit.variant, "apparent", value, influence)


def estimate_accuracy_ssl(
    theta,
    imputation,
    dataset,
    design,
    metric,
    link=EXPIT,
    config=SolverConfig(),
):
    """Augmented semi-supervised plug-in accuracy over all N units."""
    coefficients = theta.coefficients if isinstance(theta, ThetaFit) else theta
    augmentation = augment_imputation(
        imputation.gamma,
        imputation.basis_values,
        coefficients,
        metric,
        dataset,
        design,
        link,
        config,
    )
    estimate = AccuracyEstimate(
        metric.kind,
        "SSL",
        "apparent",
        augmentation.plug_in_value(),
        diagnostics={"nu": augmentation.nu},
    )
    return estimate


def combination_weight(sigma):
    """First entry of 1' Sigma^-1 / (1' Sigma^-1 1) for a 2x2 covariance."""
    inverse = np.linalg.inv(np.asarray(sigma, dtype=float))
    row = inverse.sum(axis=0)
    return float(row[0] / row.sum())


@dataclass
class FoldFit:
    """Estimates trained without one fold, plus held-out residual records."""

    eval_positions: np.ndarray
    gamma: np.ndarray
    theta_sl: np.ndarray
    theta_check: np.ndarray
    eval_weights: np.ndarray


@dataclass
class SslFitBundle:
    """Everything the combined SSL estimator and its inference reuse.

    Residual records r_ssl / r_sl are aligned to labeled order and come
    from the fold each unit was held out of, so downstream variance
    estimates are overfitting-corrected.
    """

    gamma: np.ndarray
    theta_check: np.ndarray
    theta_sl: np.ndarray
    theta_ssl: np.ndarray
    w_diag: np.ndarray
    sigma_pairs: np.ndarray
    a_check: np.ndarray
    folds: list
    r_ssl: np.ndarray
    r_sl: np.ndarray
    influence_check: np.ndarray
    influence_sl: np.ndarray
    ridge: float

    def theta_fit(self):
        return ThetaFit(
            "SSL_combined",
            self.theta_ssl,
            combination_weights=self.w_diag,
            extras={"theta_check": self.theta_check, "theta_sl": self.theta_sl},
        )


def fold_weights(design, labeled_positions):
    """Recompute IPW weights for a labeled subset: N_s over the subset n_s.

    Uses the same stratum labels the design was built from, so the
    reweighted subset still satisfies sum(w) = N.
    """
    strata = design.weight_strata
    labeled_rows = np.flatnonzero(design.weights > 0)
    subset_rows = labeled_rows[labeled_positions]
    counts = np.bincount(strata[subset_rows], minlength=design.n_strata + 1)[1:]
    if np.any(counts[design.n_total_per_stratum > 0] == 0):
        raise ValueError("labeled subset misses a stratum; cannot reweight")
    return design.n_total_per_stratum[strata[subset_rows] - 1] / counts[
        strata[subset_rows] - 1
    ]


def fit_theta_ssl(
    dataset,
    design,
    basis,
    link=EXPIT,
    config=SolverConfig(),
    cv_config=None,
    theta_sl_fit=None,
    imputation=None,
):
    """Two-step semi-supervised working-model fit with optimal combination.

    Pipeline: ridge IPW imputation fit, unweighted projection to the
    working model, per-coordinate covariance of (projected, supervised)
    estimates from K-fold cross-fitted influence records, then a clipped
    convex combination per coordinate.
    """
    from .cross_validation import CvConfig, partition

    cv_config = CvConfig() if cv_config is None else cv_config
    x_all = dataset.design_matrix()
    labeled_rows = dataset.labeled_indices()
    n = labeled_rows.size
    big_n = dataset.n_total
    y = dataset.outcomes
    w = design.weights[labeled_rows]

    if imputation is None:
        imputation = fit_imputation(dataset, design, basis, link, config)
    if theta_sl_fit is None:
        theta_sl_fit = fit_theta_sl(dataset, design, link, config)
    theta_sl = theta_sl_fit.coefficients
    theta_check = project_theta(
        x_all, link.g(imputation.fitted_link_scores()), link, config, start=theta_sl
    )

    folds = partition(
        np.arange(n), dataset.strata[labeled_rows], cv_config, replication=0
    )
    phi_labeled = basis.values[labeled_rows]
    x_labeled = x_all[labeled_rows]
    fold_fits = []
    r_ssl = np.empty(n)
    r_sl = np.empty(n)
    for eval_positions in folds:
        train = np.setdiff1d(np.arange(n), eval_positions, assume_unique=True)
        w_train = fold_weights(design, train)
        gamma_k = solve_weighted_score(
            phi_labeled[train], y[train], w_train, link, config,
            scale=big_n, start=imputation.gamma,
        ).coefficients
        theta_sl_k = solve_weighted_score(
            x_labeled[train], y[train], w_train, link, config.with_ridge(0.0),
            scale=big_n, start=theta_sl,
        ).coefficients
        theta_check_k = project_theta(
            x_all, link.g(basis.values @ gamma_k), link, config, start=theta_check
        )
        r_ssl[eval_positions] = y[eval_positions] - link.g(
            phi_labeled[eval_positions] @ gamma_k
        )
        r_sl[eval_positions] = y[eval_positions] - link.g(
            x_labeled[eval_positions] @ theta_sl_k
        )
        fold_fits.append(
            FoldFit(
                eval_positions,
                gamma_k,
                theta_sl_k,
                theta_check_k,
                fold_weights(design, eval_positions),
            )
        )

    a_check = information_matrix(x_all, theta_check, link)
    transformed = np.linalg.solve(a_check, x_labeled.T).T
    varpi = w * n / big_n
    influence_check = transformed * (varpi * r_ssl)[:, None]
    influence_sl = transformed * (varpi * r_sl)[:, None]

    p1 = x_all.shape[1]
    w_diag = np.empty(p1)
    sigma_pairs = np.empty((p1, 2, 2))
    for j in range(p1):
        pair = np.column_stack([influence_check[:, j], influence_sl[:, j]])
        sigma = pair.T @ pair / n
        sigma_pairs[j] = sigma
        delta = n ** (-0.5) * np.trace(sigma) / 2.0
        try:
            weight = combination_weight(sigma + delta * np.eye(2))
        except np.linalg.LinAlgError:
            warnings.warn(
                f"degenerate combination covariance for coordinate {j}; "
                "falling back to an equal-weight blend",
                CovarianceDegenerateWarning,
                stacklevel=2,
            )
            weight = 0.5
        w_diag[j] = min(max(weight, 0.0), 1.0)

    theta_ssl = w_diag * theta_check + (1.0 - w_diag) * theta_sl
    return SslFitBundle(
        gamma=imputation.gamma,
        theta_check=theta_check,
        theta_sl=theta_sl,
        theta_ssl=theta_ssl,
        w_diag=w_diag,
        sigma_pairs=sigma_pairs,
        a_check=a_check,
        folds=fold_fits,
        r_ssl=r_ssl,
        r_sl=r_sl,
        influence_check=influence_check,
        influence_sl=influence_sl,
        ridge=config.ridge,
    )


def fit_intrinsic_theta(
    dataset,
    design,
    basis,
    direction,
    preliminary_theta,
    link=EXPIT,
    config=SolverConfig(),
    imputation=None,
):
    """Imputation coefficients minimizing the variance of e' theta-hat.

    Solves the calibration-constrained weighted least squares with loss
    weights zeta_i (e' A^-1 x_i)^2 and moment constraints on x, then
    projects to the working model.
    """
    from .ee_solver import solve_constrained_wls

    direction = np.asarray(direction, dtype=float)
    if not np.any(direction != 0):
        raise ValueError("direction must be nonzero")
    x_all = dataset.design_matrix()
    labeled_rows = dataset.labeled_indices()
    if imputation is None:
        imputation = fit_imputation(dataset, design, basis, link, config)
    a_matrix = information_matrix(x_all, preliminary_theta, link)
    zeta = zeta_weights(design, dataset.strata[labeled_rows])
    leverage = x_all[labeled_rows] @ np.linalg.solve(a_matrix, direction)
    loss_weights = zeta * leverage**2
    gamma1 = solve_constrained_wls(
        basis.values[labeled_rows],
        dataset.outcomes,
        loss_weights,
        x_all[labeled_rows],
        design.weights[labeled_rows],
        link,
        config,
        constraint_scale=design.n_total,
        start=imputation.gamma,
    ).coefficients
    theta = project_theta(
        x_all, link.g(basis.values @ gamma1), link, config, start=preliminary_theta
    )
    return ThetaFit(
        "intrinsic",
        theta,
        extras={"gamma1": gamma1, "direction": direction, "a_matrix": a_matrix},
    )


def estimate_accuracy_intrinsic(
    dataset,
    design,
    basis,
    metric,
    preliminary_theta,
    link=EXPIT,
    config=SolverConfig(),
    bandwidth_constant=1.0,
):
    """Intrinsic-efficient accuracy estimate on the prediction-augmented basis.

    The imputation basis is [Phi, Y(theta' x)]; the loss weights follow the
    accuracy influence loading with the metric-specific gradient estimate,
    and the final fit is re-solved at the projected working-model
    coefficients before the plug-in sum over all N units.
    """
    from .ee_solver import solve_constrained_wls

    x_all = dataset.design_matrix()
    labeled_rows = dataset.labeled_indices()
    y = dataset.outcomes
    w = design.weights[labeled_rows]
    zeta = zeta_weights(design, dataset.strata[labeled_rows])
    gradient = accuracy_derivative(
        dataset, design, preliminary_theta, metric, link, bandwidth_constant
    )
    a_matrix = information_matrix(x_all, preliminary_theta, link)
    leverage = x_all[labeled_rows] @ np.linalg.solve(a_matrix, gradient)

    def psi(theta):
        return np.column_stack(
            [basis.values, metric.predictions(link, x_all @ theta)]
        )

    def solve_at(theta, start):
        psi_values = psi(theta)
        predictions_labeled = psi_values[labeled_rows, -1]
        loss_weights = zeta * (1.0 - 2.0 * predictions_labeled + leverage) ** 2
        moments = np.column_stack(
            [x_all[labeled_rows], predictions_labeled]
        )
        gamma = solve_constrained_wls(
            psi_values[labeled_rows],
            y,
            loss_weights,
            moments,
            w,
            link,
            config,
            constraint_scale=design.n_total,
            start=start,
        ).coefficients
        return gamma, psi_values

    # The plain weighted fit on the augmented basis only seeds the
    # constrained solve; a small ridge floor keeps it finite when the
    # configured penalty is zero and the draw is nearly separable.
    from .ee_solver import default_ridge

    start_ridge = max(config.ridge, default_ridge(basis.values.shape[1],
                                                  labeled_rows.size))
    start = solve_weighted_score(
        psi(preliminary_theta)[labeled_rows], y, w, link,
        config.with_ridge(start_ridge), scale=design.n_total,
    ).coefficients
    gamma2, _ = solve_at(preliminary_theta, start)
    theta_d = project_theta(
        x_all,
        link.g(psi(preliminary_theta) @ gamma2),
        link,
        config,
        start=preliminary_theta,
    )
    gamma2_final, psi_final = solve_at(theta_d, gamma2)
    predictions = psi_final[:, -1]
    imputed = link.g(psi_final @ gamma2_final)
    value = float(np.mean(squared_error_loss(imputed, predictions)))
    return AccuracyEstimate(
        metric.kind,
        "intrinsic",
        "apparent",
        value,
        diagnostics={"theta": theta_d, "gamma2": gamma2_final},
    )


def fit_theta_dr(dataset, design, dr_basis, link=EXPIT, config=SolverConfig()):
    """Density-ratio-tilted supervised fit of the working model."""
    x_all = dataset.design_matrix()
    labeled_rows = dataset.labeled_indices()
    w = design.weights[labeled_rows]
    phi_labeled = dr_basis.values[labeled_rows]
    alpha = solve_density_ratio_tilt(
        phi_labeled, w, dr_basis.values, config
    ).coefficients
    tilt = np.exp(np.clip(phi_labeled @ alpha, -_EXP_CLAMP, _EXP_CLAMP))
    if np.max(tilt, initial=0.0) > 10.0:
        warnings.warn(
            "a density-ratio-tilted weight exceeds 10x its untilted value",
            ExtremeTiltWarning,
            stacklevel=2,
        )
    tilted_weights = w * tilt
    theta = solve_weighted_score(
        x_all[labeled_rows],
        dataset.outcomes,
        tilted_weights,
        link,
        config.with_ridge(0.0),
        scale=design.n_total,
    ).coefficients
    return ThetaFit(
        "DR", theta, extras={"alpha": alpha, "tilted_weights": tilted_weights}
    )


def estimate_accuracy_dr(
    dataset, design, dr_basis, metric, link=EXPIT, config=SolverConfig(), theta_fit=None
):
    """Accuracy under the same tilted weights as the DR coefficient fit."""
    if theta_fit is None or "tilted_weights" not in theta_fit.extras:
        theta_fit = fit_theta_dr(dataset, design, dr_basis, link, config)
    x_all = dataset.design_matrix()
    labeled_rows = dataset.labeled_indices()
    predictions = metric.predictions(link, x_all[labeled_rows] @ theta_fit.coefficients)
    losses = squared_error_loss(dataset.outcomes, predictions)
    value = float(
        np.sum(theta_fit.extras["tilted_weights"] * losses) / design.n_total
    )
    return AccuracyEstimate(metric.kind, "DR", "apparent", value)
