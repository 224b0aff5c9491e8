"""Stratified K-fold machinery and the ensemble bias correction.

The apparent plug-in accuracy is optimistic and plain K-fold CV is
pessimistic; blending them with weight K/(2K-1) on the apparent value
cancels the leading overfitting bias. Partitions are drawn within each
stratum so fold-level labeled fractions match the design, and fold-level
IPW weights are recomputed from fold-level counts so every fold fit sees
weights summing to N.
"""

from dataclasses import dataclass

import numpy as np

from .ee_solver import SolverConfig, solve_weighted_score
from .errors import (
    NonConvergenceError,
    SingularJacobianError,
    TooFewLabeledError,
    VariantMismatchError,
)
from .estimators import (
    AccuracyEstimate,
    augment_imputation,
    fit_imputation,
    fit_theta_sl,
    fit_theta_ssl,
    fold_weights,
    project_theta,
    squared_error_loss,
)
from .links import EXPIT


@dataclass(frozen=True)
class CvConfig:
    """Fold count, partition replications, and partition mode."""

    folds: int = 6
    replications: int = 20
    within_stratum_partition: bool = True
    seed: int = 0
    # Diagnostic mode: every fold trains (and augments) on the full labeled
    # set, so the CV estimate collapses to the apparent one exactly.
    diagnostic_full_train: bool = False

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.replications < 1:
            raise ValueError("need at least 1 replication")

    @property
    def ensemble_weight(self):
        return self.folds / (2.0 * self.folds - 1.0)


def partition(labeled_indices, strata, config, replication=0):
    """Split labeled indices into K near-equal folds, within each stratum.

    Deterministic given (config.seed, replication). Folds are pairwise
    disjoint with union equal to the input, and within every stratum the
    fold sizes differ by at most one.
    """
    labeled_indices = np.asarray(labeled_indices)
    strata = np.asarray(strata)
    rng = np.random.default_rng([config.seed, replication])
    folds = [[] for _ in range(config.folds)]
    if config.within_stratum_partition:
        groups = [
            np.flatnonzero(strata == s) for s in np.unique(strata)
        ]
        for positions in groups:
            if positions.size < config.folds:
                raise TooFewLabeledError(
                    f"a stratum has {positions.size} labeled units for "
                    f"{config.folds} folds"
                )
            shuffled = rng.permutation(positions)
            for k, chunk in enumerate(np.array_split(shuffled, config.folds)):
                folds[k].append(labeled_indices[chunk])
    else:
        shuffled = rng.permutation(labeled_indices.size)
        for k, chunk in enumerate(np.array_split(shuffled, config.folds)):
            folds[k].append(labeled_indices[chunk])
    return [np.sort(np.concatenate(parts)) for parts in folds]


def ensemble(apparent, cv, n_folds):
    """Blend apparent and CV estimates with weight K/(2K-1) on apparent."""
    if apparent.variant != cv.variant or apparent.metric != cv.metric:
        raise VariantMismatchError(
            f"cannot blend {apparent.variant}/{apparent.metric} with "
            f"{cv.variant}/{cv.metric}"
        )
    weight = n_folds / (2.0 * n_folds - 1.0)
    value = weight * apparent.value + (1.0 - weight) * cv.value
    return AccuracyEstimate(
        apparent.metric,
        apparent.variant,
        "ensemble",
        value,
        diagnostics={"weight": weight},
    )


def _dr_fold_pieces(dataset, design, dr_basis, train, w_train, link, config):
    from .ee_solver import solve_density_ratio_tilt

    labeled_rows = dataset.labeled_indices()
    phi_labeled = dr_basis.values[labeled_rows]
    alpha = solve_density_ratio_tilt(
        phi_labeled[train], w_train, dr_basis.values, config
    ).coefficients
    tilt_train = np.exp(np.clip(phi_labeled[train] @ alpha, -30.0, 30.0))
    theta = solve_weighted_score(
        dataset.design_matrix()[labeled_rows][train],
        dataset.outcomes[train],
        w_train * tilt_train,
        link,
        config.with_ridge(0.0),
        scale=design.n_total,
    ).coefficients
    return alpha, theta


def cv_accuracy_set(
    dataset,
    design,
    basis,
    metrics,
    variant,
    cv_config,
    solver_config=SolverConfig(),
    link=EXPIT,
    bundle=None,
    dr_basis=None,
    ssl_theta="combined",
):
    """Cross-validated accuracy for several metrics sharing fold fits.

    Each fold trains the coefficient fits without the fold (fold-level
    IPW weights recomputed from fold-level stratum counts), solves the
    augmentation on the held-out fold only, and evaluates over all N
    units (SSL) or over the held-out fold with its reweighted IPW
    weights (SL, DR). Fold averages are averaged again over partition
    replications; a fold whose solver fails is retried with doubled
    ridge, after which the whole replication is dropped with a count.
    Returns a dict keyed by metric kind.
    """
    if variant not in ("SL", "SSL", "DR"):
        raise ValueError(f"unknown CV variant {variant!r}")
    x_all = dataset.design_matrix()
    labeled_rows = dataset.labeled_indices()
    n = labeled_rows.size
    y = dataset.outcomes
    x_labeled = x_all[labeled_rows]
    strata_labeled = dataset.strata[labeled_rows]
    if variant == "SSL" and bundle is None:
        bundle = fit_theta_ssl(
            dataset, design, basis, link, solver_config, cv_config
        )
    if variant == "DR" and dr_basis is None:
        dr_basis = basis

    replication_values = {m.kind: [] for m in metrics}
    fold_values_log = []
    dropped = 0
    for replication in range(cv_config.replications):
        folds = partition(np.arange(n), strata_labeled, cv_config, replication)
        fold_values = {m.kind: [] for m in metrics}
        try:
            for k, eval_positions in enumerate(folds):
                if cv_config.diagnostic_full_train:
                    train = np.arange(n)
                    solve_rows = np.arange(n)
                else:
                    train = np.setdiff1d(
                        np.arange(n), eval_positions, assume_unique=True
                    )
                    solve_rows = eval_positions
                w_train = fold_weights(design, train)
                w_eval = fold_weights(design, solve_rows)
                reuse = (
                    variant == "SSL"
                    and bundle is not None
                    and replication == 0
                    and not cv_config.diagnostic_full_train
                    and len(bundle.folds) == len(folds)
                    and np.array_equal(bundle.folds[k].eval_positions, eval_positions)
                )
                if variant == "SSL":
                    if reuse:
                        fold_fit = bundle.folds[k]
                        gamma_k = fold_fit.gamma
                        theta_sl_k = fold_fit.theta_sl
                        theta_check_k = fold_fit.theta_check
                    else:
                        gamma_k = _fit_fold_gamma(
                            basis.values[labeled_rows][train],
                            y[train],
                            w_train,
                            design.n_total,
                            link,
                            solver_config,
                            start=bundle.gamma,
                        )
                        theta_sl_k = solve_weighted_score(
                            x_labeled[train], y[train], w_train, link,
                            solver_config.with_ridge(0.0), scale=design.n_total,
                            start=bundle.theta_sl,
                        ).coefficients
                        theta_check_k = project_theta(
                            x_all, link.g(basis.values @ gamma_k), link,
                            solver_config, start=bundle.theta_check,
                        )
                    if ssl_theta == "combined":
                        theta_fold = (
                            bundle.w_diag * theta_check_k
                            + (1.0 - bundle.w_diag) * theta_sl_k
                        )
                    else:
                        theta_fold = theta_check_k
                    for metric in metrics:
                        augmentation = augment_imputation(
                            gamma_k, basis.values, theta_fold, metric, dataset,
                            design, link, solver_config,
                            solve_rows=solve_rows, solve_weights=w_eval,
                            solve_scale=design.n_total,
                        )
                        fold_values[metric.kind].append(
                            augmentation.plug_in_value()
                        )
                elif variant == "SL":
                    theta_k = solve_weighted_score(
                        x_labeled[train], y[train], w_train, link,
                        solver_config.with_ridge(0.0), scale=design.n_total,
                    ).coefficients
                    for metric in metrics:
                        predictions = metric.predictions(
                            link, x_labeled[solve_rows] @ theta_k
                        )
                        losses = squared_error_loss(y[solve_rows], predictions)
                        fold_values[metric.kind].append(
                            float(np.sum(w_eval * losses) / design.n_total)
                        )
                else:
                    alpha_k, theta_k = _fit_fold_dr(
                        dataset, design, dr_basis, train, w_train, link,
                        solver_config,
                    )
                    tilt_eval = np.exp(
                        np.clip(
                            dr_basis.values[labeled_rows][solve_rows] @ alpha_k,
                            -30.0,
                            30.0,
                        )
                    )
                    # The intercept moment pins sum(w * tilt) to N only on
                    # the data the tilt was fitted to; out-of-fold weights
                    # need explicit renormalization to stay calibrated.
                    if cv_config.diagnostic_full_train:
                        normalizer = float(design.n_total)
                    else:
                        normalizer = float(np.sum(w_eval * tilt_eval))
                    for metric in metrics:
                        predictions = metric.predictions(
                            link, x_labeled[solve_rows] @ theta_k
                        )
                        losses = squared_error_loss(y[solve_rows], predictions)
                        fold_values[metric.kind].append(
                            float(np.sum(w_eval * tilt_eval * losses) / normalizer)
                        )
        except (NonConvergenceError, SingularJacobianError):
            dropped += 1
            continue
        for kind, values in fold_values.items():
            replication_values[kind].append(float(np.mean(values)))
        fold_values_log.append(fold_values)
    if not next(iter(replication_values.values())):
        raise NonConvergenceError(
            f"all {cv_config.replications} CV replications failed for {variant}"
        )
    estimates = {}
    for metric in metrics:
        kind = metric.kind
        estimates[kind] = AccuracyEstimate(
            kind,
            variant,
            "cv",
            float(np.mean(replication_values[kind])),
            diagnostics={
                "replication_values": replication_values[kind],
                "fold_values": [f[kind] for f in fold_values_log],
                "dropped_replications": dropped,
            },
        )
    return estimates


def cv_accuracy(
    dataset,
    design,
    basis,
    metric,
    variant,
    cv_config,
    solver_config=SolverConfig(),
    link=EXPIT,
    bundle=None,
    dr_basis=None,
    ssl_theta="combined",
):
    """Cross-validated accuracy for one metric; see `cv_accuracy_set`."""
    return cv_accuracy_set(
        dataset, design, basis, (metric,), variant, cv_config, solver_config,
        link, bundle, dr_basis, ssl_theta,
    )[metric.kind]


def _fit_fold_gamma(phi_train, y_train, w_train, scale, link, config, start=None):
    try:
        return solve_weighted_score(
            phi_train, y_train, w_train, link, config, scale=scale, start=start
        ).coefficients
    except (NonConvergenceError, SingularJacobianError):
        retry = config.with_ridge(max(config.ridge * 2.0, 1e-8))
        return solve_weighted_score(
            phi_train, y_train, w_train, link, retry, scale=scale, start=start
        ).coefficients


def _fit_fold_dr(dataset, design, dr_basis, train, w_train, link, config):
    try:
        return _dr_fold_pieces(
            dataset, design, dr_basis, train, w_train, link, config
        )
    except (NonConvergenceError, SingularJacobianError):
        retry = config.with_ridge(max(config.ridge * 2.0, 1e-8))
        return _dr_fold_pieces(
            dataset, design, dr_basis, train, w_train, link, retry
        )
