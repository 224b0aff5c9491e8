"""Newton root-finders for the package's weighted estimating equations.

All solvers share the same driver: full Newton steps with step-halving on
the score max-norm, convergence when the max-norm falls below the
configured tolerance, and row-order invariance (every quantity is a plain
sum over rows). Solvers are reentrant; callers parallelize across
replicates and folds.
"""

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConstraintInfeasibleError,
    ExtremeTiltWarning,
    NonConvergenceError,
    SingularJacobianError,
)

# A converged unpenalized logistic fit beyond this magnitude has pushed
# fitted probabilities within ~3e-7 of 0/1; treat as separation. During
# iteration, only clear runaways are aborted (transient overshoot is fine).
_SEPARATION_BOUND = 15.0
_RUNAWAY_BOUND = 30.0
_EXP_CLAMP = 30.0


@dataclass(frozen=True)
class SolverConfig:
    """Iteration caps and tolerances for all estimating-equation solvers.

    `ridge` is the lambda multiplying the identity penalty in the score.
    Tolerances are chosen so solver error is far below Monte Carlo noise.
    """

    max_iterations: int = 100
    score_tolerance: float = 1e-9
    step_halving_max: int = 30
    ridge: float = 0.0
    multi_start: bool = False

    def with_ridge(self, ridge):
        return replace(self, ridge=ridge)


@dataclass
class SolveOutcome:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    score_norm: float


def default_ridge(n_features, n_labeled):
    """Simulation-mode ridge: log(2p) / n^1.5."""
    return math.log(2 * n_features) / n_labeled**1.5


def real_data_ridge(n_labeled):
    """Real-data-mode ridge: 1/n."""
    return 1.0 / n_labeled


def _newton(score_fn, jacobian_fn, start, config, context, guard=None):
    """Damped Newton iteration on a vector-valued score.

    Halves the step until the score max-norm does not increase; raises
    NonConvergenceError (with the best iterate attached) when the
    iteration budget runs out.
    """
    point = np.array(start, dtype=float)
    score = score_fn(point)
    norm = float(np.max(np.abs(score)))
    best_point, best_norm = point.copy(), norm
    for iteration in range(config.max_iterations):
        if norm <= config.score_tolerance:
            return SolveOutcome(point, True, iteration, norm)
        try:
            step = np.linalg.solve(jacobian_fn(point), -score)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(
                f"{context}: singular Jacobian at iteration {iteration}"
            ) from exc
        scale = 1.0
        for _ in range(config.step_halving_max + 1):
            candidate = point + scale * step
            candidate_score = score_fn(candidate)
            candidate_norm = float(np.max(np.abs(candidate_score)))
            if np.isfinite(candidate_norm) and candidate_norm <= norm:
                break
            scale *= 0.5
        else:
            raise NonConvergenceError(
                f"{context}: step-halving failed at iteration {iteration}",
                outcome=SolveOutcome(best_point, False, iteration, best_norm),
            )
        point, score, norm = candidate, candidate_score, candidate_norm
        if norm < best_norm:
            best_point, best_norm = point.copy(), norm
        if guard is not None:
            guard(point, iteration)
    if norm <= config.score_tolerance:
        return SolveOutcome(point, True, config.max_iterations, norm)
    raise NonConvergenceError(
        f"{context}: no convergence in {config.max_iterations} iterations "
        f"(score max-norm {best_norm:.3e})",
        outcome=SolveOutcome(best_point, False, config.max_iterations, best_norm),
    )


def solve_weighted_score(basis, outcomes, weights, link, config, scale=None, start=None):
    """Root of the (optionally ridge-penalized) weighted GLM score.

    Solves  sum_i w_i Phi_i (y_i - g(gamma' Phi_i)) / scale - ridge * gamma = 0
    with Newton steps and step-halving, starting from zero unless a warm
    start is given. `scale` defaults to sum(weights), which equals N for
    IPW designs and keeps perturbed, fold-level, and plain fits on one
    code path.
    """
    basis = np.asarray(basis, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError("weights must be nonnegative with at least one positive")
    scale = float(weights.sum()) if scale is None else float(scale)
    ridge = config.ridge

    def score(gamma):
        residual = outcomes - link.g(basis @ gamma)
        return basis.T @ (weights * residual) / scale - ridge * gamma

    def jacobian(gamma):
        curvature = weights * link.dg(basis @ gamma)
        jac = -(basis.T * curvature) @ basis / scale
        if ridge:
            jac -= ridge * np.eye(basis.shape[1])
        return jac

    def guard(gamma, iteration):
        if ridge == 0 and np.max(np.abs(gamma)) > _RUNAWAY_BOUND:
            raise SingularJacobianError(
                "unpenalized score appears separated: coefficients diverging "
                f"(max |coef| > {_RUNAWAY_BOUND} at iteration {iteration})"
            )

    start = np.zeros(basis.shape[1]) if start is None else start
    outcome = _newton(score, jacobian, start, config, "weighted score", guard)
    if ridge == 0 and np.max(np.abs(outcome.coefficients)) > _SEPARATION_BOUND:
        raise SingularJacobianError(
            "unpenalized score converged to a separated solution "
            f"(max |coef| > {_SEPARATION_BOUND})"
        )
    return outcome


def solve_projection(design_matrix, target_probabilities, link, config, start=None):
    """Root of the unweighted projection equation on all N rows.

    Solves  mean_i x_i (m_i - g(theta' x_i)) = 0  for theta, matching the
    working model to supplied fitted probabilities. No ridge.
    """
    x = np.asarray(design_matrix, dtype=float)
    m = np.asarray(target_probabilities, dtype=float)
    n_rows = x.shape[0]

    def score(theta):
        return x.T @ (m - link.g(x @ theta)) / n_rows

    def jacobian(theta):
        curvature = link.dg(x @ theta)
        return -(x.T * curvature) @ x / n_rows

    start = np.zeros(x.shape[1]) if start is None else start
    return _newton(score, jacobian, start, config, "projection")


def solve_augmentation(z, offset, outcomes, weights, link, config, scale=None, start=None):
    """Recalibration coefficients nu making weighted residuals orthogonal to z.

    Solves  sum_i w_i (y_i - g(offset_i + nu' z_i)) z_i / scale = 0.
    z has columns [1, prediction]; when the prediction column is constant
    (all classifications on one side of the threshold) the system is
    collinear, so only the intercept equation is solved and the second
    coordinate is fixed at zero.
    """
    z = np.asarray(z, dtype=float)
    offset = np.asarray(offset, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    weights = np.asarray(weights, dtype=float)
    scale = float(weights.sum()) if scale is None else float(scale)

    degenerate = z.shape[1] == 2 and np.ptp(z[:, 1]) == 0.0
    active = z[:, :1] if degenerate else z

    def score(nu):
        residual = outcomes - link.g(offset + active @ nu)
        return active.T @ (weights * residual) / scale

    def jacobian(nu):
        curvature = weights * link.dg(offset + active @ nu)
        return -(active.T * curvature) @ active / scale

    def guard(nu, iteration):
        if np.max(np.abs(nu)) > _RUNAWAY_BOUND:
            raise SingularJacobianError(
                "augmentation equation has no finite root "
                f"(|nu| diverging at iteration {iteration})"
            )

    if start is None:
        start = np.zeros(active.shape[1])
    else:
        start = np.asarray(start, dtype=float)[: active.shape[1]]
    outcome = _newton(score, jacobian, start, config, "augmentation", guard)
    if degenerate:
        coefficients = np.array([outcome.coefficients[0], 0.0])
        outcome = SolveOutcome(
            coefficients, outcome.converged, outcome.iterations, outcome.score_norm
        )
    return outcome


def solve_constrained_wls(
    basis,
    outcomes,
    loss_weights,
    constraint_basis,
    constraint_weights,
    link,
    config,
    constraint_scale=None,
    start=None,
):
    """Equality-constrained weighted least squares on a link-transformed mean.

    Minimizes  (2n)^-1 sum_i lw_i (y_i - g(gamma' Phi_i))^2 + ridge ||gamma||^2
    subject to  sum_i cw_i m_i (y_i - g(gamma' Phi_i)) / cscale = 0,
    via Newton steps on the KKT system initialized at `start` (the fitted
    imputation coefficients), with step-halving on the KKT residual and
    descent monitoring on the penalized loss: once the constraints hold,
    an iterate that stops descending ends the iteration.

    Under the identity link the problem is an equality-constrained convex
    quadratic and one Newton step reaches the closed-form KKT solution.
    With `config.multi_start`, the solve is repeated from a few scaled
    copies of the starting point and the feasible solution with the
    lowest penalized loss wins (a hedge against the non-convexity; off by
    default).
    """
    if config.multi_start:
        base = np.zeros(np.asarray(basis).shape[1]) if start is None else start
        candidates = []
        for factor in (1.0, 0.0, 0.5):
            try:
                candidates.append(
                    solve_constrained_wls(
                        basis, outcomes, loss_weights, constraint_basis,
                        constraint_weights, link,
                        replace(config, multi_start=False),
                        constraint_scale=constraint_scale,
                        start=np.asarray(base, dtype=float) * factor,
                    )
                )
            except (NonConvergenceError, ConstraintInfeasibleError):
                continue
        if not candidates:
            raise NonConvergenceError("constrained WLS failed from every start")

        def loss_of(outcome):
            residual = np.asarray(outcomes) - link.g(
                np.asarray(basis) @ outcome.coefficients
            )
            return float(
                np.sum(np.asarray(loss_weights) * residual**2)
                / (2 * len(residual))
                + config.ridge * outcome.coefficients @ outcome.coefficients
            )

        return min(candidates, key=loss_of)
    basis = np.asarray(basis, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    loss_weights = np.asarray(loss_weights, dtype=float)
    moments = np.asarray(constraint_basis, dtype=float)
    c_weights = np.asarray(constraint_weights, dtype=float)
    c_scale = float(c_weights.sum()) if constraint_scale is None else float(constraint_scale)
    n_rows, n_coef = basis.shape
    n_constraints = moments.shape[1]
    ridge = config.ridge
    # Residual tolerance for the loss gradient scales with the loss weights
    # so the converged point is invariant to rescaling the direction vector.
    loss_scale = 1.0 + float(np.mean(np.abs(loss_weights)))

    def penalized_loss(gamma):
        residual = outcomes - link.g(basis @ gamma)
        return float(
            np.sum(loss_weights * residual**2) / (2 * n_rows)
            + ridge * gamma @ gamma
        )

    def constraint(gamma):
        residual = outcomes - link.g(basis @ gamma)
        return moments.T @ (c_weights * residual) / c_scale

    def kkt_residual(gamma, multipliers):
        eta = basis @ gamma
        residual = outcomes - link.g(eta)
        slope = link.dg(eta)
        grad = -basis.T @ (loss_weights * residual * slope) / n_rows
        grad += 2 * ridge * gamma
        jac_c = -(moments.T * (c_weights * slope)) @ basis / c_scale
        return grad + jac_c.T @ multipliers, constraint(gamma), jac_c

    def kkt_matrix(gamma, multipliers, jac_c):
        eta = basis @ gamma
        residual = outcomes - link.g(eta)
        slope = link.dg(eta)
        curve = link.ddg(eta)
        diag = loss_weights * (slope**2 - residual * curve) / n_rows
        diag -= c_weights * curve * (moments @ multipliers) / c_scale
        hess = (basis.T * diag) @ basis + 2 * ridge * np.eye(n_coef)
        top = np.hstack([hess, jac_c.T])
        bottom = np.hstack([jac_c, np.zeros((n_constraints, n_constraints))])
        return np.vstack([top, bottom])

    gamma = np.zeros(n_coef) if start is None else np.array(start, dtype=float)
    multipliers = np.zeros(n_constraints)
    r_grad, r_con, jac_c = kkt_residual(gamma, multipliers)

    def norm(grad_part, con_part):
        return max(
            float(np.max(np.abs(grad_part))) / loss_scale,
            float(np.max(np.abs(con_part))),
        )

    residual_norm = norm(r_grad, r_con)
    best = (gamma.copy(), multipliers.copy(), residual_norm, penalized_loss(gamma))
    loss_stalls = 0
    iterations = 0
    for iteration in range(config.max_iterations):
        iterations = iteration
        if residual_norm <= config.score_tolerance:
            return SolveOutcome(gamma, True, iteration, residual_norm)
        system = kkt_matrix(gamma, multipliers, jac_c)
        rhs = -np.concatenate([r_grad, r_con])
        try:
            step = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(system, rhs, rcond=None)
        scale = 1.0
        accepted = False
        for _ in range(config.step_halving_max + 1):
            cand_gamma = gamma + scale * step[:n_coef]
            cand_mult = multipliers + scale * step[n_coef:]
            cand_grad, cand_con, cand_jac = kkt_residual(cand_gamma, cand_mult)
            cand_norm = norm(cand_grad, cand_con)
            if np.isfinite(cand_norm) and cand_norm <= residual_norm:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        gamma, multipliers = cand_gamma, cand_mult
        r_grad, r_con, jac_c = cand_grad, cand_con, cand_jac
        residual_norm = cand_norm
        loss_value = penalized_loss(gamma)
        if residual_norm < best[2]:
            best = (gamma.copy(), multipliers.copy(), residual_norm, loss_value)
        feasible = float(np.max(np.abs(r_con))) <= 1e-6
        if feasible and loss_value > best[3] + 1e-12 + 1e-8 * abs(best[3]):
            loss_stalls += 1
            if loss_stalls >= 2:
                break
        else:
            loss_stalls = 0
    gamma, multipliers, residual_norm, _ = best
    if residual_norm <= config.score_tolerance:
        return SolveOutcome(gamma, True, iterations, residual_norm)
    if float(np.max(np.abs(constraint(gamma)))) > 1e-6:
        raise ConstraintInfeasibleError(
            "no iterate satisfied the moment constraints to 1e-6 "
            f"(best residual {residual_norm:.3e})"
        )
    raise NonConvergenceError(
        f"constrained WLS stalled with KKT residual {residual_norm:.3e}",
        outcome=SolveOutcome(gamma, False, iterations, residual_norm),
    )


def solve_density_ratio_tilt(basis_labeled, weights, basis_full, config, scale=None):
    """Exponential-tilting coefficients matching labeled to full moments.

    Solves  sum_lab w_i phi_i exp(alpha' phi_i) / N - mean_full(phi)
            + ridge * alpha = 0.
    Exponent arguments are clamped at +/-30 with a warning; hitting the
    clamp signals extreme covariate shift between labeled and full data.
    """
    phi = np.asarray(basis_labeled, dtype=float)
    weights = np.asarray(weights, dtype=float)
    full = np.asarray(basis_full, dtype=float)
    target = full.mean(axis=0)
    scale = float(full.shape[0]) if scale is None else float(scale)
    ridge = config.ridge
    clamped = [False]

    def tilt(alpha):
        argument = phi @ alpha
        if np.max(np.abs(argument), initial=0.0) > _EXP_CLAMP and not clamped[0]:
            clamped[0] = True
            warnings.warn(
                "density-ratio tilt exponent clamped at +/-30; labeled and "
                "full covariate moments are extremely imbalanced",
                ExtremeTiltWarning,
                stacklevel=3,
            )
        return np.exp(np.clip(argument, -_EXP_CLAMP, _EXP_CLAMP))

    def score(alpha):
        tilted = weights * tilt(alpha)
        return phi.T @ tilted / scale - target + ridge * alpha

    def jacobian(alpha):
        tilted = weights * tilt(alpha)
        return (phi.T * tilted) @ phi / scale + ridge * np.eye(phi.shape[1])

    start = np.zeros(phi.shape[1])
    return _newton(score, jacobian, start, config, "density-ratio tilt")
