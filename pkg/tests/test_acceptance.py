"""Acceptance gate: every criterion at its stated tolerance.

Quantitative criteria (1-7) are Monte Carlo reproductions at the desk
profile (200 replicates); each study checkpoints per-replicate records
under the cache directory, so interrupted runs resume where they left
off. Property criteria (8-14) are exact and fast. Every test prints one
pass/fail line (run pytest with -rA or -s to see the lines for passing
tests).
"""

import os
import json
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy import optimize

from strata_eval.allocation import AllocationInput, compare_designs, pilot_allocation
from strata_eval.basis import BasisSpec, expand
from strata_eval.cross_validation import CvConfig, ensemble
from strata_eval.data_model import build_design
from strata_eval.ee_solver import (
    SolverConfig,
    solve_augmentation,
    solve_constrained_wls,
    solve_weighted_score,
)
from strata_eval.errors import RankWarning
from strata_eval.estimators import (
    BRIER,
    OMR,
    AccuracyEstimate,
    accuracy_derivative,
    augment_imputation,
    combination_weight,
    estimate_accuracy_ssl,
    fit_imputation,
    fit_theta_ssl,
    smoothed_omr,
    squared_error_loss,
)
from strata_eval.inference import PerturbationConfig, _perturbed_coefficients
from strata_eval.estimators import information_matrix
from strata_eval.links import EXPIT, IDENTITY
from strata_eval.simulation import (
    ScenarioSpec,
    StudyConfig,
    generate,
    oracle_truth,
    run_study,
    scenario_basis_spec,
    summarize_study,
)
from strata_eval.allocation import neyman
from tests.conftest import REPO_CACHE, make_dataset

warnings.simplefilter("ignore", RankWarning)

ACCEPTANCE_CACHE = Path(os.environ.get("STRATA_EVAL_CACHE", REPO_CACHE)) / "acceptance"
DESK_REPLICATIONS = 200
DESK_PERTURBATIONS = 300
CV = CvConfig(folds=6, replications=20, seed=0)

_REPORTS = {}


def _criterion(number, description, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    line = f"[criterion {number:>2}] {status} {description}"
    if detail:
        line += f" | {detail}"
    print(line)
    assert passed, line


def _study_report(name, scenario, n_strata, n_per_stratum, *, seed,
                  with_perturbation=False, estimators=("SL", "SSL", "DR"),
                  ridge=None, cv=CV):
    """Run (or resume) one desk-profile study and summarize it."""
    if name in _REPORTS:
        return _REPORTS[name]
    ACCEPTANCE_CACHE.mkdir(parents=True, exist_ok=True)
    spec = ScenarioSpec(scenario, n_strata, n_per_stratum, 20000)
    perturb = (
        PerturbationConfig(replicates=DESK_PERTURBATIONS, seed=seed + 50_000)
        if with_perturbation
        else None
    )
    study = StudyConfig(
        replications=DESK_REPLICATIONS,
        seed=seed,
        estimators=estimators,
        metrics=(BRIER, OMR),
        cv=cv,
        perturb=perturb,
        theta_stats=True,
        ridge=ridge,
        checkpoint=str(ACCEPTANCE_CACHE / f"{name}.jsonl"),
    )
    records = run_study(spec, study)
    oracle = oracle_truth(scenario, n_strata)
    report = summarize_study(spec, records, oracle)
    _REPORTS[name] = report
    return report


def _grid_cell(scenario, n_strata, n_per_stratum):
    tag = {"main-i": "i", "main-ii": "ii", "main-iii": "iii"}[scenario]
    name = f"{tag}-S{n_strata}-n{n_per_stratum}"
    seeds = {"main-i": 1000, "main-ii": 2000, "main-iii": 3000}
    seed = seeds[scenario] + n_strata * 10 + n_per_stratum
    return _study_report(
        name, scenario, n_strata, n_per_stratum, seed=seed,
        with_perturbation=(n_strata == 2 and n_per_stratum == 100),
    )


GRID = [
    ("main-i", 2, 100), ("main-i", 2, 200), ("main-i", 4, 100),
    ("main-ii", 2, 100), ("main-ii", 2, 200), ("main-ii", 4, 100),
    ("main-iii", 2, 100), ("main-iii", 2, 200), ("main-iii", 4, 100),
]


def _accuracy_cell(report, estimator, metric, flavor="ensemble"):
    return report.cell(
        kind="accuracy", estimator=estimator, target=metric, flavor=flavor
    )


# ---------------------------------------------------------------------------
# Quantitative criteria (Monte Carlo at desk profile)


@pytest.mark.acceptance
def test_criterion_01_table1_block_i_se_and_coverage():
    report = _grid_cell("main-i", 2, 100)
    targets = {"brier": (1.19, 1.25, 0.94), "omr": (2.10, 2.23, 0.97)}
    details, ok = [], True
    for metric, (ese_ref, ase_ref, cp_ref) in targets.items():
        cell = _accuracy_cell(report, "SSL", metric)
        ese, ase, cp = 100 * cell["ese"], 100 * cell["ase"], cell["cp"]
        ok &= abs(ese - ese_ref) <= 0.20 * ese_ref
        ok &= abs(ase - ase_ref) <= 0.20 * ase_ref
        ok &= abs(cp - cp_ref) <= 0.04
        details.append(
            f"{metric}: 100ESE={ese:.2f} (ref {ese_ref}) "
            f"100ASE={ase:.2f} (ref {ase_ref}) CP={cp:.3f} (ref {cp_ref})"
        )
    _criterion(1, "block (i) S=2 n_s=100 ESE/ASE within 20%, CP within 0.04",
               ok, "; ".join(details))


@pytest.mark.acceptance
def test_criterion_02_efficiency_gains_over_supervised():
    floors = {"main-i": 1.10, "main-ii": 1.25, "main-iii": 1.30}
    details, ok = [], True
    for scenario, floor in floors.items():
        report = _grid_cell(scenario, 2, 100)
        for metric in ("brier", "omr"):
            re = _accuracy_cell(report, "SSL", metric)["re_vs_sl"]
            ok &= re >= floor
            details.append(f"{scenario}/{metric}: RE={re:.2f} (floor {floor})")
    _criterion(2, "ensemble SSL vs SL efficiency floors", ok, "; ".join(details))


@pytest.mark.acceptance
def test_criterion_03_bias_correction_pattern():
    report = _grid_cell("main-iii", 2, 100)
    apparent = _accuracy_cell(report, "SSL", "omr", "apparent")["pct_bias"]
    cv = _accuracy_cell(report, "SSL", "omr", "cv")["pct_bias"]
    blended = _accuracy_cell(report, "SSL", "omr", "ensemble")["pct_bias"]
    ok = apparent < -4.0 and cv > 4.0 and abs(blended) < 3.0
    _criterion(
        3, "OMR percent-bias pattern under (iii)", ok,
        f"apparent={apparent:+.1f}% cv={cv:+.1f}% ensemble={blended:+.1f}%",
    )


@pytest.mark.acceptance
def test_criterion_04_regression_parameter_table():
    report = _grid_cell("main-ii", 2, 100)
    re_theta1 = report.cell(
        kind="theta", estimator="SSL", target="theta_1"
    )["re_vs_sl"]
    coverages = [
        report.cell(kind="theta", estimator="SSL", target=f"theta_{j}")["cp"]
        for j in range(11)
    ]
    ok = re_theta1 >= 1.4 and all(0.91 <= cp <= 0.98 for cp in coverages)
    _criterion(
        4, "theta table under (ii): RE(theta_1) and coverage", ok,
        f"RE(theta_1)={re_theta1:.2f}; CP range "
        f"[{min(coverages):.3f}, {max(coverages):.3f}]",
    )


def _s4_report(setting):
    name = f"s4-{setting}"
    return _study_report(
        name, name, 2, 200, seed=4000 if setting == "a" else 4500,
        estimators=("SL", "SSL", "intrinsic"), ridge=0.0,
        cv=CvConfig(folds=6, replications=2, seed=0),
    )


def _relative_mse(report, metric_or_coord, numerator, denominator, kind):
    if kind == "theta":
        num = report.cell(kind="theta", estimator=numerator,
                          target=metric_or_coord)
        den = report.cell(kind="theta", estimator=denominator,
                          target=metric_or_coord)
        mse = lambda c: c["bias"] ** 2 + c["ese"] ** 2
    else:
        num = _accuracy_cell(report, numerator, metric_or_coord, "apparent")
        den = _accuracy_cell(report, denominator, metric_or_coord, "apparent")
        mse = lambda c: c["bias"] ** 2 + c["ese"] ** 2
    return mse(num) / mse(den)


@pytest.mark.acceptance
def test_criterion_05_intrinsic_efficiency():
    report_a = _s4_report("a")
    report_b = _s4_report("b")
    theta_re_a = np.mean(
        [
            _relative_mse(report_a, f"theta_{j}", "SSL", "intrinsic", "theta")
            for j in range(3)
        ]
    )
    d_re_a = np.mean(
        [
            _relative_mse(report_a, metric, "SSL", "intrinsic", "accuracy")
            for metric in ("brier", "omr")
        ]
    )
    theta_re_b = np.mean(
        [
            _relative_mse(report_b, f"theta_{j}", "SSL", "intrinsic", "theta")
            for j in range(3)
        ]
    )
    d_re_b = np.mean(
        [
            _relative_mse(report_b, metric, "SSL", "intrinsic", "accuracy")
            for metric in ("brier", "omr")
        ]
    )
    ok = (
        theta_re_a >= 1.15
        and d_re_a >= 1.05
        and abs(theta_re_b - 1.0) <= 0.10
        and abs(d_re_b - 1.0) <= 0.10
    )
    _criterion(
        5, "intrinsic vs SSL relative efficiency (settings a/b)", ok,
        f"(a) theta={theta_re_a:.2f} D={d_re_a:.2f}; "
        f"(b) theta={theta_re_b:.2f} D={d_re_b:.2f}",
    )


@pytest.mark.acceptance
def test_criterion_06_allocation_and_design_comparison():
    # Pilot-estimated Neyman shares under setting (I).
    spec = ScenarioSpec("s5-I", 2, 3000, 40000)
    dataset = generate(spec, 606)
    design = build_design(dataset)
    pilot = pilot_allocation(dataset, design, BRIER, budget=400)
    shares = pilot["shares"]
    share_ok = abs(shares[0] - 0.47) <= 0.03 and abs(shares[1] - 0.53) <= 0.03
    ratio = (pilot["sds"][1] / pilot["sds"][0]) ** 2
    ratio_ok = 4.0 <= ratio <= 9.5

    # Uniform vs stratified comparison with the naive unweighted baseline.
    summary_path = ACCEPTANCE_CACHE / "design-comparison-s5-I-n400.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
    else:
        summary = compare_designs(
            "s5-I", budget=400, replications=DESK_REPLICATIONS,
            cv_config=CV, seed=6000,
        )
        ACCEPTANCE_CACHE.mkdir(parents=True, exist_ok=True)
        summary_path.write_text(json.dumps(summary, indent=2))
    naive_bias = abs(summary["bias"]["naive:SL"]["brier"])
    weighted_bias = max(
        abs(summary["bias"]["stratified:SL"]["brier"]),
        abs(summary["bias"]["stratified:SSL"]["brier"]),
    )
    bias_ok = naive_bias >= 0.015 and weighted_bias <= 0.006
    re_ssl = summary["re"]["stratified_vs_uniform_ssl|brier"]
    ok = share_ok and ratio_ok and bias_ok
    _criterion(
        6, "Neyman shares and unweighted-naive bias (setting I, n=400)", ok,
        f"shares=({shares[0]:.3f},{shares[1]:.3f}) var-ratio={ratio:.1f} "
        f"naive bias={naive_bias:.3f} weighted bias={weighted_bias:.3f} "
        f"RE(S vs U, SSL Brier)={re_ssl:.2f}",
    )


@pytest.mark.acceptance
def test_criterion_07_density_ratio_never_beats_ssl():
    counts = {"brier": 0, "omr": 0}
    details = []
    for scenario, n_strata, n_per_stratum in GRID:
        report = _grid_cell(scenario, n_strata, n_per_stratum)
        for metric in counts:
            dr = _accuracy_cell(report, "DR", metric)["ese"]
            ssl = _accuracy_cell(report, "SSL", metric)["ese"]
            if dr >= ssl:
                counts[metric] += 1
        details.append(
            f"{scenario}/S{n_strata}/n{n_per_stratum}: "
            + ",".join(
                f"{m}:{_accuracy_cell(report, 'DR', m)['ese'] / _accuracy_cell(report, 'SSL', m)['ese']:.2f}"
                for m in counts
            )
        )
    ok = counts["brier"] >= 8 and counts["omr"] >= 8
    _criterion(
        7, "ESE(DR ensemble) >= ESE(SSL ensemble) in >= 8 of 9 cells", ok,
        f"brier {counts['brier']}/9, omr {counts['omr']}/9 "
        f"(DR/SSL ESE ratios: {'; '.join(details)})",
    )


# ---------------------------------------------------------------------------
# Property-based criteria (exact, fast)


@pytest.mark.acceptance
def test_criterion_08_unit_multiplier_identity():
    spec = ScenarioSpec("main-i", 2, 100, 4000)
    dataset = generate(spec, 17)
    design = build_design(dataset)
    basis = expand(scenario_basis_spec("main-i"), dataset)
    config = SolverConfig(ridge=1e-3)
    imputation = fit_imputation(dataset, design, basis, EXPIT, config)
    bundle = fit_theta_ssl(
        dataset, design, basis, EXPIT, config, CvConfig(folds=6, replications=1),
        imputation=imputation,
    )
    ones = np.ones(dataset.n_labeled)
    a_ssl = information_matrix(dataset.design_matrix(), bundle.theta_ssl, EXPIT)
    theta_star, gamma_star, *_ = _perturbed_coefficients(
        dataset, design, basis, bundle, ones, EXPIT, config, a_ssl
    )
    ok = np.array_equal(theta_star, bundle.theta_ssl)
    ok &= np.array_equal(gamma_star, bundle.gamma)
    for metric in (BRIER, OMR):
        apparent = estimate_accuracy_ssl(
            bundle.theta_fit(), imputation, dataset, design, metric, EXPIT,
            config,
        )
        from strata_eval.inference import perturb_once

        perturbed = perturb_once(
            dataset, design, basis, bundle, metric, ones, EXPIT, config
        )
        base_aug = augment_imputation(
            bundle.gamma, basis.values, bundle.theta_ssl, metric, dataset,
            design, EXPIT, config,
        )
        star_aug = augment_imputation(
            gamma_star, basis.values, theta_star, metric, dataset, design,
            EXPIT, config, solve_weights=design.weights[dataset.labeled_mask] * 1.0,
            solve_scale=float((design.weights[dataset.labeled_mask] * 1.0).sum()),
        )
        ok &= np.array_equal(base_aug.nu, star_aug.nu)
        ok &= perturbed == apparent.value
    _criterion(8, "G = 1 reproduces every fitted quantity bit-for-bit", bool(ok))


@pytest.mark.acceptance
def test_criterion_09_augmentation_orthogonality_randomized():
    # Verified over 1000 randomized instances with a finite root; draws
    # where the two-coordinate equation is separated (no finite root, a
    # raised error, not a converged solve) are redrawn and counted.
    from strata_eval.errors import SingularJacobianError

    rng = np.random.default_rng(909)
    config = SolverConfig()
    worst = 0.0
    converged = 0
    separated = 0
    while converged < 1000:
        n = int(rng.integers(25, 90))
        x = rng.normal(size=n)
        offset = rng.normal(scale=0.7, size=n) + 0.5 * x
        y = (rng.random(n) < EXPIT.g(offset + 0.3 * rng.normal(size=n))).astype(float)
        if rng.random() < 0.5:
            predictions = EXPIT.g(rng.normal() + rng.normal() * x)
        else:
            predictions = (EXPIT.g(rng.normal() * x) > 0.5).astype(float)
            if np.ptp(predictions) == 0:
                predictions[0] = 1.0 - predictions[0]
        z = np.column_stack([np.ones(n), predictions])
        weights = rng.uniform(0.5, 4.0, size=n)
        try:
            nu = solve_augmentation(
                z, offset, y, weights, EXPIT, config
            ).coefficients
        except SingularJacobianError:
            separated += 1
            continue
        converged += 1
        residual = y - EXPIT.g(offset + z @ nu)
        moments = z.T @ (weights * residual) / weights.sum()
        worst = max(worst, float(np.max(np.abs(moments))))
    _criterion(
        9, "augmentation orthogonality <= 1e-8 over 1000 randomized instances",
        worst <= 1e-8,
        f"worst residual {worst:.2e} ({separated} rootless draws redrawn)",
    )


@pytest.mark.acceptance
def test_criterion_10_squared_error_identity():
    # Exactness of the algebraic identity is checked in rational
    # arithmetic; the float implementation agrees to the last few ulps.
    from fractions import Fraction

    exact = True
    for y in (0, 1):
        for k in range(101):
            prediction = Fraction(k, 100)
            linear = y * (1 - 2 * prediction) + prediction**2
            exact &= linear == (y - prediction) ** 2
    grid = np.linspace(0.0, 1.0, 101)
    float_gap = max(
        float(np.max(np.abs(squared_error_loss(y, grid) - (y - grid) ** 2)))
        for y in (0.0, 1.0)
    )
    _criterion(
        10, "d(y, Y) = y(1 - 2Y) + Y^2 exact on the grid",
        bool(exact) and float_gap < 1e-14, f"float gap {float_gap:.1e}",
    )


@pytest.mark.acceptance
def test_criterion_11_solver_oracle_equivalence():
    rng = np.random.default_rng(111)
    config = SolverConfig()
    worst_score = 0.0
    for trial in range(100):
        n = int(rng.integers(30, 120))
        q = int(rng.integers(2, 6))
        basis = np.column_stack([np.ones(n), rng.normal(size=(n, q - 1))])
        coef = rng.normal(scale=0.7, size=q)
        y = (rng.random(n) < EXPIT.g(basis @ coef)).astype(float)
        weights = rng.uniform(0.5, 3.0, size=n)
        ridge = 0.0 if trial % 2 == 0 else float(np.log(2 * q) / n**1.5)
        scale = weights.sum()

        def score(gamma):
            return basis.T @ (weights * (y - EXPIT.g(basis @ gamma))) / scale \
                - ridge * gamma

        try:
            fitted = solve_weighted_score(
                basis, y, weights, EXPIT, config.with_ridge(ridge)
            ).coefficients
        except Exception:
            continue  # separated unpenalized draws carry no oracle target
        oracle = optimize.root(score, np.zeros(q), method="hybr", tol=1e-13).x
        worst_score = max(worst_score, float(np.max(np.abs(fitted - oracle))))

    # Constrained WLS vs the closed-form KKT solution under the identity link.
    n, q, m = 70, 4, 2
    basis = np.column_stack([np.ones(n), rng.normal(size=(n, q - 1))])
    y = rng.normal(size=n)
    loss_weights = rng.uniform(0.5, 2.0, size=n)
    moments = rng.normal(size=(n, m))
    c_weights = rng.uniform(0.5, 2.0, size=n)
    ridge = 0.03
    fitted = solve_constrained_wls(
        basis, y, loss_weights, moments, c_weights, IDENTITY,
        config.with_ridge(ridge),
    ).coefficients
    c_scale = c_weights.sum()
    hess = (basis.T * (loss_weights / n)) @ basis + 2 * ridge * np.eye(q)
    grad0 = -basis.T @ (loss_weights * y) / n
    jac = -(moments.T * c_weights) @ basis / c_scale
    rhs_c = -moments.T @ (c_weights * y) / c_scale
    kkt = np.block([[hess, jac.T], [jac, np.zeros((m, m))]])
    closed_form = np.linalg.solve(kkt, np.concatenate([-grad0, rhs_c]))[:q]
    kkt_gap = float(np.max(np.abs(fitted - closed_form)))
    ok = worst_score < 1e-6 and kkt_gap < 1e-8
    _criterion(
        11, "solver-oracle equivalence (root-finder 1e-6, KKT 1e-8)", ok,
        f"max root gap {worst_score:.2e}, KKT gap {kkt_gap:.2e}",
    )


@pytest.mark.acceptance
def test_criterion_12_combination_weight_and_ensemble_algebra():
    rng = np.random.default_rng(112)
    ok = True
    for _ in range(50):
        a, b = rng.uniform(0.1, 5.0, size=2)
        ok &= abs(combination_weight(np.diag([a, b])) - b / (a + b)) < 1e-12
    for k in range(2, 11):
        apparent = AccuracyEstimate("brier", "SL", "apparent", 1.0)
        cv = AccuracyEstimate("brier", "SL", "cv", 0.0)
        ok &= ensemble(apparent, cv, k).value == k / (2 * k - 1)
    _criterion(12, "W1 = b/(a+b) and omega = K/(2K-1) exact", bool(ok))


@pytest.mark.acceptance
def test_criterion_13_neyman_random_search_optimality():
    rng = np.random.default_rng(113)
    ok = True
    details = []
    for _ in range(4):
        n_strata = int(rng.integers(2, 5))
        rho = rng.dirichlet(np.ones(n_strata))
        sigma = rng.uniform(0.2, 2.0, size=n_strata)
        budget = int(rng.integers(10 * n_strata, 300))
        allocation_input = AllocationInput(rho, sigma, budget)
        optimum = allocation_input.objective(
            allocation_input.continuous_allocation()
        )
        rounded = allocation_input.objective(neyman(allocation_input))
        best = np.inf
        for _ in range(10_000):
            best = min(
                best,
                allocation_input.objective(rng.multinomial(budget, rho)),
            )
        ok &= best >= optimum * (1.0 - 1e-12)
        slack = max(best - optimum, 1e-15)
        ok &= rounded <= best + 0.10 * slack + 1e-15
        details.append(f"S={n_strata}: opt={optimum:.5f} ours={rounded:.5f} "
                       f"best-random={best:.5f}")
    _criterion(
        13, "no random integer allocation beats the continuous optimum",
        bool(ok), "; ".join(details),
    )


@pytest.mark.acceptance
def test_criterion_14_kernel_derivative_convergence_order():
    rng = np.random.default_rng(114)
    dataset = make_dataset(rng, n_total=800, n_features=3)
    design = build_design(dataset)
    theta = np.array([0.1, 0.7, -0.4, 0.3])
    gradient = accuracy_derivative(dataset, design, theta, OMR)
    direction = rng.normal(size=4)
    direction /= np.linalg.norm(direction)
    steps = [2e-2, 1e-2, 5e-3, 2.5e-3]
    errors = []
    for step in steps:
        plus = smoothed_omr(dataset, design, theta + step * direction, OMR)
        minus = smoothed_omr(dataset, design, theta - step * direction, OMR)
        errors.append(abs((plus - minus) / (2 * step) - gradient @ direction))
    rate = np.log(errors[0] / errors[-1]) / np.log(steps[0] / steps[-1])
    _criterion(
        14, "kernel OMR derivative matches central differences at O(step^2)",
        rate > 1.7, f"observed order {rate:.2f}",
    )


@pytest.mark.acceptance
def test_paper_table_spot_checks():
    """Loose-band checks of table rows not bound by a numbered criterion:
    the supervised theta_1 bias/ESE and the projected-fit bias under the
    correct-model setting, the DR Brier ESE level, the ASE/ESE agreement
    for theta_1 under setting (ii), and the stratified-vs-uniform gain."""
    report_i = _grid_cell("main-i", 2, 100)
    sl_theta1 = report_i.cell(kind="theta", estimator="SL", target="theta_1")
    check_theta1 = report_i.cell(
        kind="theta", estimator="SSL_check", target="theta_1"
    )
    dr_brier = _accuracy_cell(report_i, "DR", "brier")
    report_ii = _grid_cell("main-ii", 2, 100)
    ssl_theta1 = report_ii.cell(kind="theta", estimator="SSL", target="theta_1")
    ase_ese = ssl_theta1["ase"] / ssl_theta1["ese"]

    summary_path = ACCEPTANCE_CACHE / "design-comparison-s5-I-n400.json"
    summary = json.loads(summary_path.read_text())
    re_s_vs_u = summary["re"]["stratified_vs_uniform_ssl|brier"]

    checks = {
        # Reference row: bias 0.15, ESE 0.32 for the supervised theta_1.
        "SL theta_1 bias": 0.07 <= sl_theta1["bias"] <= 0.25,
        "SL theta_1 ESE": 0.22 <= sl_theta1["ese"] <= 0.42,
        # Projected fit tracks the supervised finite-sample bias (~0.14).
        "check theta_1 bias": 0.05 <= check_theta1["bias"] <= 0.25,
        # DR ensemble Brier ESE sits near the supervised level (~1.31e-2).
        "DR brier 100ESE": 0.95 <= 100 * dr_brier["ese"] <= 1.75,
        # Setting (ii): estimated SEs track the empirical SE for theta_1.
        "theta_1 ASE/ESE": 0.8 <= ase_ese <= 1.2,
        # Stratified labeling beats uniform for the SSL Brier (~1.45).
        "S vs U RE": re_s_vs_u > 1.1,
    }
    detail = "; ".join(
        f"{name}:{'ok' if passed else 'BAD'}" for name, passed in checks.items()
    )
    print(f"[spot checks ] {'PASS' if all(checks.values()) else 'FAIL'} {detail}")
    assert all(checks.values()), detail
