"""Data generators, oracle truths, and the Monte Carlo study harness.

Every scenario draws a full population (features, stratum labels, and
outcomes), labels a stratified or uniform subsample, and runs the
requested estimator pipelines. Oracle values of the working-model
coefficients and accuracy measures come from a large-draw solve of the
population estimating equations, cached on disk. Reports aggregate bias,
percent bias, empirical and average estimated SEs, coverage, and
relative efficiency with the table conventions recorded per cell
(MSE ratios for coefficients, variance ratios for accuracy measures).
"""

import csv
import hashlib
import json
import multiprocessing
import os
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .basis import BasisSpec, expand
from .cross_validation import CvConfig, cv_accuracy_set, ensemble
from .data_model import SemiSupervisedDataset, build_design, build_pooled_design
from .ee_solver import SolverConfig, default_ridge, solve_weighted_score
from .errors import (
    NonConvergenceError,
    RankWarning,
    SingularJacobianError,
    StrataEvalError,
    TooManyFailuresError,
)
from .estimators import (
    BRIER,
    OMR,
    AccuracyMetric,
    estimate_accuracy_dr,
    estimate_accuracy_intrinsic,
    estimate_accuracy_sl,
    estimate_accuracy_ssl,
    fit_imputation,
    fit_intrinsic_theta,
    fit_theta_dr,
    fit_theta_sl,
    fit_theta_ssl,
    squared_error_loss,
)
from .inference import PerturbationConfig, resample_se_set, theta_ssl_covariance
from .links import EXPIT

MAIN_THETA = np.array([0.0, 1.0, 1.0, 0.5, 0.5, 0, 0, 0, 0, 0, 0])
_V2_PAIRS = [[0, j] for j in range(1, 10)] + [[1, j] for j in range(2, 10)]

SCENARIO_IDS = (
    "main-i",
    "main-ii",
    "main-iii",
    "s4-a",
    "s4-b",
    "s5-I",
    "s5-II",
    "s8-gm",
)


@dataclass(frozen=True)
class ScenarioSpec:
    """Which generator to run and at what design size."""

    scenario: str
    n_strata: int = 2
    n_per_stratum: int = 100
    n_unlabeled: int = 20000
    sampling: str = "stratified"
    n_budget: int = None

    def __post_init__(self):
        if self.scenario not in SCENARIO_IDS and self.scenario != "custom":
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.scenario.startswith("main") and self.n_strata not in (2, 4):
            raise ValueError("main scenarios support S=2 or S=4")
        if self.sampling not in ("stratified", "uniform"):
            raise ValueError("sampling must be 'stratified' or 'uniform'")
        if self.sampling == "uniform" and self.n_budget is None:
            raise ValueError("uniform sampling needs n_budget")

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass
class Population:
    features: np.ndarray
    strata: np.ndarray
    outcomes: np.ndarray


def _ar_covariance(scale, decay, size):
    lags = np.abs(np.subtract.outer(np.arange(size), np.arange(size)))
    return scale * decay**lags


def _main_strata(rng, features, n_strata):
    strata = 1 + (features[:, 0] + rng.standard_normal(features.shape[0]) <= 0.5)
    if n_strata == 4:
        strata = strata + 2 * (
            features[:, 2] + rng.standard_normal(features.shape[0]) <= 0.5
        )
    return strata.astype(np.int64)


def _gumbel(rng, size):
    return rng.gumbel(loc=-2.0, scale=0.3, size=size)


def generate_population(scenario, n_strata, size, seed):
    """Draw `size` population units for a scenario, deterministically."""
    rng = np.random.default_rng(seed)
    if scenario.startswith("main"):
        chol = np.linalg.cholesky(_ar_covariance(3.0, 0.4, 10))
        features = rng.standard_normal((size, 10)) @ chol.T
        strata = _main_strata(rng, features, n_strata)
        linear = features @ MAIN_THETA[1:]
        if scenario == "main-i":
            index = linear + rng.logistic(size=size)
            outcomes = (index > 2.0).astype(float)
        elif scenario == "main-ii":
            bump = 0.5 * (
                features[:, 0] * features[:, 1]
                + features[:, 0] * features[:, 4]
                - features[:, 1] * features[:, 5]
                - (strata == 1)
            )
            outcomes = (linear + bump + rng.logistic(size=size) > 0.0).astype(float)
        else:
            bump = features[:, 0] ** 2 + features[:, 2] ** 2
            noise = np.exp(-2.0 - 3.0 * features[:, 3] - 3.0 * features[:, 5])
            outcomes = (linear + bump + noise * _gumbel(rng, size) > 2.0).astype(float)
        return Population(features, strata, outcomes)
    if scenario.startswith("s4"):
        chol = np.linalg.cholesky(_ar_covariance(1.0, 0.4, 3))
        draws = rng.standard_normal((size, 3)) @ chol.T
        features = draws[:, :2]
        strata = (1 + (draws[:, 2] >= 1.0)).astype(np.int64)
        x1, x2 = features[:, 0], features[:, 1]
        if scenario == "s4-a":
            sign = np.where(strata == 1, 1.0, -1.0)
            index = 2.0 * x1 - 2.0 * x2 + 5.0 * sign * x1 * x2
        else:
            index = strata * (x1 - x2) + 1.5 * x1 * x2
        outcomes = (index + rng.logistic(size=size) > 0.0).astype(float)
        return Population(features, strata, outcomes)
    if scenario.startswith("s5"):
        chol = np.linalg.cholesky(_ar_covariance(3.0, 0.4, 10))
        features = rng.standard_normal((size, 10)) @ chol.T
        strata = (
            1
            + (
                features[:, 0]
                + features[:, 1]
                + rng.standard_normal(size)
                >= 1.5
            )
        ).astype(np.int64)
        linear = features @ MAIN_THETA[1:]
        if scenario == "s5-I":
            mu = linear + 0.5 * (
                features[:, 0] * features[:, 1]
                + features[:, 0] * features[:, 4]
                - features[:, 1] * features[:, 5]
            )
            index = np.where(strata == 1, 0.8 * mu - 5.0, mu)
            outcomes = (index + rng.logistic(size=size) > 1.0).astype(float)
        else:
            mu = linear + features[:, 0] ** 2 + features[:, 2] ** 2
            index = np.where(strata == 1, 0.8 * mu - 5.0, mu)
            noise = np.exp(-2.0 - 3.0 * features[:, 3] - 3.0 * features[:, 5])
            outcomes = (index + noise * _gumbel(rng, size) > 1.0).astype(float)
        return Population(features, strata, outcomes)
    if scenario == "s8-gm":
        outcomes = (rng.random(size) < 0.5).astype(float)
        sigma0 = _ar_covariance(1.0, 0.2, 10)
        sigma1 = sigma0 + _ar_covariance(1.0, 0.3, 10) - 0.4 * np.eye(10) + 0.2 * (
            1.0 - np.eye(10)
        )
        mu = np.array([0.2, -0.2, 0.2, -0.2, 0.2, -0.2, 0.1, -0.1, 0.0, 0.0])
        draws = np.empty((size, 10))
        for label, sigma in ((0.0, sigma0), (1.0, sigma1)):
            mask = outcomes == label
            base = rng.standard_normal((int(mask.sum()), 10))
            draws[mask] = label * mu + base @ np.linalg.cholesky(sigma).T
        cubic = np.isin(np.arange(10), [2, 3, 6, 7])
        features = np.where(cubic, draws + 0.12 * draws**3, 1.12 * draws)
        strata = (
            1 + (draws[:, 2] + rng.standard_normal(size) < 0.5)
        ).astype(np.int64)
        return Population(features, strata, outcomes)
    raise ValueError(f"unknown scenario {scenario!r}")


def sample_labels(population, spec, seed):
    """Label a stratified (n_s per stratum) or uniform (n_budget) subsample."""
    rng = np.random.default_rng(seed)
    size = population.features.shape[0]
    labeled = np.zeros(size, dtype=bool)
    if spec.sampling == "stratified":
        for s in np.unique(population.strata):
            members = np.flatnonzero(population.strata == s)
            take = min(spec.n_per_stratum, members.size)
            labeled[rng.choice(members, size=take, replace=False)] = True
    else:
        labeled[rng.choice(size, size=spec.n_budget, replace=False)] = True
    return SemiSupervisedDataset(
        features=population.features,
        strata=population.strata,
        labeled_mask=labeled,
        outcomes=population.outcomes[labeled],
    )


def generate(spec, seed):
    """One dataset draw for a scenario spec (population plus labeling)."""
    sequence = (
        seed
        if isinstance(seed, np.random.SeedSequence)
        else np.random.SeedSequence(seed)
    )
    seeds = sequence.spawn(2)
    population = generate_population(
        spec.scenario, spec.n_strata, spec.n_unlabeled, seeds[0]
    )
    return sample_labels(population, spec, seeds[1])


def scenario_basis_spec(scenario):
    """The imputation basis each scenario uses."""
    spline = {"kind": "natural_spline", "knots": 3}
    if scenario in ("main-i", "main-iii", "s8-gm"):
        return BasisSpec(
            (
                {"kind": "intercept"},
                {"kind": "raw"},
                spline,
                {"kind": "stratum_indicators"},
            )
        )
    if scenario == "main-ii":
        return BasisSpec(
            (
                {"kind": "intercept"},
                {"kind": "raw"},
                {"kind": "interactions", "pairs": _V2_PAIRS},
                {"kind": "stratum_indicators"},
            )
        )
    if scenario.startswith("s4"):
        return BasisSpec(
            (
                {"kind": "intercept"},
                {"kind": "raw"},
                {"kind": "interactions", "pairs": [[0, 1]]},
            )
        )
    if scenario == "s5-I":
        return BasisSpec(
            (
                {"kind": "intercept"},
                {"kind": "stratum_indicators"},
                {"kind": "raw"},
                {"kind": "interactions", "pairs": _V2_PAIRS},
                {"kind": "stratum_scaled", "inner": {"kind": "raw"}},
                {
                    "kind": "stratum_scaled",
                    "inner": {"kind": "interactions", "pairs": _V2_PAIRS},
                },
            )
        )
    if scenario == "s5-II":
        return BasisSpec(
            (
                {"kind": "intercept"},
                {"kind": "stratum_indicators"},
                {"kind": "raw"},
                spline,
            )
        )
    raise ValueError(f"no basis spec for scenario {scenario!r}")


# ---------------------------------------------------------------------------
# Oracle truths


def _oracle_cache_dir(cache_dir=None):
    if cache_dir is not None:
        return Path(cache_dir)
    env = os.environ.get("STRATA_EVAL_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "strata_eval"


def oracle_truth(
    scenario,
    n_strata=2,
    threshold=0.5,
    n_draws=2_000_000,
    seed=777,
    cache_dir=None,
    block_size=250_000,
    link=EXPIT,
):
    """Population working-model coefficients and accuracy values.

    Solves mean[x (y - g(theta' x))] = 0 by chunked Newton over
    regenerated blocks of draws (memory stays bounded), then evaluates
    the Brier score and OMR at the root by Monte Carlo integration.
    Results are cached as JSON keyed by the full configuration.
    """
    directory = _oracle_cache_dir(cache_dir)
    directory.mkdir(parents=True, exist_ok=True)
    key = f"{scenario}_S{n_strata}_c{threshold}_m{n_draws}_seed{seed}"
    cache_file = directory / f"oracle_{key}.json"
    if cache_file.exists():
        payload = json.loads(cache_file.read_text())
        payload["theta"] = np.asarray(payload["theta"])
        return payload

    n_blocks = int(np.ceil(n_draws / block_size))
    block_seeds = np.random.SeedSequence(seed).spawn(n_blocks)
    sizes = [
        min(block_size, n_draws - b * block_size) for b in range(n_blocks)
    ]

    def blocks():
        for block_seed, size in zip(block_seeds, sizes):
            population = generate_population(scenario, n_strata, size, block_seed)
            x = np.column_stack([np.ones(size), population.features])
            yield x, population.outcomes

    n_coef = None
    for x, _ in blocks():
        n_coef = x.shape[1]
        break
    theta = np.zeros(n_coef)
    for _ in range(60):
        score = np.zeros(n_coef)
        info = np.zeros((n_coef, n_coef))
        for x, y in blocks():
            eta = x @ theta
            score += x.T @ (y - link.g(eta))
            info += (x.T * link.dg(eta)) @ x
        score /= n_draws
        info /= n_draws
        step = np.linalg.solve(info, score)
        theta = theta + step
        if np.max(np.abs(score)) < 1e-10:
            break

    sums = {"brier": 0.0, "omr": 0.0}
    for x, y in blocks():
        probabilities = link.g(x @ theta)
        sums["brier"] += float(
            np.sum(squared_error_loss(y, probabilities))
        )
        labels = (probabilities > threshold).astype(float)
        sums["omr"] += float(np.sum(squared_error_loss(y, labels)))
    payload = {
        "scenario": scenario,
        "n_strata": n_strata,
        "threshold": threshold,
        "n_draws": n_draws,
        "seed": seed,
        "theta": theta,
        "d_bar": {k: v / n_draws for k, v in sums.items()},
    }
    serializable = dict(payload)
    serializable["theta"] = theta.tolist()
    cache_file.write_text(json.dumps(serializable, indent=2))
    return payload


# ---------------------------------------------------------------------------
# Replicate pipeline


@dataclass(frozen=True)
class StudyConfig:
    """What to estimate per replicate and how many replicates to run."""

    replications: int = 200
    seed: int = 1
    estimators: tuple = ("SL", "SSL", "DR")
    metrics: tuple = (BRIER, OMR)
    cv: CvConfig = CvConfig()
    perturb: PerturbationConfig = None
    theta_stats: bool = True
    ridge: float = None
    bandwidth_constant: float = 1.0
    checkpoint: str = None
    n_jobs: int = None
    keep_cv_diagnostics: bool = False
    keep_perturb_values: bool = False

    def resolved_jobs(self):
        if self.n_jobs is not None:
            return max(1, self.n_jobs)
        env = os.environ.get("STRATA_EVAL_WORKERS")
        if env:
            return max(1, int(env))
        return multiprocessing.cpu_count()


PROFILES = {
    "desk": {"replications": 200, "perturb_replicates": 300, "cv_replications": 20},
    "full": {"replications": 500, "perturb_replicates": 500, "cv_replications": 20},
    "smoke": {"replications": 2, "perturb_replicates": 25, "cv_replications": 2},
}


def _solver_config(dataset, study):
    ridge = study.ridge
    if ridge is None:
        ridge = default_ridge(dataset.n_features, dataset.n_labeled)
    return SolverConfig(ridge=ridge)


def evaluate_replicate(dataset, design, basis, study, link=EXPIT, dr_basis=None):
    """All requested estimates on one dataset; returns a JSON-able record."""
    config = _solver_config(dataset, study)
    dr_basis = basis if dr_basis is None else dr_basis
    record = {"theta": {}, "accuracy": {}, "se": {}, "ci": {},
              "perturb_failures": {}, "cv_dropped": {}}
    if study.keep_cv_diagnostics:
        record["cv_diagnostics"] = {}
    metrics = tuple(
        m if isinstance(m, AccuracyMetric) else AccuracyMetric(**m)
        for m in study.metrics
    )
    record["accuracy"] = {m.kind: {} for m in metrics}

    theta_sl_fit = fit_theta_sl(dataset, design, link, config)
    record["theta"]["SL"] = theta_sl_fit.coefficients.tolist()

    bundle = None
    imputation = None
    if "SSL" in study.estimators or "intrinsic" in study.estimators:
        imputation = fit_imputation(dataset, design, basis, link, config)
        bundle = fit_theta_ssl(
            dataset, design, basis, link, config, study.cv,
            theta_sl_fit=theta_sl_fit, imputation=imputation,
        )
        record["theta"]["SSL"] = bundle.theta_ssl.tolist()
        record["theta"]["SSL_check"] = bundle.theta_check.tolist()
        if study.theta_stats:
            record["theta_ase_ssl"] = theta_ssl_covariance(bundle)["ase"].tolist()

    theta_dr_fit = None
    if "DR" in study.estimators:
        theta_dr_fit = fit_theta_dr(dataset, design, dr_basis, link, config)
        record["theta"]["DR"] = theta_dr_fit.coefficients.tolist()

    if "SL" in study.estimators:
        cv_set = cv_accuracy_set(
            dataset, design, basis, metrics, "SL", study.cv, config, link
        )
        for metric in metrics:
            apparent = estimate_accuracy_sl(
                theta_sl_fit, dataset, design, metric, link,
                study.bandwidth_constant,
            )
            cv = cv_set[metric.kind]
            blended = ensemble(apparent, cv, study.cv.folds)
            record["accuracy"][metric.kind]["SL"] = {
                "apparent": apparent.value, "cv": cv.value,
                "ensemble": blended.value,
            }
        record["cv_dropped"]["SL"] = cv_set[metrics[0].kind].diagnostics[
            "dropped_replications"
        ]
        if study.keep_cv_diagnostics:
            record["cv_diagnostics"]["SL"] = {
                kind: {
                    "replication_values": est.diagnostics["replication_values"],
                    "fold_values": est.diagnostics["fold_values"],
                    "dropped_replications": est.diagnostics["dropped_replications"],
                }
                for kind, est in cv_set.items()
            }

    if "SSL" in study.estimators:
        cv_set = cv_accuracy_set(
            dataset, design, basis, metrics, "SSL", study.cv, config, link,
            bundle=bundle,
        )
        centers = {}
        for metric in metrics:
            apparent = estimate_accuracy_ssl(
                bundle.theta_fit(), imputation, dataset, design, metric,
                link, config,
            )
            cv = cv_set[metric.kind]
            blended = ensemble(apparent, cv, study.cv.folds)
            record["accuracy"][metric.kind]["SSL"] = {
                "apparent": apparent.value, "cv": cv.value,
                "ensemble": blended.value,
            }
            centers[metric.kind] = blended.value
        record["cv_dropped"]["SSL"] = cv_set[metrics[0].kind].diagnostics[
            "dropped_replications"
        ]
        if study.keep_cv_diagnostics:
            record["cv_diagnostics"]["SSL"] = {
                kind: {
                    "replication_values": est.diagnostics["replication_values"],
                    "fold_values": est.diagnostics["fold_values"],
                    "dropped_replications": est.diagnostics["dropped_replications"],
                }
                for kind, est in cv_set.items()
            }
        if study.perturb is not None:
            try:
                resamples = resample_se_set(
                    dataset, design, basis, bundle, metrics, centers,
                    link=link, solver_config=config, config=study.perturb,
                )
                for kind, resample in resamples.items():
                    record["se"][kind] = resample["se"]
                    record["ci"][kind] = list(resample["ci"])
                    record["perturb_failures"][kind] = resample["failures"]
                    if study.keep_perturb_values:
                        record.setdefault("perturb_values", {})[kind] = (
                            resample["values"].tolist()
                        )
            except TooManyFailuresError:
                for metric in metrics:
                    record["se"][metric.kind] = None
                    record["ci"][metric.kind] = None
                    record["perturb_failures"][metric.kind] = -1

    if "DR" in study.estimators:
        cv_set = cv_accuracy_set(
            dataset, design, basis, metrics, "DR", study.cv, config, link,
            dr_basis=dr_basis,
        )
        for metric in metrics:
            apparent = estimate_accuracy_dr(
                dataset, design, dr_basis, metric, link, config,
                theta_fit=theta_dr_fit,
            )
            cv = cv_set[metric.kind]
            blended = ensemble(apparent, cv, study.cv.folds)
            record["accuracy"][metric.kind]["DR"] = {
                "apparent": apparent.value, "cv": cv.value,
                "ensemble": blended.value,
            }
        record["cv_dropped"]["DR"] = cv_set[metrics[0].kind].diagnostics[
            "dropped_replications"
        ]
        if study.keep_cv_diagnostics:
            record["cv_diagnostics"]["DR"] = {
                kind: {
                    "replication_values": est.diagnostics["replication_values"],
                    "fold_values": est.diagnostics["fold_values"],
                    "dropped_replications": est.diagnostics["dropped_replications"],
                }
                for kind, est in cv_set.items()
            }

    if "intrinsic" in study.estimators:
        for metric in metrics:
            intrinsic = estimate_accuracy_intrinsic(
                dataset, design, basis, metric, bundle.theta_check, link,
                config, study.bandwidth_constant,
            )
            record["accuracy"][metric.kind]["intrinsic"] = {
                "apparent": intrinsic.value
            }

    if "intrinsic" in study.estimators:
        p1 = dataset.n_features + 1
        coefficients = []
        for j in range(p1):
            direction = np.zeros(p1)
            direction[j] = 1.0
            fit = fit_intrinsic_theta(
                dataset, design, basis, direction, bundle.theta_check, link,
                config, imputation=imputation,
            )
            coefficients.append(float(fit.coefficients[j]))
        record["theta"]["intrinsic"] = coefficients
    return record


# ---------------------------------------------------------------------------
# Study driver

_WORKER_CONTEXT = {}


def _study_context(spec, study):
    return {"spec": spec, "study": study}


def _init_worker(spec, study):
    _WORKER_CONTEXT.clear()
    _WORKER_CONTEXT.update(_study_context(spec, study))


def _run_indexed_replicate(args):
    index, seed = args
    spec = _WORKER_CONTEXT["spec"]
    study = _WORKER_CONTEXT["study"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankWarning)
        try:
            dataset = generate(spec, seed)
            design = build_design(dataset)
            basis = expand(scenario_basis_spec(spec.scenario), dataset)
            record = evaluate_replicate(dataset, design, basis, study)
            record["replicate"] = index
            return index, record
        except (StrataEvalError, np.linalg.LinAlgError) as exc:
            return index, {"replicate": index, "failed": repr(exc)}


def _checkpoint_key(spec, study):
    payload = json.dumps(
        {"spec": asdict(spec), "study": _study_signature(study)}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _study_signature(study):
    signature = asdict(study)
    signature["metrics"] = [
        asdict(m) if isinstance(m, AccuracyMetric) else m for m in study.metrics
    ]
    signature.pop("n_jobs", None)
    signature.pop("checkpoint", None)
    signature.pop("keep_cv_diagnostics", None)
    signature.pop("keep_perturb_values", None)
    return signature


def run_study(spec, study, progress=None):
    """Run a Monte Carlo study, optionally resuming from a checkpoint.

    Replicate seeds are spawned from the study seed, so results do not
    depend on worker count or execution order. With a checkpoint path,
    completed replicates are appended as JSON lines and skipped on
    resume (the file is keyed by a config hash and refused on mismatch).
    """
    seeds = np.random.SeedSequence(study.seed).spawn(study.replications)
    done = {}
    checkpoint_path = Path(study.checkpoint) if study.checkpoint else None
    key = _checkpoint_key(spec, study)
    if checkpoint_path and checkpoint_path.exists():
        with checkpoint_path.open() as handle:
            header = json.loads(handle.readline())
            if header.get("config_hash") != key:
                raise ValueError(
                    f"checkpoint {checkpoint_path} belongs to a different study"
                )
            for line in handle:
                entry = json.loads(line)
                done[entry["index"]] = entry["record"]
    elif checkpoint_path:
        checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
        checkpoint_path.write_text(json.dumps({"config_hash": key}) + "\n")

    pending = [
        (i, seeds[i]) for i in range(study.replications) if i not in done
    ]
    jobs = study.resolved_jobs()
    handle = checkpoint_path.open("a") if checkpoint_path else None

    def consume(index, record):
        done[index] = record
        if handle is not None:
            handle.write(json.dumps({"index": index, "record": record}) + "\n")
            handle.flush()
        if progress is not None:
            progress(len(done), study.replications)

    try:
        if jobs == 1 or len(pending) <= 1:
            _init_worker(spec, study)
            for args in pending:
                index, record = _run_indexed_replicate(args)
                consume(index, record)
        else:
            with multiprocessing.get_context("fork").Pool(
                jobs, initializer=_init_worker, initargs=(spec, study)
            ) as pool:
                for index, record in pool.imap_unordered(
                    _run_indexed_replicate, pending
                ):
                    consume(index, record)
    finally:
        if handle is not None:
            handle.close()
    return [done[i] for i in sorted(done)]


# ---------------------------------------------------------------------------
# Aggregation


@dataclass
class MonteCarloReport:
    """Aggregated study cells plus the conventions used to compute them."""

    scenario: str
    cells: list
    replicates: int
    dropped: int
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(
            {
                "scenario": self.scenario,
                "replicates": self.replicates,
                "dropped": self.dropped,
                "cells": self.cells,
                "diagnostics": self.diagnostics,
            },
            indent=2,
        )

    _CSV_FIELDS = (
        "schema", "scenario", "kind", "estimator", "target", "flavor",
        "mean", "bias", "pct_bias", "ese", "ase", "cp", "re_vs_sl",
        "re_convention", "n_reps",
    )

    def to_csv(self, path):
        with Path(path).open("w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=self._CSV_FIELDS)
            writer.writeheader()
            for cell in self.cells:
                row = {"schema": "v1", "scenario": self.scenario}
                row.update({k: cell.get(k) for k in self._CSV_FIELDS[2:]})
                writer.writerow(row)

    def cell(self, **criteria):
        matches = [
            c for c in self.cells if all(c.get(k) == v for k, v in criteria.items())
        ]
        if len(matches) != 1:
            raise KeyError(f"{len(matches)} cells match {criteria}")
        return matches[0]


def _accuracy_cells(scenario, records, oracle, metrics):
    cells = []
    for metric in metrics:
        kind = metric.kind if isinstance(metric, AccuracyMetric) else metric
        truth = oracle["d_bar"][kind]
        variants = sorted(
            {v for r in records for v in r["accuracy"].get(kind, {})}
        )
        flavors = ("apparent", "cv", "ensemble")
        ese_sl = {}
        for flavor in flavors:
            if "SL" in variants:
                values = [
                    r["accuracy"][kind]["SL"][flavor]
                    for r in records
                    if flavor in r["accuracy"][kind].get("SL", {})
                ]
                if values:
                    ese_sl[flavor] = float(np.std(values, ddof=1))
        for variant in variants:
            for flavor in flavors:
                values = np.array(
                    [
                        r["accuracy"][kind][variant][flavor]
                        for r in records
                        if flavor in r["accuracy"][kind].get(variant, {})
                    ]
                )
                if values.size == 0:
                    continue
                ese = float(values.std(ddof=1))
                cell = {
                    "kind": "accuracy",
                    "estimator": variant,
                    "target": kind,
                    "flavor": flavor,
                    "mean": float(values.mean()),
                    "bias": float(values.mean() - truth),
                    "pct_bias": float(100.0 * (values.mean() - truth) / truth),
                    "ese": ese,
                    "ase": None,
                    "cp": None,
                    "re_vs_sl": (
                        (ese_sl[flavor] / ese) ** 2
                        if flavor in ese_sl and ese > 0
                        else None
                    ),
                    "re_convention": "variance",
                    "n_reps": int(values.size),
                }
                if variant == "SSL" and flavor == "ensemble":
                    ses = [
                        r["se"].get(kind)
                        for r in records
                        if r.get("se", {}).get(kind) is not None
                    ]
                    if ses:
                        cell["ase"] = float(np.mean(ses))
                        covered = [
                            r["ci"][kind][0] <= truth <= r["ci"][kind][1]
                            for r in records
                            if r.get("ci", {}).get(kind) is not None
                        ]
                        cell["cp"] = float(np.mean(covered))
                cells.append(cell)
    return cells


def _theta_cells(scenario, records, oracle):
    cells = []
    theta_bar = np.asarray(oracle["theta"])
    variants = sorted({v for r in records for v in r["theta"]})
    mse_sl = None
    if "SL" in variants:
        stack = np.array([r["theta"]["SL"] for r in records])
        mse_sl = ((stack - theta_bar) ** 2).mean(axis=0)
    for variant in variants:
        subset = [r for r in records if variant in r["theta"]]
        stack = np.array([r["theta"][variant] for r in subset])
        bias = stack.mean(axis=0) - theta_bar
        ese = stack.std(axis=0, ddof=1)
        mse = ((stack - theta_bar) ** 2).mean(axis=0)
        ases = points_with_ase = None
        if variant == "SSL":
            with_ase = [r for r in subset if "theta_ase_ssl" in r]
            if with_ase:
                ases = np.array([r["theta_ase_ssl"] for r in with_ase])
                points_with_ase = np.array([r["theta"][variant] for r in with_ase])
        for j in range(theta_bar.size):
            cell = {
                "kind": "theta",
                "estimator": variant,
                "target": f"theta_{j}",
                "flavor": "point",
                "mean": float(stack[:, j].mean()),
                "bias": float(bias[j]),
                "pct_bias": None,
                "ese": float(ese[j]),
                "ase": None,
                "cp": None,
                "re_vs_sl": (
                    float(mse_sl[j] / mse[j])
                    if mse_sl is not None and mse[j] > 0
                    else None
                ),
                "re_convention": "mse",
                "n_reps": int(stack.shape[0]),
            }
            if ases is not None:
                cell["ase"] = float(ases[:, j].mean())
                z = 1.959963984540054
                low = points_with_ase[:, j] - z * ases[:, j]
                high = points_with_ase[:, j] + z * ases[:, j]
                cell["cp"] = float(
                    np.mean((low <= theta_bar[j]) & (theta_bar[j] <= high))
                )
            cells.append(cell)
    return cells


def summarize_study(spec, records, oracle, metrics=(BRIER, OMR)):
    """Aggregate replicate records against the oracle into a report.

    Percent bias is measured against the oracle truth; RE uses variance
    ratios for accuracy cells and MSE ratios for coefficient cells, with
    the convention recorded in each cell.
    """
    good = [r for r in records if "failed" not in r]
    dropped = len(records) - len(good)
    cells = _accuracy_cells(spec.scenario, good, oracle, metrics)
    if good and good[0].get("theta"):
        cells.extend(_theta_cells(spec.scenario, good, oracle))
    diagnostics = {
        "cv_dropped": {
            variant: int(sum(r.get("cv_dropped", {}).get(variant, 0) for r in good))
            for variant in ("SL", "SSL", "DR")
        },
        "perturb_failures": int(
            sum(
                max(v, 0)
                for r in good
                for v in r.get("perturb_failures", {}).values()
            )
        ),
    }
    return MonteCarloReport(
        spec.scenario, cells, len(records), dropped, diagnostics
    )


# ---------------------------------------------------------------------------
# Design comparison (uniform vs stratified labeling)


def _design_comparison_replicate(args):
    index, seed = args
    context = _WORKER_CONTEXT
    scenario = context["scenario"]
    budget = context["budget"]
    study = context["study"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankWarning)
        try:
            seeds = seed.spawn(3)
            population = generate_population(scenario, 2, 20000, seeds[0])
            spec_strat = ScenarioSpec(
                scenario, 2, n_per_stratum=budget // 2, n_unlabeled=20000
            )
            spec_unif = ScenarioSpec(
                scenario, 2, n_per_stratum=0, sampling="uniform", n_budget=budget
            )
            dataset_strat = sample_labels(population, spec_strat, seeds[1])
            dataset_unif = sample_labels(population, spec_unif, seeds[2])
            basis_spec = scenario_basis_spec(scenario)
            record = {"replicate": index}
            arms = {
                "stratified": (dataset_strat, build_design(dataset_strat)),
                "naive": (dataset_strat, build_pooled_design(dataset_strat)),
                "uniform": (dataset_unif, build_pooled_design(dataset_unif)),
            }
            for arm, (dataset, design) in arms.items():
                basis = expand(basis_spec, dataset)
                arm_study = replace(
                    study, estimators=("SL",) if arm == "naive" else ("SL", "SSL")
                )
                record[arm] = evaluate_replicate(dataset, design, basis, arm_study)
            return index, record
        except (StrataEvalError, np.linalg.LinAlgError) as exc:
            return index, {"replicate": index, "failed": repr(exc)}


def run_design_comparison(
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
    """Uniform vs stratified labeling comparison on shared populations.

    Returns bias and RE grids: SSL vs SL within each sampling scheme,
    stratified vs uniform for each estimator, and the bias of the naive
    unweighted supervised estimator under stratified sampling.
    """
    if scenario not in ("s5-I", "s5-II"):
        raise ValueError("design comparison supports scenarios 's5-I' and 's5-II'")
    metrics = (BRIER, OMR) if metrics is None else metrics
    cv_config = CvConfig() if cv_config is None else cv_config
    study = StudyConfig(
        replications=replications,
        seed=seed,
        estimators=("SL", "SSL"),
        metrics=tuple(metrics),
        cv=cv_config,
        perturb=None,
        theta_stats=False,
        ridge=None if solver_config is None else solver_config.ridge,
        n_jobs=n_jobs,
    )
    _init_worker_comparison = {
        "scenario": scenario, "budget": budget, "study": study
    }
    seeds = np.random.SeedSequence(seed).spawn(replications)
    pending = [(i, seeds[i]) for i in range(replications)]
    jobs = study.resolved_jobs()
    results = {}

    def initializer():
        _WORKER_CONTEXT.clear()
        _WORKER_CONTEXT.update(_init_worker_comparison)

    if jobs == 1 or replications <= 1:
        initializer()
        iterator = map(_design_comparison_replicate, pending)
        for index, record in iterator:
            results[index] = record
            if progress is not None:
                progress(len(results), replications)
    else:
        with multiprocessing.get_context("fork").Pool(
            jobs, initializer=initializer
        ) as pool:
            for index, record in pool.imap_unordered(
                _design_comparison_replicate, pending
            ):
                results[index] = record
                if progress is not None:
                    progress(len(results), replications)
    records = [results[i] for i in sorted(results)]
    oracle = oracle_truth(scenario, n_strata=2)
    return summarize_design_comparison(scenario, records, oracle, metrics)


def summarize_design_comparison(scenario, records, oracle, metrics):
    """Bias and MSE-ratio grids for the design comparison records."""
    good = [r for r in records if "failed" not in r]
    theta_bar = np.asarray(oracle["theta"])
    summary = {
        "scenario": scenario,
        "replicates": len(records),
        "dropped": len(records) - len(good),
        "bias": {},
        "mse": {},
        "re": {},
    }
    arms = {
        "stratified": ("SL", "SSL"),
        "naive": ("SL",),
        "uniform": ("SL", "SSL"),
    }
    mse = {}
    for arm, variants in arms.items():
        for variant in variants:
            label = f"{arm}:{variant}"
            stack = np.array([r[arm]["theta"][variant] for r in good])
            mse[label, "theta"] = ((stack - theta_bar) ** 2).mean(axis=0)
            summary["bias"][label] = {
                "theta": (stack.mean(axis=0) - theta_bar).tolist()
            }
            for metric in metrics:
                kind = metric.kind
                truth = oracle["d_bar"][kind]
                values = np.array(
                    [r[arm]["accuracy"][kind][variant]["ensemble"] for r in good]
                )
                mse[label, kind] = ((values - truth) ** 2).mean()
                summary["bias"][label][kind] = float(values.mean() - truth)
    summary["mse"] = {
        f"{label[0]}|{label[1]}": np.asarray(value).tolist()
        for label, value in mse.items()
    }

    def re(numerator, denominator):
        num = np.asarray(mse[numerator])
        den = np.asarray(mse[denominator])
        return (num / den).tolist() if num.ndim else float(num / den)

    for target in ["theta"] + [m.kind for m in metrics]:
        summary["re"][f"ssl_vs_sl_uniform|{target}"] = re(
            ("uniform:SL", target), ("uniform:SSL", target)
        )
        summary["re"][f"ssl_vs_sl_stratified|{target}"] = re(
            ("stratified:SL", target), ("stratified:SSL", target)
        )
        summary["re"][f"stratified_vs_uniform_sl|{target}"] = re(
            ("uniform:SL", target), ("stratified:SL", target)
        )
        summary["re"][f"stratified_vs_uniform_ssl|{target}"] = re(
            ("uniform:SSL", target), ("stratified:SSL", target)
        )
    return summary
