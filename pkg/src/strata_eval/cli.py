"""Command-line entry point for reproducible estimation and simulation runs.

Complex settings live in a JSON run config; scalar flags override config
fields. Every run writes its artifacts plus a run-manifest.json capturing
the config hash, library versions, and seed. Exit codes: 0 success, 2
validation error, 3 numerical failure.
"""

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import AllocationInput, compare_designs, neyman, pilot_allocation
from .basis import BasisSpec, expand
from .cross_validation import CvConfig
from .data_model import DatasetSchema, build_design, load_csv
from .ee_solver import SolverConfig, default_ridge, real_data_ridge
from .errors import StrataEvalError
from .estimators import AccuracyMetric
from .inference import PerturbationConfig
from .links import get_link
from .simulation import (
    PROFILES,
    MonteCarloReport,
    ScenarioSpec,
    StudyConfig,
    evaluate_replicate,
    oracle_truth,
    run_study,
    scenario_basis_spec,
    summarize_study,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class ValidationFailure(Exception):
    pass


def _load_config(args):
    config = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ValidationFailure(f"config file {path} does not exist")
        config = json.loads(path.read_text())
    for key in ("seed", "output_dir", "workers", "dataset", "scenario", "profile"):
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _require(config, key, command):
    if key not in config or config[key] is None:
        raise ValidationFailure(f"'{command}' requires the {key!r} field")
    return config[key]


def _output_dir(config):
    directory = Path(config.get("output_dir", "strata-eval-output"))
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _write_manifest(directory, command, config):
    canonical = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": config.get("seed"),
        "versions": {
            "strata_eval": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (directory / "run-manifest.json").write_text(
        json.dumps(manifest, indent=2, default=str) + "\n"
    )


def _load_dataset(config, command):
    manifest_path = Path(_require(config, "dataset", command))
    if not manifest_path.exists():
        raise ValidationFailure(f"dataset manifest {manifest_path} does not exist")
    manifest = json.loads(manifest_path.read_text())
    schema = DatasetSchema.from_manifest(manifest_path)
    csv_path = manifest.get("csv")
    if csv_path is None:
        raise ValidationFailure(f"manifest {manifest_path} lacks a 'csv' field")
    csv_path = (manifest_path.parent / csv_path).resolve()
    if not csv_path.exists():
        raise ValidationFailure(f"dataset file {csv_path} does not exist")
    return load_csv(csv_path, schema)


def _parse_metrics(config):
    raw = config.get("metrics", [{"kind": "brier"}, {"kind": "omr", "threshold": 0.5}])
    metrics = []
    for entry in raw:
        try:
            metrics.append(AccuracyMetric(**entry))
        except StrataEvalError as exc:
            raise ValidationFailure(f"bad metric {entry}: {exc}") from exc
    return tuple(metrics)


def _parse_cv(config):
    return CvConfig(**config.get("cv", {}))


def _parse_perturbation(config, command):
    payload = config.get("perturbation", {})
    if command in ("perturb", "evaluate") and "seed" not in payload:
        payload = dict(payload, seed=int(config.get("seed", 0)))
    return PerturbationConfig(**payload)


def _solver_for(config, dataset):
    solver = config.get("solver", {})
    ridge = solver.get("ridge")
    if ridge is None:
        mode = solver.get("mode", "simulation")
        if mode == "real":
            ridge = real_data_ridge(dataset.n_labeled)
        else:
            ridge = default_ridge(dataset.n_features, dataset.n_labeled)
    return SolverConfig(ridge=float(ridge))


def _basis_for(config, dataset):
    if "basis" in config:
        spec = BasisSpec(tuple(config["basis"]["components"]))
    else:
        spec = BasisSpec(
            (
                {"kind": "intercept"},
                {"kind": "raw"},
                {"kind": "natural_spline", "knots": 3},
                {"kind": "stratum_indicators"},
            )
        )
    return expand(spec, dataset)


def _study_from_config(config, command, with_perturb):
    return StudyConfig(
        replications=1,
        seed=int(config.get("seed", 0)),
        estimators=tuple(config.get("estimators", ("SL", "SSL", "DR"))),
        metrics=_parse_metrics(config),
        cv=_parse_cv(config),
        perturb=_parse_perturbation(config, command) if with_perturb else None,
        theta_stats=True,
        ridge=config.get("solver", {}).get("ridge"),
        bandwidth_constant=float(config.get("bandwidth_constant", 1.0)),
        keep_cv_diagnostics=True,
        keep_perturb_values=bool(config.get("save_replicates", False)),
    )


def _cmd_fit(args):
    config = _load_config(args)
    dataset = _load_dataset(config, "fit")
    design = build_design(dataset)
    basis = _basis_for(config, dataset)
    link = get_link(config.get("link", "expit"))
    solver = _solver_for(config, dataset)
    from .estimators import fit_imputation, fit_theta_dr, fit_theta_sl, fit_theta_ssl
    from .inference import theta_ssl_covariance

    theta_sl = fit_theta_sl(dataset, design, link, solver)
    imputation = fit_imputation(dataset, design, basis, link, solver)
    bundle = fit_theta_ssl(
        dataset, design, basis, link, solver, _parse_cv(config),
        theta_sl_fit=theta_sl, imputation=imputation,
    )
    theta_dr = fit_theta_dr(dataset, design, basis, link, solver)
    covariance = theta_ssl_covariance(bundle)
    directory = _output_dir(config)
    payload = {
        "theta_sl": theta_sl.coefficients.tolist(),
        "theta_ssl": bundle.theta_ssl.tolist(),
        "theta_ssl_check": bundle.theta_check.tolist(),
        "theta_dr": theta_dr.coefficients.tolist(),
        "theta_ssl_ase": covariance["ase"].tolist(),
        "combination_weights": bundle.w_diag.tolist(),
        "imputation_gamma": bundle.gamma.tolist(),
        "ridge": solver.ridge,
        "influence_summary": {
            "sl_sd": theta_sl.influence.std(axis=0, ddof=1).tolist(),
            "ssl_check_sd": bundle.influence_check.std(axis=0, ddof=1).tolist(),
        },
    }
    (directory / "fits.json").write_text(json.dumps(payload, indent=2) + "\n")
    _write_manifest(directory, "fit", config)
    print(f"wrote {directory / 'fits.json'}")
    return EXIT_OK


def _cmd_evaluate(args, with_perturb=True, command="evaluate"):
    config = _load_config(args)
    dataset = _load_dataset(config, command)
    design = build_design(dataset)
    basis = _basis_for(config, dataset)
    link = get_link(config.get("link", "expit"))
    solver = _solver_for(config, dataset)
    study = _study_from_config(config, command, with_perturb)
    study = StudyConfig(**{**asdict(study), "ridge": solver.ridge,
                           "metrics": study.metrics, "cv": study.cv,
                           "perturb": study.perturb})
    record = evaluate_replicate(dataset, design, basis, study, link)
    directory = _output_dir(config)
    report_path = directory / f"{command}-report.json"
    report_path.write_text(json.dumps(record, indent=2) + "\n")
    rows = []
    for metric, variants in record["accuracy"].items():
        for variant, flavors in variants.items():
            for flavor, value in flavors.items():
                rows.append(
                    {
                        "schema": "v1",
                        "metric": metric,
                        "estimator": variant,
                        "flavor": flavor,
                        "value": value,
                        "se": record["se"].get(metric)
                        if variant == "SSL" and flavor == "ensemble"
                        else None,
                    }
                )
    import csv as _csv

    with (directory / f"{command}-report.csv").open("w", newline="") as handle:
        writer = _csv.DictWriter(
            handle, fieldnames=("schema", "metric", "estimator", "flavor", "value", "se")
        )
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(directory, command, config)
    print(f"wrote {report_path}")
    return EXIT_OK


def _cmd_perturb(args):
    return _cmd_evaluate(args, with_perturb=True, command="perturb")


def _cmd_allocate(args):
    config = _load_config(args)
    directory = _output_dir(config)
    budget = config.get("budget", getattr(args, "budget", None))
    if budget is None:
        raise ValidationFailure("'allocate' requires a budget")
    budget = int(budget)
    if config.get("dataset"):
        dataset = _load_dataset(config, "allocate")
        design = build_design(dataset)
        metrics = _parse_metrics(config)
        result = pilot_allocation(dataset, design, metrics[0], budget)
        allocation = result["allocation"]
        shares = result["shares"]
        payload = {
            "budget": budget,
            "allocation": allocation.tolist(),
            "shares": shares.tolist(),
            "stratum_sds": result["sds"].tolist(),
            "stratum_proportions": result["input"].proportions.tolist(),
            "source": "pilot",
        }
    else:
        rho = config.get("stratum_proportions")
        sigma = config.get("stratum_sds")
        if rho is None or sigma is None:
            raise ValidationFailure(
                "'allocate' needs either a pilot dataset or both "
                "stratum_proportions and stratum_sds"
            )
        allocation_input = AllocationInput(
            np.asarray(rho, dtype=float), np.asarray(sigma, dtype=float), budget
        )
        allocation = neyman(allocation_input)
        shares = allocation_input.continuous_allocation() / budget
        payload = {
            "budget": budget,
            "allocation": allocation.tolist(),
            "shares": shares.tolist(),
            "stratum_sds": list(map(float, sigma)),
            "stratum_proportions": list(map(float, rho)),
            "source": "direct",
        }
    (directory / "allocation.json").write_text(json.dumps(payload, indent=2) + "\n")
    _write_manifest(directory, "allocate", config)
    print("stratum  share  n_s")
    for s, (share, count) in enumerate(zip(payload["shares"], payload["allocation"]), 1):
        print(f"{s:>7}  {share:5.3f}  {count}")
    return EXIT_OK


def _scenario_from_config(config, command):
    raw = _require(config, "scenario", command)
    if isinstance(raw, str):
        spec = ScenarioSpec(scenario=raw)
    else:
        spec = ScenarioSpec(**raw)
    return spec


def _cmd_simulate(args):
    config = _load_config(args)
    if "seed" not in config:
        raise ValidationFailure("'simulate' requires a seed")
    spec = _scenario_from_config(config, "simulate")
    if getattr(args, "n_per_stratum", None):
        spec = ScenarioSpec(**{**asdict(spec), "n_per_stratum": args.n_per_stratum})
    if getattr(args, "n_strata", None):
        spec = ScenarioSpec(**{**asdict(spec), "n_strata": args.n_strata})
    profile = PROFILES[config.get("profile", "desk")]
    replications = int(config.get("replications", profile["replications"]))
    if getattr(args, "replications", None):
        replications = args.replications
    cv_payload = dict(config.get("cv", {}))
    cv_payload.setdefault("replications", profile["cv_replications"])
    perturb_payload = dict(config.get("perturbation", {}))
    perturb_payload.setdefault("replicates", profile["perturb_replicates"])
    perturb_payload.setdefault("seed", int(config["seed"]) + 10_000)
    directory = _output_dir(config)
    study = StudyConfig(
        replications=replications,
        seed=int(config["seed"]),
        estimators=tuple(config.get("estimators", ("SL", "SSL", "DR"))),
        metrics=_parse_metrics(config),
        cv=CvConfig(**cv_payload),
        perturb=PerturbationConfig(**perturb_payload)
        if config.get("with_perturbation", True)
        else None,
        theta_stats=bool(config.get("theta_stats", True)),
        ridge=config.get("solver", {}).get("ridge"),
        checkpoint=str(directory / "checkpoint.jsonl"),
        n_jobs=config.get("workers"),
    )

    def progress(done, total):
        print(f"\rreplicates {done}/{total}", end="", file=sys.stderr, flush=True)

    records = run_study(spec, study, progress=progress)
    print(file=sys.stderr)
    oracle = oracle_truth(
        spec.scenario, spec.n_strata,
        cache_dir=config.get("oracle_cache"),
    )
    report = summarize_study(spec, records, oracle, study.metrics)
    (directory / "report.json").write_text(report.to_json() + "\n")
    report.to_csv(directory / "report.csv")
    _write_manifest(directory, "simulate", config)
    print(f"wrote {directory / 'report.csv'} ({len(report.cells)} cells)")
    return EXIT_OK


def _cmd_compare_designs(args):
    config = _load_config(args)
    if "seed" not in config:
        raise ValidationFailure("'compare-designs' requires a seed")
    scenario = config.get("scenario", "s5-I")
    if isinstance(scenario, dict):
        scenario = scenario.get("scenario", "s5-I")
    budget = int(config.get("budget", 400))
    profile = PROFILES[config.get("profile", "desk")]
    replications = int(config.get("replications", profile["replications"]))
    if getattr(args, "replications", None):
        replications = args.replications
    directory = _output_dir(config)
    summary = compare_designs(
        scenario,
        budget,
        replications,
        metrics=_parse_metrics(config),
        cv_config=_parse_cv(config),
        seed=int(config["seed"]),
        n_jobs=config.get("workers"),
    )
    (directory / "design-comparison.json").write_text(
        json.dumps(summary, indent=2) + "\n"
    )
    _write_manifest(directory, "compare-designs", config)
    print(f"wrote {directory / 'design-comparison.json'}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="strata-eval",
        description=(
            "Semi-supervised estimation and evaluation of binary prediction "
            "rules under stratified labeling"
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config; flags override scalars")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)

    p_fit = sub.add_parser("fit", help="fit working-model coefficients")
    common(p_fit)
    p_fit.add_argument("--dataset", help="dataset manifest JSON")
    p_fit.set_defaults(func=_cmd_fit)

    p_eval = sub.add_parser("evaluate", help="accuracy estimates with SE/CI")
    common(p_eval)
    p_eval.add_argument("--dataset")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_pert = sub.add_parser("perturb", help="perturbation SE/CI for accuracy")
    common(p_pert)
    p_pert.add_argument("--dataset")
    p_pert.set_defaults(func=_cmd_perturb)

    p_alloc = sub.add_parser("allocate", help="Neyman allocation of a budget")
    common(p_alloc)
    p_alloc.add_argument("--dataset", help="pilot dataset manifest")
    p_alloc.add_argument("--budget", type=int)
    p_alloc.set_defaults(func=_cmd_allocate)

    p_sim = sub.add_parser("simulate", help="Monte Carlo scenario study")
    common(p_sim)
    p_sim.add_argument("--scenario")
    p_sim.add_argument("--profile", choices=sorted(PROFILES))
    p_sim.add_argument("--replications", type=int)
    p_sim.add_argument("--n-per-stratum", dest="n_per_stratum", type=int)
    p_sim.add_argument("--n-strata", dest="n_strata", type=int)
    p_sim.set_defaults(func=_cmd_simulate)

    p_cmp = sub.add_parser("compare-designs", help="stratified vs uniform labeling")
    common(p_cmp)
    p_cmp.add_argument("--scenario")
    p_cmp.add_argument("--budget", type=int)
    p_cmp.add_argument("--profile", choices=sorted(PROFILES))
    p_cmp.add_argument("--replications", type=int)
    p_cmp.set_defaults(func=_cmd_compare_designs)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationFailure, StrataEvalError) as exc:
        from .errors import (
            NonConvergenceError,
            SingularJacobianError,
            TooManyFailuresError,
        )

        numerical = (NonConvergenceError, SingularJacobianError, TooManyFailuresError)
        if isinstance(exc, numerical):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
