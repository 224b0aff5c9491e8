"""Datasets, stratified sampling designs, and inverse-probability weights.

A dataset holds features for all N units, outcomes for the n labeled units,
integer stratum labels in 1..S, and the labeling indicators. The sampling
design derives per-stratum sampling fractions and per-unit IPW weights
w_i = V_i / (n_s / N_s), which sum to N exactly.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyStratumError,
    ParseError,
    SchemaError,
    StratumRelabelError,
)

DEFAULT_MISSING_MARKERS = ("", "NA")


def relabel_strata(codes):
    """Map arbitrary categorical codes to contiguous labels 1..S.

    Codes are assigned deterministically by sorted order of the distinct
    values. Returns (labels, mapping) where mapping[original] = new label.
    """
    codes = np.asarray(codes)
    distinct = sorted(set(codes.tolist()))
    mapping = {value: i + 1 for i, value in enumerate(distinct)}
    labels = np.array([mapping[value] for value in codes.tolist()], dtype=np.int64)
    return labels, mapping


@dataclass(frozen=True)
class SemiSupervisedDataset:
    """Features for N units plus outcomes observed only on labeled units.

    outcomes are aligned to the labeled rows in row order: outcomes[j] is the
    outcome of the j-th unit (by row index) with labeled_mask True.
    """

    features: np.ndarray
    strata: np.ndarray
    labeled_mask: np.ndarray
    outcomes: np.ndarray
    feature_names: tuple = None

    def __post_init__(self):
        features = np.ascontiguousarray(np.asarray(self.features, dtype=float))
        if features.ndim != 2:
            raise SchemaError("features must be a 2-d array (N rows, p columns)")
        strata = np.asarray(self.strata, dtype=np.int64)
        labeled = np.asarray(self.labeled_mask, dtype=bool)
        outcomes = np.asarray(self.outcomes, dtype=float)
        n_rows = features.shape[0]
        if strata.shape != (n_rows,) or labeled.shape != (n_rows,):
            raise SchemaError("strata and labeled_mask must have one entry per row")
        if outcomes.shape != (int(labeled.sum()),):
            raise SchemaError(
                f"got {outcomes.size} outcomes for {int(labeled.sum())} labeled rows"
            )
        if outcomes.size and not np.all(np.isin(outcomes, (0.0, 1.0))):
            raise SchemaError("observed outcomes must be binary 0/1")
        if not np.all(np.isfinite(features)):
            raise SchemaError("features must be finite")
        n_strata = strata.max(initial=0)
        present = np.unique(strata)
        if strata.size == 0 or present[0] < 1 or not np.array_equal(
            present, np.arange(1, n_strata + 1)
        ):
            raise StratumRelabelError(
                "stratum labels must be contiguous 1..S; use relabel_strata()"
            )
        labeled_per_stratum = np.bincount(strata[labeled], minlength=n_strata + 1)[1:]
        if np.any(labeled_per_stratum == 0):
            empty = int(np.flatnonzero(labeled_per_stratum == 0)[0] + 1)
            raise EmptyStratumError(f"stratum {empty} has no labeled units")
        names = self.feature_names
        if names is not None:
            names = tuple(names)
            if len(names) != features.shape[1]:
                raise SchemaError("feature_names length must match feature columns")
        for array in (features, strata, labeled, outcomes):
            array.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "strata", strata)
        object.__setattr__(self, "labeled_mask", labeled)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "feature_names", names)

    @property
    def n_total(self):
        return self.features.shape[0]

    @property
    def n_labeled(self):
        return int(self.labeled_mask.sum())

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_strata(self):
        return int(self.strata.max())

    def design_matrix(self):
        """Features with a leading intercept column, over all N rows."""
        return np.column_stack(
            [np.ones(self.n_total), self.features]
        )

    def labeled_indices(self):
        return np.flatnonzero(self.labeled_mask)


@dataclass(frozen=True)
class SamplingDesign:
    """Per-stratum sampling fractions and per-unit IPW weights.

    `weight_strata` records the stratum labels the weights were computed
    from (all ones for a pooled design), so fold-level reweighting can
    reproduce the same rule on labeled subsets.
    """

    n_labeled_per_stratum: np.ndarray
    n_total_per_stratum: np.ndarray
    sampling_fractions: np.ndarray
    stratum_proportions: np.ndarray
    labeled_proportions: np.ndarray
    weights: np.ndarray
    weight_strata: np.ndarray

    @property
    def n_total(self):
        return int(self.n_total_per_stratum.sum())

    @property
    def n_labeled(self):
        return int(self.n_labeled_per_stratum.sum())

    @property
    def n_strata(self):
        return self.n_labeled_per_stratum.size

    def labeled_weights(self, labeled_mask):
        return self.weights[labeled_mask]


def _design_from_labels(strata, labeled_mask):
    strata = np.asarray(strata, dtype=np.int64)
    labeled = np.asarray(labeled_mask, dtype=bool)
    n_strata = int(strata.max())
    totals = np.bincount(strata, minlength=n_strata + 1)[1:].astype(float)
    counts = np.bincount(strata[labeled], minlength=n_strata + 1)[1:].astype(float)
    if np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0] + 1)
        raise EmptyStratumError(f"stratum {empty} has no labeled units")
    fractions = counts / totals
    n_total = float(totals.sum())
    n_labeled = float(counts.sum())
    weights = np.zeros(strata.size)
    weights[labeled] = 1.0 / fractions[strata[labeled] - 1]
    total = weights.sum()
    if abs(total - n_total) > 1e-9 * max(n_total, 1.0):
        raise AssertionError(
            f"IPW weights sum to {total}, expected {n_total}"
        )
    weights.flags.writeable = False
    return SamplingDesign(
        n_labeled_per_stratum=counts.astype(np.int64),
        n_total_per_stratum=totals.astype(np.int64),
        sampling_fractions=fractions,
        stratum_proportions=totals / n_total,
        labeled_proportions=counts / n_labeled,
        weights=weights,
        weight_strata=strata,
    )


def build_design(dataset):
    """Derive the stratified sampling design for a validated dataset.

    The weight of a labeled unit in stratum s is N_s / n_s and the weights
    sum to N exactly; unlabeled units get weight zero.
    """
    return _design_from_labels(dataset.strata, dataset.labeled_mask)


def build_pooled_design(dataset):
    """Design for uniform random labeling: one pooled stratum, w_i = N/n.

    Used for design-comparison studies; the dataset's stratum labels stay
    available for basis construction.
    """
    pooled = np.ones(dataset.n_total, dtype=np.int64)
    return _design_from_labels(pooled, dataset.labeled_mask)


@dataclass(frozen=True)
class DatasetSchema:
    """Column roles for CSV ingestion.

    `labeled` is optional; when present it must agree with outcome
    missingness (a row marked unlabeled with an observed outcome is
    rejected rather than silently relabeled).
    """

    features: tuple
    stratum: str
    outcome: str
    labeled: str = None
    missing_markers: tuple = DEFAULT_MISSING_MARKERS

    @classmethod
    def from_manifest(cls, path):
        path = Path(path)
        spec = json.loads(path.read_text())
        for key in ("features", "stratum", "outcome"):
            if key not in spec:
                raise SchemaError(f"manifest {path} missing required key {key!r}")
        return cls(
            features=tuple(spec["features"]),
            stratum=spec["stratum"],
            outcome=spec["outcome"],
            labeled=spec.get("labeled"),
            missing_markers=tuple(spec.get("missing_markers", DEFAULT_MISSING_MARKERS)),
        )

    def to_manifest(self, path, csv_path=None):
        payload = {
            "features": list(self.features),
            "stratum": self.stratum,
            "outcome": self.outcome,
            "missing_markers": list(self.missing_markers),
        }
        if self.labeled is not None:
            payload["labeled"] = self.labeled
        if csv_path is not None:
            payload["csv"] = str(csv_path)
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_csv(path, schema):
    """Read a UTF-8 CSV with a header row into a SemiSupervisedDataset.

    Rows whose outcome cell is a missing marker are unlabeled. Column
    order in `schema.features` is preserved into feature indices.
    """
    path = Path(path)
    missing = set(schema.missing_markers)
    features, strata, labeled, outcomes = [], [], [], []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise SchemaError(f"{path} has no header row")
        needed = set(schema.features) | {schema.stratum, schema.outcome}
        if schema.labeled is not None:
            needed.add(schema.labeled)
        absent = needed - set(reader.fieldnames)
        if absent:
            raise SchemaError(f"{path} missing columns {sorted(absent)}")
        for row_number, row in enumerate(reader, start=2):
            try:
                features.append([float(row[name]) for name in schema.features])
                strata.append(int(float(row[schema.stratum])))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"row {row_number}: {exc}", row=row_number) from exc
            raw_outcome = (row[schema.outcome] or "").strip()
            has_outcome = raw_outcome not in missing
            if schema.labeled is not None:
                flag = (row[schema.labeled] or "").strip()
                if flag not in {"0", "1"}:
                    raise ParseError(
                        f"row {row_number}: labeled flag must be 0/1, got {flag!r}",
                        row=row_number,
                    )
                is_labeled = flag == "1"
                if not is_labeled and has_outcome:
                    raise SchemaError(
                        f"row {row_number}: outcome present on a row marked unlabeled"
                    )
                if is_labeled and not has_outcome:
                    raise SchemaError(
                        f"row {row_number}: outcome missing on a row marked labeled"
                    )
            else:
                is_labeled = has_outcome
            labeled.append(is_labeled)
            if is_labeled:
                try:
                    value = float(raw_outcome)
                except ValueError as exc:
                    raise ParseError(f"row {row_number}: {exc}", row=row_number) from exc
                if value not in (0.0, 1.0):
                    raise SchemaError(
                        f"row {row_number}: outcome must be 0/1, got {value}"
                    )
                outcomes.append(value)
    return SemiSupervisedDataset(
        features=np.asarray(features, dtype=float),
        strata=np.asarray(strata, dtype=np.int64),
        labeled_mask=np.asarray(labeled, dtype=bool),
        outcomes=np.asarray(outcomes, dtype=float),
        feature_names=schema.features,
    )


def write_csv(path, dataset, schema):
    """Write a dataset back out in the layout described by `schema`."""
    path = Path(path)
    if len(schema.features) != dataset.n_features:
        raise SchemaError(
            f"schema names {len(schema.features)} features for a dataset "
            f"with {dataset.n_features}"
        )
    marker = schema.missing_markers[0] if schema.missing_markers else ""
    header = list(schema.features) + [schema.stratum, schema.outcome]
    if schema.labeled is not None:
        header.append(schema.labeled)
    outcome_iter = iter(dataset.outcomes)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for i in range(dataset.n_total):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(str(int(dataset.strata[i])))
            if dataset.labeled_mask[i]:
                row.append(str(int(next(outcome_iter))))
                if schema.labeled is not None:
                    row.append("1")
            else:
                row.append(marker)
                if schema.labeled is not None:
                    row.append("0")
            writer.writerow(row)
