"""Imputation basis construction: splines, interactions, stratum dummies, PCs.

Every expanded basis contains an intercept and all raw feature columns, so
the working-model features are always inside the span. Natural cubic
splines use a truncated-power parameterization with linear tails beyond
the boundary knots; K interior knots contribute K+1 columns per feature
(the linear term plus K curvature terms), so the block alone spans the
natural-spline space without the constant. Any basis spanning the same
space is interchangeable up to the ridge term.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFeatureError, RankError, RankWarning, SchemaError

_VALID_KINDS = {
    "intercept",
    "raw",
    "natural_spline",
    "interactions",
    "stratum_indicators",
    "stratum_scaled",
    "principal_components",
}


@dataclass(frozen=True)
class BasisSpec:
    """Ordered list of column generators, serializable as plain JSON.

    Components are dicts with a 'kind' key:
      {"kind": "intercept"}
      {"kind": "raw", "features": [0, 1, ...]}            # omit for all
      {"kind": "natural_spline", "features": [...], "knots": 3}
      {"kind": "interactions", "pairs": [[0, 1], [0, 2]]}
      {"kind": "stratum_indicators"}                      # I(S=1..S-1)
      {"kind": "stratum_scaled", "inner": <component>}
      {"kind": "principal_components", "source": "raw"|"transformed",
       "count": 5}
    """

    components: tuple

    def __post_init__(self):
        components = tuple(dict(c) for c in self.components)
        for comp in components:
            kind = comp.get("kind")
            if kind not in _VALID_KINDS:
                raise SchemaError(f"unknown basis component kind {kind!r}")
            if kind == "natural_spline" and comp.get("knots", 3) < 2:
                raise SchemaError("natural_spline needs at least 2 knots")
        object.__setattr__(self, "components", components)

    def to_json(self):
        return json.dumps({"components": list(self.components)})

    @classmethod
    def from_json(cls, text):
        return cls(tuple(json.loads(text)["components"]))

    @classmethod
    def identity(cls):
        return cls(({"kind": "intercept"}, {"kind": "raw"}))


@dataclass(frozen=True)
class BasisMatrix:
    """An evaluated basis: values over all N rows plus provenance."""

    values: np.ndarray
    labels: tuple
    spec: BasisSpec
    knots: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_columns(self):
        return self.values.shape[1]


def _feature_name(dataset, j):
    if dataset.feature_names is not None:
        return dataset.feature_names[j]
    return f"x{j + 1}"


def spline_knots(values, n_interior):
    """Interior knots at quantiles k/(K+1) of the pooled values, plus
    boundary knots at the pooled min and max."""
    values = np.asarray(values, dtype=float)
    low, high = values.min(), values.max()
    if high <= low:
        raise DegenerateFeatureError("spline target feature is constant")
    probs = np.arange(1, n_interior + 1) / (n_interior + 1.0)
    interior = np.quantile(values, probs)
    knots = np.concatenate([[low], interior, [high]])
    if np.any(np.diff(knots) <= 0):
        raise DegenerateFeatureError(
            "coincident spline knots; feature has too few distinct values"
        )
    return knots


def natural_spline_columns(values, knots):
    """Truncated-power natural cubic spline block: [x, c_1 .. c_K].

    c_k(x) = (d_k(x) - d_{M-1}(x)) / (xi_M - xi_1)^2 with
    d_k(x) = ((x - xi_k)_+^3 - (x - xi_M)_+^3) / (xi_M - xi_k); the
    quadratic and cubic growth cancels beyond the boundary knots, leaving
    linear tails. The scaling keeps column magnitudes comparable to x.
    """
    x = np.asarray(values, dtype=float)
    knots = np.asarray(knots, dtype=float)
    n_knots = knots.size
    span = (knots[-1] - knots[0]) ** 2
    tail = np.clip(x - knots[-1], 0.0, None) ** 3

    def d(k):
        return (np.clip(x - knots[k], 0.0, None) ** 3 - tail) / (knots[-1] - knots[k])

    d_last = d(n_knots - 2)
    columns = [x]
    for k in range(n_knots - 2):
        columns.append((d(k) - d_last) / span)
    return np.column_stack(columns)


def quadratic_interactions(features):
    """All squares and pairwise products of the columns of `features`."""
    features = np.asarray(features, dtype=float)
    p = features.shape[1]
    blocks = [features**2]
    for j in range(p):
        for k in range(j + 1, p):
            blocks.append((features[:, j] * features[:, k])[:, None])
    return np.column_stack(blocks)


def _standardized_pcs(matrix, count, label_prefix):
    matrix = np.asarray(matrix, dtype=float)
    centered = matrix - matrix.mean(axis=0)
    scale = centered.std(axis=0)
    scale[scale == 0] = 1.0
    standardized = centered / scale
    _, singular, vt = np.linalg.svd(standardized, full_matrices=False)
    tol = singular.max(initial=0.0) * max(standardized.shape) * np.finfo(float).eps
    rank = int(np.sum(singular > tol))
    if count > rank:
        raise RankError(f"requested {count} PCs but numerical rank is {rank}")
    loadings = vt[:count].T.copy()
    for k in range(count):
        pivot = np.argmax(np.abs(loadings[:, k]))
        if loadings[pivot, k] < 0:
            loadings[:, k] *= -1.0
    scores = standardized @ loadings
    explained = (singular[:count] ** 2) / standardized.shape[0]
    labels = [f"{label_prefix}{k + 1}" for k in range(count)]
    meta = {
        "loadings": loadings,
        "explained_variance": explained,
        "center": matrix.mean(axis=0),
        "scale": scale,
    }
    return scores, labels, meta


def _stratum_indicator_block(dataset):
    n_strata = dataset.n_strata
    columns, labels = [], []
    for s in range(1, n_strata):
        columns.append((dataset.strata == s).astype(float))
        labels.append(f"I(S={s})")
    return columns, labels


def _component_columns(comp, dataset):
    kind = comp["kind"]
    features = dataset.features
    if kind == "intercept":
        return [np.ones(dataset.n_total)], ["intercept"], {}, {}
    if kind == "raw":
        idx = comp.get("features")
        idx = range(features.shape[1]) if idx is None else idx
        cols = [features[:, j] for j in idx]
        labels = [_feature_name(dataset, j) for j in idx]
        return cols, labels, {}, {}
    if kind == "natural_spline":
        idx = comp.get("features")
        idx = range(features.shape[1]) if idx is None else idx
        n_interior = comp.get("knots", 3)
        cols, labels, knots = [], [], {}
        for j in idx:
            kj = spline_knots(features[:, j], n_interior)
            block = natural_spline_columns(features[:, j], kj)
            knots[int(j)] = kj
            name = _feature_name(dataset, j)
            cols.extend(block.T)
            labels.append(f"ns({name}).lin")
            labels.extend(f"ns({name}).c{k + 1}" for k in range(block.shape[1] - 1))
        return cols, labels, knots, {}
    if kind == "interactions":
        cols, labels = [], []
        for j, k in comp["pairs"]:
            cols.append(features[:, j] * features[:, k])
            labels.append(f"{_feature_name(dataset, j)}*{_feature_name(dataset, k)}")
        return cols, labels, {}, {}
    if kind == "stratum_indicators":
        cols, labels = _stratum_indicator_block(dataset)
        return cols, labels, {}, {}
    if kind == "stratum_scaled":
        inner_cols, inner_labels, knots, extras = _component_columns(
            comp["inner"], dataset
        )
        ind_cols, ind_labels = _stratum_indicator_block(dataset)
        cols, labels = [], []
        for ind, ind_label in zip(ind_cols, ind_labels):
            for col, label in zip(inner_cols, inner_labels):
                cols.append(ind * col)
                labels.append(f"{ind_label}:{label}")
        return cols, labels, knots, extras
    if kind == "principal_components":
        source = comp.get("source", "raw")
        matrix = features if source == "raw" else quadratic_interactions(features)
        prefix = "pc" if source == "raw" else "pct"
        scores, labels, meta = _standardized_pcs(matrix, comp["count"], prefix)
        return list(scores.T), labels, {}, {f"pcs_{source}": meta}
    raise SchemaError(f"unknown basis component kind {kind!r}")


def _check_contains_working_model(spec, dataset):
    has_intercept = any(c["kind"] == "intercept" for c in spec.components)
    covered = set()
    for comp in spec.components:
        if comp["kind"] == "raw":
            idx = comp.get("features")
            idx = range(dataset.n_features) if idx is None else idx
            covered.update(int(j) for j in idx)
    if not has_intercept or covered != set(range(dataset.n_features)):
        raise SchemaError(
            "basis must contain an intercept and every raw feature column"
        )


def expand(spec, dataset, design=None):
    """Evaluate a basis spec on the pooled (labeled + unlabeled) data.

    Deterministic given (spec, dataset): knots come from pooled quantiles
    and column order follows the component order. `design` is accepted for
    interface symmetry; weights play no role in basis construction.
    """
    del design
    _check_contains_working_model(spec, dataset)
    columns, labels, knots, extras = [], [], {}, {}
    for comp in spec.components:
        cols, labs, comp_knots, comp_extras = _component_columns(comp, dataset)
        columns.extend(cols)
        labels.extend(labs)
        knots.update(comp_knots)
        extras.update(comp_extras)
    values = np.column_stack(columns)
    if not np.all(np.isfinite(values)):
        raise SchemaError("basis produced non-finite entries")
    constant = values.std(axis=0) == 0
    constant[labels.index("intercept")] = False
    if np.any(constant):
        bad = [labels[j] for j in np.flatnonzero(constant)]
        raise DegenerateFeatureError(f"constant basis columns: {bad}")
    gram = values.T @ values
    rank = np.linalg.matrix_rank(gram, hermitian=True)
    if rank < values.shape[1]:
        warnings.warn(
            f"basis is numerically rank-deficient ({rank} < {values.shape[1]}); "
            "ridge-penalized fits remain well defined",
            RankWarning,
            stacklevel=2,
        )
    return BasisMatrix(values, labels, spec, knots, extras)


def pc_basis(dataset, count_raw, count_transformed, transform=None):
    """Intercept plus leading PCs of the features and of a transform of them.

    PCs are computed on all N rows after centering and unit-scaling,
    ordered by decreasing explained variance, with the largest-magnitude
    loading of each component made positive. The default transform is all
    quadratic and two-way interaction columns.
    """
    transform = quadratic_interactions if transform is None else transform
    columns = [np.ones(dataset.n_total)]
    labels = ["intercept"]
    extras = {}
    if count_raw:
        scores, labs, meta = _standardized_pcs(dataset.features, count_raw, "pc")
        columns.extend(scores.T)
        labels.extend(labs)
        extras["pcs_raw"] = meta
    if count_transformed:
        transformed = transform(dataset.features)
        scores, labs, meta = _standardized_pcs(transformed, count_transformed, "pct")
        columns.extend(scores.T)
        labels.extend(labs)
        extras["pcs_transformed"] = meta
    spec = BasisSpec(
        (
            {"kind": "intercept"},
            {"kind": "principal_components", "source": "raw", "count": count_raw},
            {
                "kind": "principal_components",
                "source": "transformed",
                "count": count_transformed,
            },
        )
    )
    return BasisMatrix(np.column_stack(columns), labels, spec, {}, extras)
