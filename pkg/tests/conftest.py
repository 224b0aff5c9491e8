import os
from pathlib import Path

import numpy as np
import pytest

from strata_eval.data_model import SemiSupervisedDataset, build_design

REPO_CACHE = Path(__file__).resolve().parent.parent / ".cache"
os.environ.setdefault("STRATA_EVAL_CACHE", str(REPO_CACHE))


def make_dataset(rng, n_total=400, n_features=3, n_strata=2, labeled_fraction=0.3,
                 theta=None):
    """Small synthetic stratified dataset with logistic outcomes."""
    features = rng.normal(size=(n_total, n_features))
    strata = rng.integers(1, n_strata + 1, size=n_total)
    if theta is None:
        theta = np.linspace(1.0, -1.0, n_features + 1)
    logits = theta[0] + features @ theta[1:]
    y_all = (rng.random(n_total) < 1.0 / (1.0 + np.exp(-logits))).astype(float)
    labeled = np.zeros(n_total, dtype=bool)
    for s in range(1, n_strata + 1):
        members = np.flatnonzero(strata == s)
        take = max(2, int(labeled_fraction * members.size))
        labeled[rng.choice(members, size=min(take, members.size), replace=False)] = True
    return SemiSupervisedDataset(
        features=features,
        strata=strata,
        labeled_mask=labeled,
        outcomes=y_all[labeled],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)


@pytest.fixture
def small_dataset(rng):
    return make_dataset(rng)


@pytest.fixture
def small_design(small_dataset):
    return build_design(small_dataset)
