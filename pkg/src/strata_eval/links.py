"""Smooth monotone link functions mapping the real line into (0, 1)."""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats
from scipy.special import expit as _expit


@dataclass(frozen=True)
class LinkFunction:
    """A link g with first and second derivatives.

    g must be monotone into (0, 1) with dg > 0 everywhere and ddg finite;
    the solvers rely on both derivatives.
    """

    kind: str
    g: Callable = field(repr=False)
    dg: Callable = field(repr=False)
    ddg: Callable = field(repr=False)


def _expit_d1(a):
    p = _expit(a)
    return p * (1.0 - p)


def _expit_d2(a):
    p = _expit(a)
    return p * (1.0 - p) * (1.0 - 2.0 * p)


def _probit_d2(a):
    a = np.asarray(a, dtype=float)
    return -a * stats.norm.pdf(a)


EXPIT = LinkFunction("expit", _expit, _expit_d1, _expit_d2)
PROBIT = LinkFunction("probit", stats.norm.cdf, stats.norm.pdf, _probit_d2)

# Diagnostic-only link: makes squared-error problems exactly quadratic so
# closed-form solutions exist for solver cross-checks. Not a valid
# probability link on unbounded inputs.
IDENTITY = LinkFunction(
    "identity",
    lambda a: np.asarray(a, dtype=float),
    lambda a: np.ones_like(np.asarray(a, dtype=float)),
    lambda a: np.zeros_like(np.asarray(a, dtype=float)),
)

_REGISTRY = {"expit": EXPIT, "probit": PROBIT, "identity": IDENTITY}


def get_link(kind):
    """Look up a built-in link by name ('expit', 'probit', 'identity')."""
    try:
        return _REGISTRY[kind]
    except KeyError:
        raise KeyError(f"unknown link {kind!r}; use one of {sorted(_REGISTRY)}")


def custom_link(g, dg, ddg):
    return LinkFunction("custom", g, dg, ddg)
