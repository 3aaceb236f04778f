"""Risk estimators for biased samples and the quadrature reference value.

``mce`` is the plain average of pointwise errors. ``ise`` reweights each
error by ``p(x)/g(x)`` with the true sampling density, ``ise_estimated`` does
the same with a kernel density estimate in place of ``g``.

All sums go through :func:`math.fsum`, so an estimate is exactly rounded and
does not depend on the order of the sample points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .densities import Domain, KdeModel, kde_fit
from .quadrature import DEFAULT_RESOLUTION, integrate

KINDS = ("MCE", "ISE", "ISE_e")


class NonFiniteWeightError(ValueError):
    pass


@dataclass(frozen=True)
class EvaluationSample:
    points: np.ndarray
    errors: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        err = np.asarray(self.errors, dtype=float).reshape(-1)
        if len(pts) != len(err):
            raise ValueError(f"{len(pts)} points but {len(err)} errors")
        if len(err) == 0:
            raise ValueError("empty evaluation sample")
        if np.any(err < 0) or not np.all(np.isfinite(err)):
            raise ValueError("errors must be finite and non-negative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "errors", err)

    @property
    def n(self) -> int:
        return len(self.errors)

    @classmethod
    def from_pair(cls, pair, points) -> "EvaluationSample":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(pts, pair.error(pts))


@dataclass(frozen=True)
class WeightStats:
    min: float
    max: float
    mean: float
    ess: float

    @classmethod
    def of(cls, w: np.ndarray) -> "WeightStats":
        total = math.fsum(w)
        sq = math.fsum(w * w)
        return cls(float(np.min(w)), float(np.max(w)), total / len(w), total * total / sq if sq > 0 else 0.0)


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    kind: str
    n: int
    weight_stats: WeightStats

    def to_dict(self) -> dict:
        ws = self.weight_stats
        return {
            "kind": self.kind,
            "value": self.value,
            "n": self.n,
            "weight_stats": {"min": ws.min, "max": ws.max, "mean": ws.mean, "ess": ws.ess},
        }


def mce(sample: EvaluationSample) -> RiskEstimate:
    n = sample.n
    value = math.fsum(sample.errors) / n
    return RiskEstimate(value, "MCE", n, WeightStats(1.0, 1.0, 1.0, float(n)))


def importance_weights(points, p, g, weight_cap: float | None = None) -> np.ndarray:
    """``p(x)/g(x)`` at every point.

    :raises NonFiniteWeightError: naming the first point whose weight is not finite.
    """
    num = np.asarray(p(points), dtype=float)
    den = np.asarray(g(points), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = num / den
    bad = ~np.isfinite(w)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteWeightError(
            f"non-finite importance weight at point index {i} "
            f"(x={points[i].tolist()}, p={num[i]!r}, g={den[i]!r})"
        )
    if weight_cap is not None:
        w = np.minimum(w, weight_cap)
    return w


def ise(sample: EvaluationSample, p, g, weight_cap: float | None = None, kind: str = "ISE") -> RiskEstimate:
    """Importance-weighted risk ``mean(e(x_i) * p(x_i) / g(x_i))``.

    ``p`` and ``g`` are vectorised density callables, e.g. ``domain.pdf`` and
    ``mixture.pdf``.
    """
    w = importance_weights(sample.points, p, g, weight_cap)
    value = math.fsum(sample.errors * w) / sample.n
    return RiskEstimate(value, kind, sample.n, WeightStats.of(w))


def ise_estimated(sample: EvaluationSample, p, kde: KdeModel | None = None,
                  rule: str = "silverman", domain: Domain | None = None,
                  weight_cap: float | None = None) -> RiskEstimate:
    """:func:`ise` with the truncated KDE in place of the sampling density.

    Without an explicit ``kde`` one is fitted on the evaluation points
    themselves.
    """
    if kde is None:
        kde = kde_fit(sample.points, rule, domain if domain is not None else Domain())
    return ise(sample, p, kde.pdf, weight_cap, kind="ISE_e")


def true_risk(pair, p, domain: Domain, resolution: int = DEFAULT_RESOLUTION) -> float:
    """Midpoint-rule value of the integral of ``e(x) p(x)`` over the domain."""
    if resolution < 100:
        raise ValueError("true_risk needs at least 100 cells per axis")
    return integrate(lambda pts: pair.error(pts) * p(pts), domain, resolution)
