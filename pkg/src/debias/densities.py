"""Target, sampling and estimated densities on a rectangular study region.

Three densities appear in every experiment:

* the uniform target density ``p`` over a :class:`Domain`,
* a Gaussian mixture ``g`` restricted (truncated and renormalised) to the domain,
* a Gaussian-kernel density estimate of ``g`` built from a sample.

Point arguments are either a single point of shape ``(2,)`` or an array of
points of shape ``(n, 2)``; the return value follows the input (float or
array of length ``n``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .quadrature import DEFAULT_RESOLUTION, axis_midpoints, midpoint_grid

#: truncated densities are never reported below this inside the domain
DENSITY_FLOOR = 1e-300

#: rejection sampling gives up below this acceptance probability
MIN_ACCEPTANCE = 1e-3

_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateMixtureError(ValueError):
    """The mixture puts (almost) no mass inside its domain."""


def _as_points(x):
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 2:
        raise ValueError(f"expected 2-D points, got shape {np.shape(x)}")
    return pts, single


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: float = 0.0
    y_min: float = 0.0
    x_max: float = 100.0
    y_max: float = 100.0

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"domain bounds must be finite: {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"empty domain: {vals}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max])

    def contains(self, x):
        pts, single = _as_points(x)
        inside = (
            (pts[:, 0] >= self.x_min)
            & (pts[:, 0] < self.x_max)
            & (pts[:, 1] >= self.y_min)
            & (pts[:, 1] < self.y_max)
        )
        return bool(inside[0]) if single else inside

    def pdf(self, x):
        return pdf_uniform(self, x)

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        return cls(float(d["x_min"]), float(d["y_min"]), float(d["x_max"]), float(d["y_max"]))


def pdf_uniform(domain: Domain, x):
    """Uniform target density: ``1/area`` inside the (half-open) domain, 0 outside."""
    inside = domain.contains(x)
    dens = 1.0 / domain.area
    if isinstance(inside, bool):
        return dens if inside else 0.0
    return np.where(inside, dens, 0.0)


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray
    weight: float
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = _frozen(self.mean)
        cov = _frozen(self.cov)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ValueError("component needs a 2-vector mean and a 2x2 covariance")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ValueError("covariance must be symmetric")
        if not (0.0 < self.weight <= 1.0):
            raise ValueError(f"weight must lie in (0, 1], got {self.weight}")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "chol", _frozen(chol))

    def pdf(self, pts: np.ndarray) -> np.ndarray:
        """Unweighted normal density at an ``(n, 2)`` array of points."""
        diff = pts - self.mean
        # solve L z = diff for z, with L lower triangular 2x2
        l00, l10, l11 = self.chol[0, 0], self.chol[1, 0], self.chol[1, 1]
        z0 = diff[:, 0] / l00
        z1 = (diff[:, 1] - l10 * z0) / l11
        log_det = 2.0 * (math.log(l00) + math.log(l11))
        return np.exp(-0.5 * (z0 * z0 + z1 * z1) - 0.5 * log_det - _LOG_2PI)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.cov)


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of 2-D Gaussians together with the domain it is truncated to.

    ``mass_in_domain`` is the probability the untruncated mixture assigns to
    the domain, obtained by midpoint quadrature at ``resolution`` cells per
    axis.
    """

    components: tuple
    domain: Domain = Domain()
    resolution: int = DEFAULT_RESOLUTION
    mass_in_domain: float = field(init=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        total = math.fsum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"component weights sum to {total!r}, expected 1")
        object.__setattr__(self, "components", comps)
        centers, cell_area = midpoint_grid(self.domain, self.resolution)
        mass = float(np.sum(_mixture_pdf(comps, centers)) * cell_area)
        object.__setattr__(self, "mass_in_domain", min(mass, 1.0))

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def pdf(self, x, truncated: bool = True):
        return pdf_gmm(self, x, truncated=truncated)

    def to_dict(self) -> dict:
        return {
            "components": [
                {"mean": c.mean.tolist(), "cov": c.cov.tolist(), "weight": c.weight}
                for c in self.components
            ],
            "domain": self.domain.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, resolution: int = DEFAULT_RESOLUTION) -> "GaussianMixture":
        comps = [
            GaussianComponent(np.asarray(c["mean"]), np.asarray(c["cov"]), float(c["weight"]))
            for c in d["components"]
        ]
        domain = Domain.from_dict(d["domain"]) if "domain" in d else Domain()
        return cls(tuple(comps), domain, resolution)


def _mixture_pdf(components, pts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(pts))
    for c in components:
        out += c.weight * c.pdf(pts)
    return out


def pdf_gmm(g: GaussianMixture, x, truncated: bool = True):
    """Mixture density at ``x``.

    With ``truncated`` the value is divided by ``g.mass_in_domain`` inside the
    domain (floored at :data:`DENSITY_FLOOR`) and set to 0 outside.
    """
    pts, single = _as_points(x)
    dens = _mixture_pdf(g.components, pts)
    if truncated:
        inside = g.domain.contains(pts)
        dens = np.where(inside, np.maximum(dens / g.mass_in_domain, DENSITY_FLOOR), 0.0)
    return float(dens[0]) if single else dens


def sample_gmm(g: GaussianMixture, n: int, rng) -> np.ndarray:
    """Draw ``n`` points from the mixture truncated to its domain.

    A component is chosen by weight, a Gaussian draw is made through the
    component's Cholesky factor, and points falling outside the domain are
    redrawn. ``rng`` is a :class:`numpy.random.Generator` or an integer seed.

    :raises DegenerateMixtureError: if the acceptance probability
        (``mass_in_domain``) is below :data:`MIN_ACCEPTANCE`.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if g.mass_in_domain < MIN_ACCEPTANCE:
        raise DegenerateMixtureError(
            f"only {g.mass_in_domain:.3g} of the mixture mass lies inside the domain"
        )
    rng = np.random.default_rng(rng)
    weights = g.weights
    means = np.stack([c.mean for c in g.components])
    chols = np.stack([c.chol for c in g.components])
    accepted = []
    have = 0
    while have < n:
        batch = int(math.ceil((n - have) / g.mass_in_domain * 1.1)) + 16
        idx = rng.choice(len(weights), size=batch, p=weights)
        z = rng.standard_normal((batch, 2))
        pts = means[idx] + np.einsum("nij,nj->ni", chols[idx], z)
        pts = pts[g.domain.contains(pts)]
        accepted.append(pts)
        have += len(pts)
    return np.concatenate(accepted)[:n]


def random_gmm(
    k: int,
    domain: Domain = Domain(),
    min_eigenvalue: float = 100.0,
    rng=None,
    eig_max_factor: float = 4.0,
    resolution: int = DEFAULT_RESOLUTION,
) -> GaussianMixture:
    """Random mixture of ``k`` components with uniformly placed means.

    Each covariance is ``R^T D R`` for a rotation by an angle uniform on
    ``[0, pi)`` and a diagonal ``D`` with entries uniform on
    ``[min_eigenvalue, eig_max_factor * min_eigenvalue]``. Weights are uniform
    draws normalised to sum to one.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if min_eigenvalue <= 0:
        raise ValueError("min_eigenvalue must be positive")
    if eig_max_factor < 1:
        raise ValueError("eig_max_factor must be >= 1")
    rng = np.random.default_rng(rng)
    means = rng.uniform(domain.lower, domain.upper, size=(k, 2))
    eigs = rng.uniform(min_eigenvalue, eig_max_factor * min_eigenvalue, size=(k, 2))
    angles = rng.uniform(0.0, math.pi, size=k)
    raw = rng.uniform(0.0, 1.0, size=k)
    # uniform(0, 1) can return exactly 0; nudge into (0, 1]
    raw = np.where(raw > 0.0, raw, np.finfo(float).tiny)
    weights = raw / raw.sum()
    comps = []
    for mean, eig, theta, w in zip(means, eigs, angles, weights):
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        cov = rot.T @ np.diag(eig) @ rot
        cov = 0.5 * (cov + cov.T)
        comps.append(GaussianComponent(mean, cov, float(w)))
    return GaussianMixture(tuple(comps), domain, resolution)


# -- kernel density estimate ---------------------------------------------------

BANDWIDTH_RULES = ("silverman", "scott", "silverman_robust")


def _root6(n: float) -> float:
    # n ** (1/6) through sqrt/cbrt is exact on perfect powers (64 -> 2, 1e6 -> 10)
    return float(np.cbrt(np.sqrt(n)))


def silverman_bandwidth(std, n: int) -> np.ndarray:
    """Per-axis normal-reference bandwidth ``std * (4/(d+2))**(1/(d+4)) * n**(-1/(d+4))``.

    With ``d = 2`` the prefactor is exactly one, leaving ``std / n**(1/6)``.
    """
    return np.asarray(std, dtype=float) / _root6(n)


def _bandwidths(pts: np.ndarray, rule: str) -> np.ndarray:
    n = len(pts)
    std = np.std(pts, axis=0, ddof=1)
    if rule == "silverman":
        spread = std
    elif rule == "scott":
        # Scott's factor n**(-1/(d+4)) coincides with Silverman's for d = 2
        spread = std
    elif rule == "silverman_robust":
        q75, q25 = np.percentile(pts, [75, 25], axis=0)
        robust = (q75 - q25) / 1.349
        spread = np.where(robust > 0, np.minimum(std, robust), std)
    else:
        raise ValueError(f"unknown bandwidth rule {rule!r}; choose from {BANDWIDTH_RULES}")
    return silverman_bandwidth(spread, n)


@dataclass(frozen=True)
class KdeModel:
    """Product Gaussian-kernel density estimate with per-axis bandwidths."""

    anchors: np.ndarray
    bandwidths: np.ndarray
    domain: Domain = Domain()
    resolution: int = DEFAULT_RESOLUTION
    mass_in_domain: float = field(init=False)

    def __post_init__(self):
        anchors = _frozen(self.anchors)
        bw = _frozen(self.bandwidths)
        if anchors.ndim != 2 or anchors.shape[1] != 2 or len(anchors) < 1:
            raise ValueError("anchors must be a non-empty (n, 2) array")
        if bw.shape != (2,) or not np.all(bw > 0) or not np.all(np.isfinite(bw)):
            raise ValueError(f"bandwidths must be two positive finite values, got {bw}")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "bandwidths", bw)
        object.__setattr__(self, "mass_in_domain", _kde_mass(anchors, bw, self.domain, self.resolution))

    @property
    def n(self) -> int:
        return len(self.anchors)

    def pdf(self, x, truncated: bool = True):
        return kde_pdf(self, x, truncated=truncated)


def _axis_kernel(centers: np.ndarray, anchors: np.ndarray, h: float) -> np.ndarray:
    """``phi((c - a)/h)/h`` for every (center, anchor) pair, shape ``(len(c), len(a))``."""
    u = (centers[:, None] - anchors[None, :]) / h
    return np.exp(-0.5 * u * u) / (h * math.sqrt(2.0 * math.pi))


def _kde_mass(anchors, bw, domain: Domain, resolution: int) -> float:
    # The kernel is a product over axes, so the 2-D midpoint rule factorises
    # into one 1-D midpoint sum per axis and anchor.
    xs, dx = axis_midpoints(domain.x_min, domain.x_max, resolution)
    ys, dy = axis_midpoints(domain.y_min, domain.y_max, resolution)
    mass_x = np.empty(len(anchors))
    mass_y = np.empty(len(anchors))
    for lo in range(0, len(anchors), 2048):
        sl = slice(lo, lo + 2048)
        mass_x[sl] = _axis_kernel(xs, anchors[sl, 0], bw[0]).sum(axis=0) * dx
        mass_y[sl] = _axis_kernel(ys, anchors[sl, 1], bw[1]).sum(axis=0) * dy
    return min(float(np.mean(mass_x * mass_y)), 1.0)


def kde_fit(points, rule: str = "silverman", domain: Domain = Domain(),
            resolution: int = DEFAULT_RESOLUTION) -> KdeModel:
    """Fit a Gaussian KDE with per-axis bandwidths from ``rule``.

    :raises ValueError: with fewer than two points or a zero-spread axis.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of points, got shape {pts.shape}")
    if len(pts) < 2:
        raise ValueError("kde_fit needs at least 2 points")
    std = np.std(pts, axis=0, ddof=1)
    if np.any(std == 0):
        axis = int(np.flatnonzero(std == 0)[0])
        raise ValueError(f"degenerate sample: zero spread along axis {axis}")
    return KdeModel(pts, _bandwidths(pts, rule), domain, resolution)


def kde_pdf(model: KdeModel, x, truncated: bool = True, chunk: int = 1024):
    """Evaluate the estimate at ``x``; rows are processed ``chunk`` at a time."""
    pts, single = _as_points(x)
    a = model.anchors
    h0, h1 = model.bandwidths
    norm = 1.0 / (2.0 * math.pi * h0 * h1 * len(a))
    out = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        p = pts[lo:lo + chunk]
        u = (p[:, 0, None] - a[None, :, 0]) / h0
        v = (p[:, 1, None] - a[None, :, 1]) / h1
        out[lo:lo + chunk] = np.exp(-0.5 * (u * u + v * v)).sum(axis=1) * norm
    if truncated:
        inside = model.domain.contains(pts)
        out = np.where(inside, np.maximum(out / model.mass_in_domain, DENSITY_FLOOR), 0.0)
    return float(out[0]) if single else out


def kde_pdf_grid(model: KdeModel, xs, ys, truncated: bool = True) -> np.ndarray:
    """Evaluate the estimate on the tensor grid ``xs x ys``; result is ``(len(xs), len(ys))``.

    Uses the product structure of the kernel, which turns the evaluation into
    a single matrix product and makes large-sample grids affordable.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    out = np.zeros((len(xs), len(ys)))
    a = model.anchors
    for lo in range(0, len(a), 8192):
        kx = _axis_kernel(xs, a[lo:lo + 8192, 0], model.bandwidths[0])
        ky = _axis_kernel(ys, a[lo:lo + 8192, 1], model.bandwidths[1])
        out += kx @ ky.T
    out /= len(a)
    if truncated:
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        inside = model.domain.contains(np.column_stack([gx.ravel(), gy.ravel()])).reshape(out.shape)
        out = np.where(inside, np.maximum(out / model.mass_in_domain, DENSITY_FLOOR), 0.0)
    return out
