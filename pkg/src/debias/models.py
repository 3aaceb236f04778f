"""Ground-truth fields, fitted predictors and the squared error between them.

Every field is a callable taking ``(2,)`` or ``(n, 2)`` points, like the
densities. Predictors for the nonlinear case are least-squares gradient
boosted regression trees written out here so their structure can be stored
as plain JSON.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .densities import Domain, _as_points, _frozen


def _out(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


@dataclass(frozen=True)
class LinearField:
    """``a1 * x + a2 * y + b``."""

    a1: float
    a2: float
    b: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a1, self.a2, self.b)):
            raise ValueError("linear field coefficients must be finite")

    def __call__(self, x):
        pts, single = _as_points(x)
        return _out(self.a1 * pts[:, 0] + self.a2 * pts[:, 1] + self.b, single)

    def to_dict(self) -> dict:
        return {"type": "linear", "a1": self.a1, "a2": self.a2, "b": self.b}


@dataclass(frozen=True)
class RbfField:
    """Sum of isotropic Gaussian bumps ``amp * exp(-|x - c|^2 / (2 w^2))``."""

    centers: np.ndarray
    amplitudes: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        centers = _frozen(self.centers).reshape(-1, 2)
        amps = _frozen(self.amplitudes).reshape(-1)
        widths = _frozen(self.widths).reshape(-1)
        if len(centers) < 1 or not (len(centers) == len(amps) == len(widths)):
            raise ValueError("need at least one center and matching amplitudes/widths")
        if not np.all(widths > 0):
            raise ValueError("RBF widths must be positive")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "widths", widths)

    def __call__(self, x):
        pts, single = _as_points(x)
        out = np.zeros(len(pts))
        for c, amp, w in zip(self.centers, self.amplitudes, self.widths):
            d2 = (pts[:, 0] - c[0]) ** 2 + (pts[:, 1] - c[1]) ** 2
            out += amp * np.exp(-d2 / (2.0 * w * w))
        return _out(out, single)

    def to_dict(self) -> dict:
        return {
            "type": "rbf",
            "centers": self.centers.tolist(),
            "amplitudes": self.amplitudes.tolist(),
            "widths": self.widths.tolist(),
        }


def make_random_linear(domain: Domain = Domain(), rng=None) -> LinearField:
    """Slopes uniform in ``[-1, 1]`` per axis extent, intercept uniform in ``[0, 1]``.

    On the default ``[0, 100)^2`` domain each slope is in ``[-0.01, 0.01]`` so the
    field varies by O(1) across the region.
    """
    rng = np.random.default_rng(rng)
    a = rng.uniform(-1.0, 1.0, size=2)
    b = rng.uniform(0.0, 1.0)
    return LinearField(
        float(a[0] / (domain.x_max - domain.x_min)),
        float(a[1] / (domain.y_max - domain.y_min)),
        float(b),
    )


def make_random_rbf(domain: Domain, m: int, rng=None,
                    width_range=(10.0, 40.0), amplitude_range=(-1.0, 1.0)) -> RbfField:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    rng = np.random.default_rng(rng)
    centers = rng.uniform(domain.lower, domain.upper, size=(m, 2))
    amps = rng.uniform(*amplitude_range, size=m)
    widths = rng.uniform(*width_range, size=m)
    return RbfField(centers, amps, widths)


# -- regression trees ------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    value: float

    def to_dict(self) -> dict:
        return {"leaf": self.value}


@dataclass(frozen=True)
class Split:
    """Points with ``x[split_dim] <= threshold`` go left."""

    split_dim: int
    threshold: float
    left: "Leaf | Split"
    right: "Leaf | Split"

    def to_dict(self) -> dict:
        return {
            "split_dim": self.split_dim,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }


def _node_from_dict(d: dict):
    if "leaf" in d:
        return Leaf(float(d["leaf"]))
    return Split(int(d["split_dim"]), float(d["threshold"]),
                 _node_from_dict(d["left"]), _node_from_dict(d["right"]))


def tree_depth(node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def predict_tree(node, pts: np.ndarray) -> np.ndarray:
    out = np.empty(len(pts))
    _fill(node, pts, np.arange(len(pts)), out)
    return out


def _fill(node, pts, idx, out):
    if isinstance(node, Leaf):
        out[idx] = node.value
        return
    go_left = pts[idx, node.split_dim] <= node.threshold
    _fill(node.left, pts, idx[go_left], out)
    _fill(node.right, pts, idx[~go_left], out)


def _best_split(x: np.ndarray, r: np.ndarray, min_leaf: int):
    """Exact greedy search; returns ``(gain, dim, threshold)`` or ``None``."""
    n = len(r)
    total = r.sum()
    base = total * total / n
    best = None
    for dim in range(x.shape[1]):
        order = np.argsort(x[:, dim], kind="stable")
        xs = x[order, dim]
        cs = np.cumsum(r[order])
        # candidate k puts the first k sorted points on the left
        k = np.arange(min_leaf, n - min_leaf + 1)
        if len(k) == 0:
            continue
        valid = xs[k - 1] < xs[np.minimum(k, n - 1)]
        k = k[valid & (k < n)]
        if len(k) == 0:
            continue
        left = cs[k - 1]
        right = total - left
        score = left * left / k + right * right / (n - k)
        j = int(np.argmax(score))
        gain = score[j] - base
        if best is None or gain > best[0]:
            kk = k[j]
            best = (gain, dim, 0.5 * (xs[kk - 1] + xs[kk]))
    return best


def fit_tree(x: np.ndarray, r: np.ndarray, max_depth: int, min_leaf: int):
    """Least-squares regression tree with constant leaves."""
    if max_depth == 0 or len(r) < 2 * min_leaf or not np.any(r != r[0]):
        return Leaf(float(np.mean(r)))
    found = _best_split(x, r, min_leaf)
    if found is None or not found[0] > 0:
        return Leaf(float(np.mean(r)))
    _, dim, thr = found
    left = x[:, dim] <= thr
    return Split(
        dim, float(thr),
        fit_tree(x[left], r[left], max_depth - 1, min_leaf),
        fit_tree(x[~left], r[~left], max_depth - 1, min_leaf),
    )


@dataclass(frozen=True)
class BoostParams:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5


@dataclass(frozen=True)
class GradientBoostPredictor:
    base_value: float
    trees: tuple
    learning_rate: float
    #: mean squared training residual after 0, 1, ..., len(trees) trees
    train_loss: tuple = field(default=(), compare=False)

    def __call__(self, x):
        pts, single = _as_points(x)
        out = np.full(len(pts), self.base_value)
        for tree in self.trees:
            out += self.learning_rate * predict_tree(tree, pts)
        return _out(out, single)

    def to_dict(self) -> dict:
        return {
            "type": "gradient_boost",
            "base_value": self.base_value,
            "learning_rate": self.learning_rate,
            "trees": [t.to_dict() for t in self.trees],
        }


def fit_gradient_boost(train_x, train_y, params: BoostParams = BoostParams()) -> GradientBoostPredictor:
    """Least-squares boosting: each tree is fitted to the current residuals.

    Prediction is ``base_value + learning_rate * sum(tree(x))`` with
    ``base_value`` the mean training target.
    """
    x = np.asarray(train_x, dtype=float)
    y = np.asarray(train_y, dtype=float)
    if len(y) == 0:
        raise ValueError("empty training set")
    if x.shape != (len(y), 2):
        raise ValueError(f"train_x must be ({len(y)}, 2), got {x.shape}")
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise ValueError(f"non-finite training target at index {bad}")
    if len(y) < 2 * params.min_leaf:
        raise ValueError(f"need at least {2 * params.min_leaf} training points, got {len(y)}")
    if not (0 < params.learning_rate <= 1):
        raise ValueError("learning_rate must lie in (0, 1]")

    base = float(y[0]) if np.all(y == y[0]) else float(np.mean(y))
    pred = np.full(len(y), base)
    losses = [float(np.mean((y - pred) ** 2))]
    trees = []
    for _ in range(params.n_trees):
        resid = y - pred
        tree = fit_tree(x, resid, params.max_depth, params.min_leaf)
        pred = pred + params.learning_rate * predict_tree(tree, x)
        trees.append(tree)
        losses.append(float(np.mean((y - pred) ** 2)))
    return GradientBoostPredictor(base, tuple(trees), float(params.learning_rate), tuple(losses))


# -- errors ------------------------------------------------------------------------

def predict(model, x):
    """Evaluate any field or predictor at ``x``."""
    return model(x)


@dataclass(frozen=True)
class FieldPair:
    truth: object
    predictor: object

    def error(self, x):
        return pointwise_error(self, x)

    def to_dict(self) -> dict:
        return {"truth": self.truth.to_dict(), "predictor": self.predictor.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "FieldPair":
        return cls(model_from_dict(d["truth"]), model_from_dict(d["predictor"]))


def pointwise_error(pair: FieldPair, x):
    """Squared difference ``(truth(x) - predictor(x))**2``."""
    diff = np.asarray(pair.truth(x)) - np.asarray(pair.predictor(x))
    sq = diff * diff
    return float(sq) if np.ndim(sq) == 0 else sq


def model_from_dict(d: dict):
    kind = d.get("type")
    if kind == "linear":
        return LinearField(float(d["a1"]), float(d["a2"]), float(d["b"]))
    if kind == "rbf":
        return RbfField(np.asarray(d["centers"]), np.asarray(d["amplitudes"]), np.asarray(d["widths"]))
    if kind == "gradient_boost":
        return GradientBoostPredictor(
            float(d["base_value"]),
            tuple(_node_from_dict(t) for t in d["trees"]),
            float(d["learning_rate"]),
        )
    raise ValueError(f"unknown model type {kind!r}")
