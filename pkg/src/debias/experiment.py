"""Seeded trials, MAPE/RMSE aggregation, sample-size sweeps and coverage.

Random streams
--------------
Every random quantity in a trial comes from its own stream, keyed by the
64-bit trial seed and a fixed label::

    Generator(Philox(SeedSequence([seed, STREAMS[label]])))

so a stream can be reproduced from ``(seed, label)`` alone, regardless of
which process runs the trial or in what order trials finish.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .densities import Domain, GaussianMixture, kde_fit, random_gmm, sample_gmm
from .estimators import (
    KINDS,
    EvaluationSample,
    RiskEstimate,
    ise,
    ise_estimated,
    mce,
    true_risk,
)
from .models import (
    BoostParams,
    FieldPair,
    fit_gradient_boost,
    make_random_linear,
    make_random_rbf,
)
from .quadrature import DEFAULT_RESOLUTION

log = logging.getLogger(__name__)

STREAMS = {"mixture": 0, "truth": 1, "predictor": 2, "train": 3, "eval": 4, "kde": 5}

FUNCTION_FAMILIES = ("linear", "gmm")
PREDICTOR_FAMILIES = ("linear", "boost", "identity")

#: trials whose true risk is below this are left out of MAPE
MIN_TRUE_RISK = 1e-12


class ExperimentError(RuntimeError):
    pass


def stream(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), STREAMS[label]])))


@dataclass(frozen=True)
class ExperimentConfig:
    domain: Domain = Domain()
    k: int = 20
    min_eigenvalue: float = 100.0
    #: upper eigenvalue bound as a multiple of min_eigenvalue
    eig_max_factor: float = 25.0
    #: fixed mixture used instead of a random one per trial
    mixture: GaussianMixture | None = None
    function_family: str = "linear"
    predictor_family: str = "linear"
    rbf_centers: int = 40
    n_eval: int = 10_000
    n_train: int = 2_000
    n_runs: int = 100
    kde_rule: str = "silverman"
    #: "eval" fits the KDE on the evaluation points, "independent" on a fresh draw
    kde_data: str = "eval"
    resolution: int = DEFAULT_RESOLUTION
    coverage_grid: int = 20
    master_seed: int = 0
    #: pin the mixture and fields to the master seed for every trial
    freeze: bool = False
    weight_cap: float | None = None
    boost: BoostParams = BoostParams()

    def __post_init__(self):
        for name in ("k", "n_eval", "n_train", "n_runs", "rbf_centers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.function_family not in FUNCTION_FAMILIES:
            raise ValueError(f"function_family must be one of {FUNCTION_FAMILIES}")
        if self.predictor_family not in PREDICTOR_FAMILIES:
            raise ValueError(f"predictor_family must be one of {PREDICTOR_FAMILIES}")
        if self.kde_data not in ("eval", "independent"):
            raise ValueError("kde_data must be 'eval' or 'independent'")
        if self.coverage_grid < 2:
            raise ValueError("coverage_grid must be >= 2")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["domain"] = self.domain.to_dict()
        d["mixture"] = None if self.mixture is None else self.mixture.to_dict()
        d["boost"] = dataclasses.asdict(self.boost)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Strict parse: unknown keys raise ``KeyError`` naming the key."""
        known = {f.name for f in dataclasses.fields(cls)}
        for key in d:
            if key not in known:
                raise KeyError(key)
        kw = dict(d)
        if "domain" in kw:
            kw["domain"] = Domain.from_dict(kw["domain"])
        if kw.get("mixture") is not None:
            res = kw.get("resolution", DEFAULT_RESOLUTION)
            kw["mixture"] = GaussianMixture.from_dict(kw["mixture"], res)
        if "boost" in kw:
            bknown = {f.name for f in dataclasses.fields(BoostParams)}
            for key in kw["boost"]:
                if key not in bknown:
                    raise KeyError(f"boost.{key}")
            kw["boost"] = BoostParams(**kw["boost"])
        return cls(**kw)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class Setting:
    """Everything a trial holds fixed while evaluation points are drawn."""

    mixture: GaussianMixture
    pair: FieldPair
    true_risk: float


def build_setting(config: ExperimentConfig, seed: int) -> Setting:
    dom = config.domain
    if config.mixture is not None:
        g = config.mixture
    else:
        g = random_gmm(config.k, dom, config.min_eigenvalue, stream(seed, "mixture"),
                       config.eig_max_factor, config.resolution)

    if config.function_family == "linear":
        truth = make_random_linear(dom, stream(seed, "truth"))
    else:
        truth = make_random_rbf(dom, config.rbf_centers, stream(seed, "truth"))

    if config.predictor_family == "identity":
        predictor = truth
    elif config.predictor_family == "linear":
        predictor = make_random_linear(dom, stream(seed, "predictor"))
    else:
        train_x = sample_gmm(g, config.n_train, stream(seed, "train"))
        predictor = fit_gradient_boost(train_x, truth(train_x), config.boost)

    pair = FieldPair(truth, predictor)
    return Setting(g, pair, true_risk(pair, dom.pdf, dom, config.resolution))


_SETTINGS: dict = {}


def _setting_for(config: ExperimentConfig, trial_seed: int) -> Setting:
    seed = config.master_seed if config.freeze else trial_seed
    if not config.freeze:
        return build_setting(config, seed)
    key = (config.digest(), seed)
    if key not in _SETTINGS:
        _SETTINGS.clear()
        _SETTINGS[key] = build_setting(config, seed)
    return _SETTINGS[key]


def coverage_check(points, domain: Domain, grid: int = 20) -> float:
    """Fraction of cells of a ``grid x grid`` partition holding at least one point."""
    if grid < 2:
        raise ValueError("grid must be >= 2")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    pts = pts[domain.contains(pts)]
    ix = np.floor((pts[:, 0] - domain.x_min) / (domain.x_max - domain.x_min) * grid).astype(int)
    iy = np.floor((pts[:, 1] - domain.y_min) / (domain.y_max - domain.y_min) * grid).astype(int)
    ix = np.clip(ix, 0, grid - 1)
    iy = np.clip(iy, 0, grid - 1)
    return len(np.unique(ix * grid + iy)) / (grid * grid)


@dataclass(frozen=True)
class TrialResult:
    seed: int
    true_risk: float
    mce: RiskEstimate
    ise: RiskEstimate
    ise_e: RiskEstimate
    coverage_fraction: float

    def estimate(self, kind: str) -> RiskEstimate:
        return {"MCE": self.mce, "ISE": self.ise, "ISE_e": self.ise_e}[kind]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "true_risk": self.true_risk,
            "mce": self.mce.to_dict(),
            "ise": self.ise.to_dict(),
            "ise_e": self.ise_e.to_dict(),
            "coverage": self.coverage_fraction,
        }


def _estimates(config: ExperimentConfig, setting: Setting, pts: np.ndarray, seed: int):
    dom = config.domain
    sample = EvaluationSample.from_pair(setting.pair, pts)
    est_mce = mce(sample)
    est_ise = ise(sample, dom.pdf, setting.mixture.pdf, config.weight_cap)
    if config.kde_data == "eval":
        kde_pts = pts
    else:
        kde_pts = sample_gmm(setting.mixture, len(pts), stream(seed, "kde"))
    kde = kde_fit(kde_pts, config.kde_rule, dom, config.resolution)
    est_ise_e = ise_estimated(sample, dom.pdf, kde, weight_cap=config.weight_cap)
    return est_mce, est_ise, est_ise_e


def run_trial(config: ExperimentConfig, trial_seed: int) -> TrialResult:
    try:
        setting = _setting_for(config, trial_seed)
        pts = sample_gmm(setting.mixture, config.n_eval, stream(trial_seed, "eval"))
        est_mce, est_ise, est_ise_e = _estimates(config, setting, pts, trial_seed)
    except Exception as exc:
        raise ExperimentError(f"trial seed {trial_seed}: {type(exc).__name__}: {exc}") from exc
    cov = coverage_check(pts, config.domain, config.coverage_grid)
    return TrialResult(trial_seed, setting.true_risk, est_mce, est_ise, est_ise_e, cov)


# -- metrics -------------------------------------------------------------------------

def mape(estimates, truths) -> tuple[float, int]:
    """Mean absolute percentage error and the number of trials left out for tiny truth."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    keep = tru >= MIN_TRUE_RISK
    if not np.any(keep):
        return float("nan"), int(np.sum(~keep))
    terms = np.abs(est[keep] - tru[keep]) / tru[keep]
    return 100.0 * math.fsum(terms) / len(terms), int(np.sum(~keep))


def rmse(estimates, truths) -> float:
    diff = np.asarray(estimates, dtype=float) - np.asarray(truths, dtype=float)
    return math.sqrt(math.fsum(diff * diff) / len(diff))


def mean_relative_bias(estimates, truths) -> float:
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    keep = tru >= MIN_TRUE_RISK
    if not np.any(keep):
        return float("nan")
    return math.fsum((est[keep] - tru[keep]) / tru[keep]) / int(np.sum(keep))


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    trials: tuple
    failures: tuple = ()
    metrics: dict = field(init=False)
    n_excluded: int = field(init=False)

    def __post_init__(self):
        truths = [t.true_risk for t in self.trials]
        metrics = {}
        excluded = 0
        for kind in KINDS:
            vals = [t.estimate(kind).value for t in self.trials]
            m, excluded = mape(vals, truths)
            metrics[kind] = {"mape": m, "rmse": rmse(vals, truths)}
        object.__setattr__(self, "metrics", metrics)
        object.__setattr__(self, "n_excluded", excluded)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_digest": self.config.digest(),
            "n_trials": len(self.trials),
            "n_excluded_from_mape": self.n_excluded,
            "failures": [{"seed": s, "error": msg} for s, msg in self.failures],
            "metrics": self.metrics,
            "trials": [t.to_dict() for t in self.trials],
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def trials_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "true_risk", "mce", "ise", "ise_e", "coverage"])
        for i, t in enumerate(self.trials):
            w.writerow([i, repr(t.true_risk), repr(t.mce.value), repr(t.ise.value),
                        repr(t.ise_e.value), repr(t.coverage_fraction)])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _safe_trial(args):
    config, seed = args
    try:
        return run_trial(config, seed)
    except ExperimentError as exc:
        return (seed, str(exc))


def _map_trials(func, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map yields in submission order, keeping aggregation independent of scheduling
        return list(pool.map(func, tasks))


def _split(outcomes):
    ok = tuple(o for o in outcomes if not isinstance(o, tuple))
    bad = tuple(o for o in outcomes if isinstance(o, tuple))
    if not ok:
        causes = "; ".join(msg for _, msg in bad)
        raise ExperimentError(f"all {len(bad)} trials failed: {causes}")
    for seed, msg in bad:
        log.warning("trial %d failed: %s", seed, msg)
    return ok, bad


def trial_seeds(config: ExperimentConfig) -> list[int]:
    return [(config.master_seed + r) % 2**64 for r in range(config.n_runs)]


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    tasks = [(config, s) for s in trial_seeds(config)]
    ok, bad = _split(_map_trials(_safe_trial, tasks, jobs))
    return ExperimentReport(config, ok, bad)


# -- sample-size sweep -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    n: int
    estimator: str
    mean_bias: float
    mape: float


@dataclass(frozen=True)
class SweepReport:
    config: ExperimentConfig
    sizes: tuple
    #: per trial: (seed, true_risk, {n: {kind: value}})
    trials: tuple
    failures: tuple = ()
    rows: tuple = field(init=False)

    def __post_init__(self):
        rows = []
        truths = [t[1] for t in self.trials]
        for n in self.sizes:
            for kind in KINDS:
                vals = [t[2][n][kind] for t in self.trials]
                rows.append(SweepRow(n, kind, mean_relative_bias(vals, truths), mape(vals, truths)[0]))
        object.__setattr__(self, "rows", tuple(rows))

    def row(self, n: int, kind: str) -> SweepRow:
        for r in self.rows:
            if r.n == n and r.estimator == kind:
                return r
        raise KeyError((n, kind))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_digest": self.config.digest(),
            "sizes": list(self.sizes),
            "failures": [{"seed": s, "error": msg} for s, msg in self.failures],
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "trials": [
                {"seed": s, "true_risk": tr, "estimates": {str(n): v for n, v in by_n.items()}}
                for s, tr, by_n in self.trials
            ],
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def sweep_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "estimator", "mean_bias", "mape"])
        for r in self.rows:
            w.writerow([r.n, r.estimator, repr(r.mean_bias), repr(r.mape)])
        return buf.getvalue()

    def trials_csv(self) -> str:
        """Per-trial values at the largest sample size."""
        n = self.sizes[-1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "true_risk", "mce", "ise", "ise_e", "coverage"])
        for i, (_, tr, by_n) in enumerate(self.trials):
            v = by_n[n]
            w.writerow([i, repr(tr), repr(v["MCE"]), repr(v["ISE"]), repr(v["ISE_e"]), repr(v["coverage"])])
        return buf.getvalue()


def sweep_trial(config: ExperimentConfig, trial_seed: int, sizes) -> tuple:
    """One trial of a sweep; smaller samples are prefixes of the largest draw."""
    try:
        setting = _setting_for(config, trial_seed)
        all_pts = sample_gmm(setting.mixture, max(sizes), stream(trial_seed, "eval"))
        by_n = {}
        for n in sizes:
            pts = all_pts[:n]
            sample = EvaluationSample.from_pair(setting.pair, pts)
            vals = {
                "MCE": mce(sample).value,
                "ISE": ise(sample, config.domain.pdf, setting.mixture.pdf, config.weight_cap).value,
            }
            if n >= 2 and np.all(np.std(pts, axis=0) > 0):
                kde_pts = pts if config.kde_data == "eval" else sample_gmm(
                    setting.mixture, n, stream(trial_seed, "kde"))
                kde = kde_fit(kde_pts, config.kde_rule, config.domain, config.resolution)
                vals["ISE_e"] = ise_estimated(sample, config.domain.pdf, kde,
                                              weight_cap=config.weight_cap).value
            else:
                # a KDE cannot be fitted to fewer than two distinct points
                vals["ISE_e"] = float("nan")
            vals["coverage"] = coverage_check(pts, config.domain, config.coverage_grid)
            by_n[n] = vals
    except Exception as exc:
        raise ExperimentError(f"trial seed {trial_seed}: {type(exc).__name__}: {exc}") from exc
    return trial_seed, setting.true_risk, by_n


def _safe_sweep_trial(args):
    config, seed, sizes = args
    try:
        return sweep_trial(config, seed, sizes)
    except ExperimentError as exc:
        return (seed, str(exc))


def sample_size_sweep(config: ExperimentConfig, sizes, jobs: int = 1) -> SweepReport:
    sizes = tuple(int(s) for s in sizes)
    if not sizes:
        raise ValueError("sizes must be non-empty")
    if any(s < 1 for s in sizes) or list(sizes) != sorted(set(sizes)):
        raise ValueError(f"sizes must be positive and strictly ascending, got {sizes}")
    tasks = [(config, s, sizes) for s in trial_seeds(config)]
    outcomes = _map_trials(_safe_sweep_trial, tasks, jobs)
    # failures are (seed, message) pairs; successes are 3-tuples
    ok = tuple(o for o in outcomes if len(o) == 3)
    bad = tuple(o for o in outcomes if len(o) == 2)
    if not ok:
        raise ExperimentError(f"all {len(bad)} trials failed: " + "; ".join(m for _, m in bad))
    return SweepReport(config, sizes, ok, bad)
