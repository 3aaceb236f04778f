import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from debias.densities import Domain, GaussianComponent, GaussianMixture, random_gmm, sample_gmm
from debias.experiment import (
    ExperimentConfig,
    ExperimentError,
    ExperimentReport,
    TrialResult,
    coverage_check,
    mape,
    mean_relative_bias,
    rmse,
    run_experiment,
    run_trial,
    sample_size_sweep,
    stream,
)
from debias.estimators import RiskEstimate, WeightStats
from debias.models import BoostParams

SMALL = dict(n_eval=400, n_train=200, n_runs=3, resolution=100, boost=BoostParams(n_trees=10))


def small(**kw) -> ExperimentConfig:
    return ExperimentConfig(**{**SMALL, **kw})


def fake_trial(truth, est, seed=0):
    ws = WeightStats(1.0, 1.0, 1.0, 1.0)
    mk = lambda kind: RiskEstimate(est, kind, 1, ws)  # noqa: E731
    return TrialResult(seed, truth, mk("MCE"), mk("ISE"), mk("ISE_e"), 1.0)


def test_metric_arithmetic():
    m, excluded = mape([1.1, 0.9], [1.0, 1.0])
    assert m == pytest.approx(10.0, rel=1e-12)
    assert excluded == 0
    assert rmse([1.1, 0.9], [1.0, 1.0]) == pytest.approx(0.1, rel=1e-12)
    assert mean_relative_bias([1.1, 0.9], [1.0, 1.0]) == pytest.approx(0.0, abs=1e-15)


def test_metrics_zero_for_oracle():
    truths = [0.3, 1.7, 2.2]
    assert mape(truths, truths) == (0.0, 0)
    assert rmse(truths, truths) == 0.0


def test_mape_excludes_tiny_truths():
    m, excluded = mape([1.0, 5.0, 2.2], [0.0, 1e-13, 2.0])
    assert excluded == 2
    assert m == pytest.approx(10.0, rel=1e-12)


@given(st.lists(st.tuples(st.floats(0.01, 100), st.floats(0, 100)), min_size=2, max_size=30),
       st.integers(min_value=0))
def test_dropping_one_trial_moves_mape_boundedly(pairs, drop):
    truths, ests = map(np.array, zip(*pairs))
    r = len(truths)
    terms = np.abs(ests - truths) / truths
    full, _ = mape(ests, truths)
    keep = np.arange(r) != drop % r
    reduced, _ = mape(ests[keep], truths[keep])
    assert abs(full - reduced) <= 100.0 / r * terms.max() * (1 + 1e-9)


def test_report_aggregates_injected_trials():
    rep = ExperimentReport(small(n_runs=2), (fake_trial(1.0, 1.1, 0), fake_trial(1.0, 0.9, 1)))
    for kind in ("MCE", "ISE", "ISE_e"):
        assert rep.metrics[kind]["mape"] == pytest.approx(10.0)
        assert rep.metrics[kind]["rmse"] == pytest.approx(0.1)
    lines = rep.trials_csv().splitlines()
    assert lines[0] == "trial,true_risk,mce,ise,ise_e,coverage"
    assert len(lines) == 3


def test_stream_reproducible_and_distinct():
    a = stream(5, "eval").random(4)
    np.testing.assert_array_equal(a, stream(5, "eval").random(4))
    assert not np.array_equal(a, stream(5, "kde").random(4))
    assert not np.array_equal(a, stream(6, "eval").random(4))


def test_config_round_trip_and_strictness():
    cfg = small(function_family="gmm", predictor_family="boost", freeze=True)
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.digest() == cfg.digest()
    with pytest.raises(KeyError, match="n_evals"):
        ExperimentConfig.from_dict({"n_evals": 3})
    with pytest.raises(KeyError, match="boost.depth"):
        ExperimentConfig.from_dict({"boost": {"depth": 3}})
    with pytest.raises(ValueError):
        ExperimentConfig(n_runs=0)
    with pytest.raises(ValueError):
        ExperimentConfig(function_family="cubic")


def test_identity_predictor_gives_zero_everything():
    res = run_trial(small(predictor_family="identity"), 3)
    assert res.true_risk == 0.0
    assert res.mce.value == res.ise.value == res.ise_e.value == 0.0


def test_identity_predictor_rbf_family():
    res = run_trial(small(function_family="gmm", predictor_family="identity"), 4)
    assert res.true_risk == res.mce.value == res.ise.value == res.ise_e.value == 0.0


@pytest.mark.parametrize("kw", [{}, {"function_family": "gmm", "predictor_family": "boost"},
                                {"kde_data": "independent"}])
def test_trial_deterministic(kw):
    cfg = small(**kw)
    assert run_trial(cfg, 11).to_dict() == run_trial(cfg, 11).to_dict()


def test_trial_values_sane():
    res = run_trial(small(n_eval=2000, resolution=200), 12)
    assert res.true_risk > 0
    for est in (res.mce, res.ise, res.ise_e):
        assert est.value >= 0 and est.n == 2000
    assert 0 <= res.coverage_fraction <= 1


def test_freeze_pins_setting():
    cfg = small(freeze=True)
    a, b = run_trial(cfg, 1), run_trial(cfg, 2)
    assert a.true_risk == b.true_risk
    assert a.mce.value != b.mce.value
    unfrozen = small()
    assert run_trial(unfrozen, 1).true_risk != run_trial(unfrozen, 2).true_risk


def test_experiment_report_contents():
    rep = run_experiment(small())
    d = json.loads(rep.to_json())
    assert d["n_trials"] == 3
    assert [t["seed"] for t in d["trials"]] == [0, 1, 2]
    assert set(d["metrics"]) == {"MCE", "ISE", "ISE_e"}
    assert all(v["mape"] >= 0 and v["rmse"] >= 0 for v in d["metrics"].values())


def test_experiment_independent_of_jobs():
    cfg = small(n_runs=4)
    assert run_experiment(cfg, jobs=1).to_json() == run_experiment(cfg, jobs=3).to_json()


def test_all_trials_failing_raises():
    far = GaussianMixture((GaussianComponent(np.array([-900.0, -900.0]), 100 * np.eye(2), 1.0),))
    with pytest.raises(ExperimentError, match="all 3 trials failed"):
        run_experiment(small(mixture=far))


def test_sweep_rows_and_csv():
    rep = sample_size_sweep(small(freeze=True), [50, 200, 400])
    lines = rep.sweep_csv().splitlines()
    assert lines[0] == "n,estimator,mean_bias,mape"
    assert len(lines) == 1 + 3 * 3
    assert rep.row(400, "ISE").mape >= 0


def test_sweep_prefix_matches_trial_draw():
    cfg = small(freeze=True)
    rep = sample_size_sweep(cfg, [cfg.n_eval])
    res = run_trial(cfg, 0)
    v = rep.trials[0][2][cfg.n_eval]
    assert (v["MCE"], v["ISE"], v["ISE_e"]) == (res.mce.value, res.ise.value, res.ise_e.value)


def test_sweep_size_one():
    rep = sample_size_sweep(small(), [1])
    assert np.isfinite(rep.row(1, "MCE").mean_bias)
    assert np.isnan(rep.row(1, "ISE_e").mape)
    json.loads(rep.to_json())


def test_sweep_rejects_unsorted_sizes():
    with pytest.raises(ValueError):
        sample_size_sweep(small(), [100, 10])
    with pytest.raises(ValueError):
        sample_size_sweep(small(), [])


def test_coverage_cases():
    unit = Domain(0, 0, 1, 1)
    centres = [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]
    assert coverage_check(centres, unit, 2) == 1.0
    assert coverage_check(np.full((50, 2), 0.05), unit, 10) == 0.01
    with pytest.raises(ValueError):
        coverage_check(centres, unit, 1)


def test_default_mixture_has_no_holes():
    cfg = ExperimentConfig()
    g = random_gmm(cfg.k, cfg.domain, cfg.min_eigenvalue, stream(0, "mixture"), cfg.eig_max_factor)
    pts = sample_gmm(g, 10_000, stream(0, "eval"))
    assert coverage_check(pts, cfg.domain, 20) > 0.95
