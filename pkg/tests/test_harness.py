import json
import math

import numpy as np
import pytest

from unlearn import core
from unlearn.cli import main
from unlearn.data import Dataset, load_updates, save_updates
from unlearn.harness import (
    SCHEMA_VERSION,
    ExperimentConfig,
    emit_report,
    load_summary,
    prepare,
    reference_minimum,
    reference_optimum,
    run_chain,
    run_retrain_baseline,
    summarize,
    trial_seed,
    verify_unlearning_certificate,
)
from unlearn.losses import closed_form_ridge_optimizer

QUICK = dict(n=120, update_length=6, iters=3)


def test_config_from_mapping_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys.*sigma"):
        ExperimentConfig.from_mapping({"sigma": 1.0})
    cfg = ExperimentConfig.from_mapping({"n": 50, "mode": "strong_perfect"})
    assert cfg.n == 50
    assert cfg.mode == "strong_perfect"


def test_config_field_validation():
    with pytest.raises(ValueError, match="unknown mode"):
        ExperimentConfig(mode="secret")
    with pytest.raises(ValueError, match="unknown loss kind"):
        ExperimentConfig(loss_kind="huber")
    with pytest.raises(ValueError, match="unknown data model"):
        ExperimentConfig(data_model="cubic")
    with pytest.raises(ValueError, match="trials"):
        ExperimentConfig(trials=0)
    with pytest.raises(ValueError, match="update length"):
        ExperimentConfig(update_length=-1)


def test_config_override_ignores_unset_flags():
    cfg = ExperimentConfig(n=100)
    out = cfg.override(n=None, iters=9, seed=None)
    assert out.n == 100
    assert out.iters == 9
    assert cfg.iters == 5  # original untouched


def test_trial_seeds_are_stable_and_distinct():
    assert trial_seed(1, 0) == trial_seed(1, 0)
    assert trial_seed(1, 0) != trial_seed(1, 1)
    assert trial_seed(1, 0) != trial_seed(2, 0)


def test_prepare_materializes_the_configured_pieces():
    cfg = ExperimentConfig(**QUICK, update_strategy="random")
    data, loss, updates = prepare(cfg, trial=0)
    assert data.size == 120
    assert data.dim == 5
    assert len(updates) == 6
    assert updates.kind == "random"
    assert loss.strong_convexity == cfg.lam
    again, _, again_updates = prepare(cfg, trial=0)
    assert np.array_equal(again.features, data.features)
    assert [u.op for u in again_updates] == [u.op for u in updates]
    other, _, _ = prepare(cfg, trial=1)
    assert not np.array_equal(other.features, data.features)


def test_prepare_reads_dataset_and_update_files(tmp_path):
    cfg = ExperimentConfig(**QUICK)
    data, _, updates = prepare(cfg, 0)
    csv_path = tmp_path / "d.csv"
    upd_path = tmp_path / "u.jsonl"
    data.to_csv(csv_path)
    save_updates(updates, upd_path)
    file_cfg = cfg.override(data_path=str(csv_path), updates_path=str(upd_path))
    data2, _, updates2 = prepare(file_cfg, 0)
    assert np.array_equal(data2.features, data.features)
    assert len(updates2) == len(updates)
    with pytest.raises(ValueError, match="does not match the CSV"):
        prepare(cfg.override(data_path=str(csv_path), dim=4), 0)


def test_chain_records_shape_and_budget_accounting():
    cfg = ExperimentConfig(**QUICK)
    records = run_chain(cfg)
    assert len(records) == 7
    assert [r.round for r in records] == list(range(7))
    core_cfg = cfg.core_config()
    data, loss, _ = prepare(cfg, 0)
    sched = core_cfg.resolve(loss, data.size, data.dim)
    assert records[0].update_iters == sched.train_iters(data.size)
    assert all(r.update_iters == cfg.iters for r in records[1:])
    budgets = [r.budget for r in records]
    assert all(a <= b for a, b in zip(budgets, budgets[1:]))
    assert budgets[-1] == sum(r.grads_round for r in records)
    for r in records:
        assert r.excess_risk >= -1e-12
        assert r.reference_tolerance == 0.0  # ridge has an exact oracle
        assert r.mean_gap is None
        assert r.wall_time_s is not None


def test_chain_drift_stays_under_the_theory_bound():
    cfg = ExperimentConfig(**QUICK)
    records = run_chain(cfg, compute_gap=True)
    data, loss, _ = prepare(cfg, 0)
    sched = cfg.core_config().resolve(loss, data.size, data.dim)
    # Churn moves the size; the bound for the smallest dataset in the
    # chain dominates every round.
    n_min = min(r.n_points for r in records)
    drift_limit = core.drift_bound(loss.lipschitz, loss.strong_convexity,
                                   sched.gamma, n_min, cfg.iters)
    gap_limit = core.mean_gap_bound(loss.lipschitz, loss.strong_convexity,
                                    sched.gamma, n_min, cfg.iters)
    for r in records[1:]:
        assert r.drift <= drift_limit
        assert r.mean_gap <= gap_limit


def test_chain_runs_are_reproducible_per_trial():
    cfg = ExperimentConfig(**QUICK)
    a = [r.to_dict() for r in run_chain(cfg, trial=2)]
    b = [r.to_dict() for r in run_chain(cfg, trial=2)]
    c = [r.to_dict() for r in run_chain(cfg, trial=3)]
    assert a == b
    assert a != c


def test_published_excess_risk_meets_the_steady_state_bound():
    cfg = ExperimentConfig(n=200, update_length=200, iters=5)
    records = run_chain(cfg)
    data, loss, _ = prepare(cfg, 0)
    sched = cfg.core_config().resolve(loss, data.size, data.dim)
    n_min = min(r.n_points for r in records)
    drift = core.drift_bound(loss.lipschitz, loss.strong_convexity,
                             sched.gamma, n_min, cfg.iters)
    tail = core.gaussian_tail_radius(sched.sigma, cfg.dim, cfg.beta)
    bound = 0.5 * loss.smoothness * (drift + tail) ** 2
    hits = [r.excess_risk <= bound for r in records[1:]]
    assert np.mean(hits) >= 1.0 - cfg.beta


def test_logistic_chain_uses_descent_references():
    cfg = ExperimentConfig(n=80, dim=3, update_length=3, iters=3,
                           loss_kind="logistic", data_model="logistic")
    records = run_chain(cfg)
    data, loss, _ = prepare(cfg, 0)
    sched = cfg.core_config().resolve(loss, data.size, data.dim)
    n_min = min(r.n_points for r in records)
    drift_limit = core.drift_bound(loss.lipschitz, loss.strong_convexity,
                                   sched.gamma, n_min, cfg.iters)
    for r in records[1:]:
        assert r.drift_tolerance > 0.0
        assert r.drift <= drift_limit + r.drift_tolerance
        assert r.excess_risk >= -1e-12


def test_distributed_chain_record_shape():
    cfg = ExperimentConfig(n=60, dim=3, update_length=4, iters=1,
                           mode="distributed", delta=0.01, copies=2)
    records = run_chain(cfg)
    assert len(records) == 5
    assert records[0].update_iters > 0
    for r in records:
        assert r.drift is None
        assert r.mean_gap is None
        assert r.excess_risk >= -1e-12
    budgets = [r.budget for r in records]
    assert all(a <= b for a, b in zip(budgets, budgets[1:]))


def test_reference_oracles_agree_with_closed_forms():
    cfg = ExperimentConfig(**QUICK)
    data, loss, _ = prepare(cfg, 0)
    theta, tol = reference_optimum(loss, data)
    assert tol == 0.0
    star = closed_form_ridge_optimizer(data, cfg.lam, loss.space)
    assert np.array_equal(theta, star)
    value, vtol = reference_minimum(loss, data)
    assert vtol == 0.0
    assert value == loss.empirical_loss(data, star)


def test_reference_oracles_cover_losses_without_closed_forms():
    cfg = ExperimentConfig(n=60, dim=3, loss_kind="logistic",
                           data_model="logistic")
    data, loss, _ = prepare(cfg, 0)
    theta, tol = reference_optimum(loss, data)
    assert 0.0 <= tol < 1e-6
    # Projected fixed point: a minimizer does not move under one step.
    eta = 2.0 / (loss.smoothness + loss.strong_convexity)
    step = loss.space.project(theta - eta * loss.empirical_gradient(data,
                                                                    theta))
    assert np.linalg.norm(theta - step) <= 1e-9
    value, vtol = reference_minimum(loss, data)
    assert value <= loss.empirical_loss(data, theta) <= value + vtol


def test_summarize_aggregates_the_records():
    cfg = ExperimentConfig(**QUICK)
    records = run_chain(cfg)
    summary = summarize(records)
    assert summary["schema_version"] == SCHEMA_VERSION
    assert summary["rounds"] == len(records)
    assert summary["total_budget"] == records[-1].budget
    excess = np.array([r.excess_risk for r in records])
    assert summary["excess_risk"]["max"] == excess.max()
    assert summary["excess_risk"]["p50"] == np.percentile(excess, 50)
    assert summary["max_drift"] == max(r.drift for r in records)
    assert summarize([]) == {"schema_version": SCHEMA_VERSION, "rounds": 0,
                             "total_budget": 0}


def test_reports_are_byte_deterministic(tmp_path):
    cfg = ExperimentConfig(**QUICK)
    records = run_chain(cfg)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    s1, s2 = tmp_path / "a.json", tmp_path / "b.json"
    emit_report(records, p1, s1)
    emit_report(run_chain(cfg), p2, s2)
    assert p1.read_bytes() == p2.read_bytes()
    assert s1.read_bytes() == s2.read_bytes()
    assert load_summary(p1) == json.loads(s1.read_text())
    first = json.loads(p1.read_text().splitlines()[0])
    assert "wall_time_s" not in first
    emit_report(records, p1, include_timings=True)
    first = json.loads(p1.read_text().splitlines()[0])
    assert "wall_time_s" in first


def test_baseline_matches_the_training_budget_at_default_accuracy():
    cfg = ExperimentConfig(n=1000, dim=10, update_length=5, iters=5)
    records = run_retrain_baseline(cfg)
    data, loss, _ = prepare(cfg, 0)
    sched = cfg.core_config().resolve(loss, data.size, data.dim)
    t_train = sched.train_iters(data.size)
    assert abs(records[0]["baseline_iters"] - t_train) <= 1
    for rec in records[1:]:
        assert rec["baseline_iters"] >= rec["unlearn_iters"]
        assert rec["iters_ratio"] == rec["baseline_iters"] / rec["unlearn_iters"]
    assert records[-1]["budget"] == sum(
        rec["baseline_iters"] * rec["n_points"] for rec in records)


def test_baseline_rejects_unreachable_accuracy():
    # Near-flat curvature: the contraction per step is ~2e-5 nats, so
    # even the smallest positive float sits past the 1e7-iteration cap.
    flat = ExperimentConfig(n=60, dim=2, lam=1e-5, update_length=0)
    with pytest.raises(ValueError, match="reachable floor"):
        run_retrain_baseline(flat, target_alpha=5e-324)
    with pytest.raises(ValueError, match="must be positive"):
        run_retrain_baseline(flat, target_alpha=0.0)


def test_certificate_passes_for_the_secret_mode():
    cfg = ExperimentConfig(n=150, update_length=8, iters=3, trials=2)
    report = verify_unlearning_certificate(cfg)
    assert report["passed"] is True
    assert report["violations"] == []
    assert report["rounds"] == 16
    assert report["max_gap"] <= report["gap_bound"]
    assert report["max_drift"] <= report["drift_bound"]
    assert report["certified_epsilon"] <= cfg.epsilon
    assert report["calibration_epsilon"] == pytest.approx(cfg.epsilon,
                                                          rel=1e-9)
    assert report["frequency_observed"] == 1.0


def test_certificate_passes_for_the_perfect_mode():
    cfg = ExperimentConfig(n=500, update_length=5, iters=3, trials=2,
                           mode="strong_perfect", delta=math.exp(-1.0))
    report = verify_unlearning_certificate(cfg)
    assert report["passed"] is True
    assert report["frequency_required"] == 1.0 - cfg.delta / 2.0
    assert report["calibration_epsilon"] <= cfg.epsilon


def test_certificate_fails_when_the_noise_is_halved(monkeypatch):
    true_sigma = core.sigma_strong

    def half_sigma(*args, **kwargs):
        return 0.5 * true_sigma(*args, **kwargs)

    monkeypatch.setattr(core, "sigma_strong", half_sigma)
    cfg = ExperimentConfig(n=150, update_length=4, iters=3)
    report = verify_unlearning_certificate(cfg)
    assert report["calibration_epsilon"] > cfg.epsilon
    assert report["passed"] is False


def test_certificate_on_an_empty_update_stream():
    cfg = ExperimentConfig(n=100, update_length=0, iters=3)
    report = verify_unlearning_certificate(cfg)
    assert report["max_gap"] == 0.0
    assert report["certified_epsilon"] == 0.0
    assert report["passed"] is True


def test_certificate_rejects_the_distributed_mode():
    cfg = ExperimentConfig(n=60, mode="distributed", delta=0.01)
    with pytest.raises(ValueError, match="single-machine"):
        verify_unlearning_certificate(cfg)


def write_config(tmp_path, **kwargs):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(kwargs))
    return str(path)


def test_cli_data_and_update_generation(tmp_path, monkeypatch):
    monkeypatch.setenv("UNLEARN_OUT_DIR", str(tmp_path / "out"))
    assert main(["gen-data", "--out", "d.csv", "--n", "40", "--dim", "2",
                 "--seed", "3"]) == 0
    csv_path = tmp_path / "out" / "d.csv"
    assert csv_path.exists()
    data = Dataset.from_csv(csv_path)
    assert data.size == 40
    assert main(["gen-updates", "--data", str(csv_path), "--out", "u.jsonl",
                 "--length", "6", "--strategy", "random"]) == 0
    updates = load_updates(tmp_path / "out" / "u.jsonl")
    assert len(updates) == 6


def test_cli_train_writes_a_snapshot(tmp_path):
    out = tmp_path / "state.json"
    code = main(["train", "--state-out", str(out), "--n", "60",
                 "--update-length", "0", "--iters", "3"])
    assert code == 0
    snap = json.loads(out.read_text())
    assert snap["format"] == "unlearn-state/1"
    assert snap["round"] == 0


def test_cli_run_is_byte_deterministic(tmp_path, capsys):
    config = write_config(tmp_path, n=100, update_length=4, iters=3)
    rec1, rec2 = tmp_path / "r1.jsonl", tmp_path / "r2.jsonl"
    sum1, sum2 = tmp_path / "s1.json", tmp_path / "s2.json"
    assert main(["run", "--config", config, "--records-out", str(rec1),
                 "--summary-out", str(sum1)]) == 0
    assert main(["run", "--config", config, "--records-out", str(rec2),
                 "--summary-out", str(sum2)]) == 0
    assert rec1.read_bytes() == rec2.read_bytes()
    assert sum1.read_bytes() == sum2.read_bytes()
    printed = capsys.readouterr().out.splitlines()
    assert json.loads(printed[-1])["schema_version"] == SCHEMA_VERSION
    first = json.loads(rec1.read_text().splitlines()[0])
    assert first["trial"] == 0


def test_cli_run_consumes_generated_files(tmp_path):
    config = write_config(tmp_path, n=40, dim=2, update_length=4, iters=3)
    csv_path = tmp_path / "d.csv"
    upd_path = tmp_path / "u.jsonl"
    assert main(["gen-data", "--out", str(csv_path), "--n", "40",
                 "--dim", "2"]) == 0
    assert main(["gen-updates", "--data", str(csv_path), "--out",
                 str(upd_path), "--length", "4"]) == 0
    records = tmp_path / "r.jsonl"
    code = main(["run", "--config", config, "--records-out", str(records),
                 "--data-path", str(csv_path), "--updates-path",
                 str(upd_path)])
    assert code == 0
    lines = records.read_text().splitlines()
    assert len(lines) == 5


def test_cli_report_rebuilds_the_summary(tmp_path):
    config = write_config(tmp_path, n=100, update_length=4, iters=3)
    records = tmp_path / "r.jsonl"
    summary = tmp_path / "s.json"
    assert main(["run", "--config", config, "--records-out", str(records),
                 "--summary-out", str(summary)]) == 0
    rebuilt = tmp_path / "s2.json"
    assert main(["report", "--records", str(records), "--summary-out",
                 str(rebuilt)]) == 0
    assert rebuilt.read_bytes() == summary.read_bytes()


def test_cli_baseline_prints_the_cost_ratio(tmp_path, capsys):
    config = write_config(tmp_path, n=200, update_length=3, iters=5)
    records = tmp_path / "b.jsonl"
    assert main(["baseline", "--config", config, "--records-out",
                 str(records)]) == 0
    out = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert out["rounds"] == 3
    assert out["mean_iters_ratio"] >= 1.0


def test_cli_certify_round_trip(tmp_path):
    config = write_config(tmp_path, n=120, update_length=4, iters=3)
    out = tmp_path / "cert.json"
    assert main(["certify", "--config", config, "--cert-trials", "1",
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] is True


def test_cli_certify_failure_exits_two(tmp_path, monkeypatch):
    def failing(config, trials=None):
        return {"mode": config.mode, "max_gap": 1.0, "gap_bound": 0.5,
                "certified_epsilon": 9.0, "calibration_epsilon": 9.0,
                "epsilon": 1.0, "frequency_observed": 0.0, "passed": False,
                "violations": [{"trial": 0, "round": 1}]}

    monkeypatch.setattr("unlearn.cli.verify_unlearning_certificate", failing)
    config = write_config(tmp_path, n=100, update_length=2, iters=3)
    assert main(["certify", "--config", config]) == 2


def test_cli_invalid_inputs_exit_three(tmp_path):
    assert main(["run", "--records-out", str(tmp_path / "r.jsonl"),
                 "--mode", "bogus"]) == 3
    assert main(["run"]) == 3  # missing required flag
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--records-out",
                 str(tmp_path / "r.jsonl")]) == 3
    assert main(["gen-data", "--out", str(tmp_path / "d.csv"),
                 "--model", "cubic"]) == 3


def test_cli_io_failures_exit_four(tmp_path):
    config = write_config(tmp_path, n=100, update_length=2, iters=3)
    assert main(["run", "--config", config, "--records-out",
                 "/nonexistent-dir/r.jsonl"]) == 4
    assert main(["report", "--records", str(tmp_path / "missing.jsonl")]) == 4
