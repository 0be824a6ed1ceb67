"""Experiment driver: chains, baselines, certificates, reports.

A single flat config describes the dataset, loss, mode, privacy budget
and edit stream. The harness runs the deletion chain, measures excess
risk and optimizer drift against oracles where they exist (long
reference descents otherwise, with the reference tolerance reported),
and writes reports whose bytes depend only on the config and seeds.
Wall-clock timings are measured but kept out of the canonical report
so that identical runs stay byte-identical; pass ``include_timings``
to get them in a record dump.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import core
from .core import UnlearnConfig, fresh_mean, gaussian_mechanism_epsilon
from .data import (Dataset, gen_adversarial_sequence,
                   gen_synthetic_dataset, load_updates)
from .distributed import dist_learn, dist_params, dist_unlearn
from .losses import (LogisticLoss, LossModel, ParamSpace, RegularizedLoss,
                     RidgeLoss, closed_form_ridge_optimizer)
from .optimizer import GDConfig, pgd
from .rng import spawn_key

__all__ = [
    "CertificateError",
    "ExperimentConfig",
    "MetricsRecord",
    "run_chain",
    "run_retrain_baseline",
    "verify_unlearning_certificate",
    "emit_report",
    "load_summary",
]

SCHEMA_VERSION = 1

HARNESS_MODES = core.MODES + ("distributed",)


class CertificateError(Exception):
    """An indistinguishability certificate failed to verify."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; every field is a config key."""

    n: int = 200
    dim: int = 5
    data_model: str = "linear"
    data_noise: float = 0.1
    data_path: str | None = None
    feature_bound: float = 1.0
    label_bound: float = 1.0
    radius: float = 1.0
    loss_kind: str = "ridge"
    lam: float = 1.0
    mode: str = "strong_secret"
    epsilon: float = 1.0
    delta: float = 0.05
    iters: int = 5
    schedule_exponent: float = 1.0
    sample_exponent: float = 1.0
    beta: float = 0.05
    copies: int | None = None
    update_strategy: str = "churn"
    update_length: int = 20
    updates_path: str | None = None
    seed: int = 0
    trials: int = 1

    def __post_init__(self):
        if self.mode not in HARNESS_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.loss_kind not in ("ridge", "logistic"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.data_model not in ("linear", "logistic"):
            raise ValueError(f"unknown data model {self.data_model!r}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.update_length < 0:
            raise ValueError("update length must be nonnegative")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**mapping)

    def override(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items()
                                if v is not None})

    def loss(self) -> LossModel:
        space = ParamSpace(self.dim, self.radius)
        if self.loss_kind == "ridge":
            return RidgeLoss(space, self.feature_bound, self.label_bound,
                             self.lam)
        return LogisticLoss(space, self.feature_bound, self.lam)

    def core_config(self) -> UnlearnConfig:
        if self.mode == "distributed":
            raise ValueError("distributed mode has no single-machine config")
        return UnlearnConfig(mode=self.mode, epsilon=self.epsilon,
                             delta=self.delta, iters=self.iters,
                             schedule_exponent=self.schedule_exponent)


def trial_seed(seed: int, trial: int) -> int:
    """Stable per-trial seed so trials can run in any order."""
    seq = np.random.SeedSequence(entropy=int(seed),
                                 spawn_key=spawn_key("trial", trial))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def prepare(config: ExperimentConfig, trial: int = 0):
    """Materialize (dataset, loss, updates) for one trial."""
    tseed = trial_seed(config.seed, trial)
    if config.data_path:
        data = Dataset.from_csv(config.data_path, config.feature_bound,
                                config.label_bound)
        if data.dim != config.dim:
            raise ValueError("config dim does not match the CSV")
    else:
        data = gen_synthetic_dataset(
            config.n, config.dim, model=config.data_model,
            noise=config.data_noise, feature_bound=config.feature_bound,
            label_bound=config.label_bound, seed=tseed)
    loss = config.loss()
    loss.check_dataset(data)
    if config.updates_path:
        updates = load_updates(config.updates_path)
    else:
        updates = gen_adversarial_sequence(
            data, config.update_length, strategy=config.update_strategy,
            seed=tseed)
    return data, loss, updates


@dataclass
class MetricsRecord:
    """Per-round measurements of one chain."""

    round: int
    n_points: int
    update_iters: float
    excess_risk: float
    reference_tolerance: float
    drift: float | None
    drift_tolerance: float | None
    mean_gap: float | None
    grads_round: int
    budget: int
    wall_time_s: float | None = None

    def to_dict(self, include_timings: bool = False) -> dict:
        out = {
            "round": self.round,
            "n_points": self.n_points,
            "update_iters": self.update_iters,
            "excess_risk": self.excess_risk,
            "reference_tolerance": self.reference_tolerance,
            "drift": self.drift,
            "drift_tolerance": self.drift_tolerance,
            "mean_gap": self.mean_gap,
            "grads_round": self.grads_round,
            "budget": self.budget,
        }
        if include_timings:
            out["wall_time_s"] = self.wall_time_s
        return out


def _ridge_family(loss: LossModel):
    """(base ridge, total lam) when the loss is ridge plus quadratics."""
    extra = 0.0
    base = loss
    while isinstance(base, RegularizedLoss):
        extra += base.extra
        base = base.base
    if isinstance(base, RidgeLoss):
        return base, base.lam + extra
    return None, None


def reference_optimum(loss: LossModel, data: Dataset, hint_iters: int = 50):
    """Minimizer of ``loss`` over the ball with a certified tolerance.

    Uses the ridge closed form when it applies (tolerance 0), otherwise
    a long strongly-convex descent whose contraction bound supplies the
    tolerance. Requires strong convexity.
    """
    base, lam_total = _ridge_family(loss)
    if base is not None:
        try:
            theta = closed_form_ridge_optimizer(data, lam_total, loss.space)
            return theta, 0.0
        except ValueError:
            pass
    if loss.strong_convexity <= 0:
        raise ValueError("requires strong convexity")
    gamma = (loss.smoothness - loss.strong_convexity) \
        / (loss.smoothness + loss.strong_convexity)
    iterations = max(200, 10 * hint_iters)
    trace = pgd(loss, data, np.zeros(data.dim),
                GDConfig.for_loss(loss, iterations))
    tol = gamma ** iterations * loss.space.radius
    return trace.theta, tol


def reference_minimum(loss: LossModel, data: Dataset, hint_iters: int = 50):
    """Lower bound on min loss over the ball, with its gap to the truth.

    Returns (value, tolerance) with value <= min <= value + tolerance,
    so excess risks measured against ``value`` are never negative.
    """
    base, lam_total = _ridge_family(loss)
    if base is not None:
        try:
            theta = closed_form_ridge_optimizer(data, lam_total, loss.space)
            return loss.empirical_loss(data, theta), 0.0
        except ValueError:
            pass
    if loss.strong_convexity > 0:
        theta, tol = reference_optimum(loss, data, hint_iters)
        gap = 0.5 * loss.smoothness * tol * tol
        return loss.empirical_loss(data, theta) - gap, gap
    iterations = max(2000, 10 * hint_iters)
    trace = pgd(loss, data, np.zeros(data.dim),
                GDConfig.for_loss(loss, iterations, regime="convex_smooth"))
    gap = loss.smoothness * loss.space.radius ** 2 / (2.0 * iterations)
    return loss.empirical_loss(data, trace.theta) - gap, gap


def _core_chain(config: ExperimentConfig, trial: int, compute_gap: bool):
    data, loss, updates = prepare(config, trial)
    cfg = config.core_config()
    sched = cfg.resolve(loss, data.size, data.dim)
    chain_seed = trial_seed(config.seed, trial)
    records = []
    t0 = time.perf_counter()
    state = core.learn(data, loss, cfg, seed=chain_seed)
    prev_budget = 0
    for rnd in range(len(updates) + 1):
        if rnd > 0:
            t0 = time.perf_counter()
            state = core.unlearn(state, updates[rnd - 1], loss, cfg)
        fmin, f_tol = reference_minimum(loss, state.data, sched.config.iters)
        theta_star, d_tol = reference_optimum(sched.effective_loss,
                                              state.data, sched.config.iters)
        gap = None
        if compute_gap:
            mean = fresh_mean(state.data, loss, cfg).theta
            gap = float(np.linalg.norm(mean - state.theta_hat))
        records.append(MetricsRecord(
            round=rnd,
            n_points=state.data.size,
            update_iters=float(sched.train_iters(data.size) if rnd == 0
                               else sched.update_iters(rnd)),
            excess_risk=float(loss.empirical_loss(state.data,
                                                  state.theta_pub) - fmin),
            reference_tolerance=f_tol,
            drift=float(np.linalg.norm(state.theta_hat - theta_star)),
            drift_tolerance=d_tol,
            mean_gap=gap,
            grads_round=state.budget - prev_budget,
            budget=state.budget,
            wall_time_s=time.perf_counter() - t0,
        ))
        prev_budget = state.budget
    return records


def _dist_chain(config: ExperimentConfig, trial: int):
    data, loss, updates = prepare(config, trial)
    cfg = dist_params(data.size, data.dim, loss, config.sample_exponent,
                      config.iters, config.epsilon, config.delta,
                      beta=config.beta, copies=config.copies)
    chain_seed = trial_seed(config.seed, trial)
    records = []
    t0 = time.perf_counter()
    state = dist_learn(data, loss, cfg, seed=chain_seed)
    prev_budget = 0
    for rnd in range(len(updates) + 1):
        if rnd > 0:
            t0 = time.perf_counter()
            state = dist_unlearn(state, updates[rnd - 1], loss, cfg)
        fmin, f_tol = reference_minimum(loss, state.data, cfg.train_iters)
        records.append(MetricsRecord(
            round=rnd,
            n_points=state.data.size,
            update_iters=float(cfg.train_iters if rnd == 0
                               else cfg.total_update_iters(rnd)),
            excess_risk=float(loss.empirical_loss(state.data,
                                                  state.theta_pub) - fmin),
            reference_tolerance=f_tol,
            drift=None,
            drift_tolerance=None,
            mean_gap=None,
            grads_round=state.budget - prev_budget,
            budget=state.budget,
            wall_time_s=time.perf_counter() - t0,
        ))
        prev_budget = state.budget
    return records


def run_chain(config: ExperimentConfig, trial: int = 0,
              compute_gap: bool = False) -> list:
    """Run one trial of the configured chain; one record per round."""
    if config.mode == "distributed":
        return _dist_chain(config, trial)
    return _core_chain(config, trial, compute_gap)


def run_retrain_baseline(config: ExperimentConfig,
                         target_alpha: float | None = None) -> list:
    """Retrain from scratch after every edit until ``target_alpha`` holds.

    Accuracy is certified through the contraction bound
    (M/2)(gamma^T r)^2 <= alpha, never measured, mirroring how the
    deletion chain budgets its own work. The default alpha is the value
    the from-scratch training phase itself certifies. Records carry the
    per-round iteration counts next to the deletion chain's, plus the
    I + log(epsilon n / sqrt(d)) / log(1/gamma) expense shape as a
    reference curve.
    """
    data, loss, updates = prepare(config, 0)
    cfg = config.core_config()
    sched = cfg.resolve(loss, data.size, data.dim)
    eff = sched.effective_loss
    gamma = sched.gamma
    radius = loss.space.radius
    smooth = eff.smoothness
    if target_alpha is None:
        t_train = sched.train_iters(data.size)
        target_alpha = 0.5 * smooth * (gamma ** t_train * radius) ** 2
    if not target_alpha > 0:
        raise ValueError("target accuracy must be positive")
    raw = math.log(smooth * radius ** 2 / (2.0 * target_alpha)) \
        / (2.0 * math.log(1.0 / gamma))
    if raw > 1e7:
        raise ValueError("target accuracy below the reachable floor")
    iters_alpha = max(0, math.ceil(raw))
    records = []
    current = data
    theta = pgd(eff, current, np.zeros(data.dim),
                GDConfig(sched.eta, iters_alpha)).theta
    budget = iters_alpha * current.size
    for rnd in range(len(updates) + 1):
        if rnd > 0:
            current = current.apply(updates[rnd - 1])
            theta = pgd(eff, current, np.zeros(data.dim),
                        GDConfig(sched.eta, iters_alpha)).theta
            budget += iters_alpha * current.size
        unlearn_iters = (sched.train_iters(data.size) if rnd == 0
                         else sched.update_iters(rnd))
        shape = config.iters + math.log(
            max(config.epsilon * current.size / math.sqrt(config.dim), 1.0)
        ) / math.log(1.0 / gamma)
        records.append({
            "round": rnd,
            "n_points": current.size,
            "baseline_iters": iters_alpha,
            "unlearn_iters": unlearn_iters,
            "iters_ratio": iters_alpha / max(unlearn_iters, 1),
            "shape_reference": shape,
            "certified_alpha": target_alpha,
            "budget": budget,
        })
    return records


def verify_unlearning_certificate(config: ExperimentConfig,
                                  trials: int | None = None) -> dict:
    """Measure the pre-noise retrain gap and certify indistinguishability.

    For every round of every trial the unlearned secret parameter is
    compared against a from-scratch retrain on the same edited data
    (noise plays no part in either mean). Secret-state modes must stay
    within their worst-case gap bound at every round; perfect mode must
    stay within its high-probability bound in at least a 1 - delta/2
    fraction of trials. The released-noise privacy of the worst
    measured gap is reported next to the configured budget.
    """
    if config.mode == "distributed":
        raise ValueError("certificates cover the single-machine modes")
    trials = config.trials if trials is None else trials
    cfg = config.core_config()
    perfect = config.mode == "strong_perfect"
    probe = prepare(config, 0)
    loss = probe[1]
    sched = cfg.resolve(loss, probe[0].size, probe[0].dim)
    eff = sched.effective_loss
    if perfect:
        bound = 2.0 * core.perfect_drift_bound(
            loss.lipschitz, loss.strong_convexity, sched.gamma, sched.n,
            config.iters, sched.sigma, config.dim)
        drift_limit = 0.5 * bound
        mech_delta = config.delta / 2.0
    else:
        bound = core.mean_gap_bound(
            eff.lipschitz, eff.strong_convexity, sched.gamma, sched.n,
            config.iters)
        drift_limit = 0.5 * bound
        mech_delta = config.delta
    max_gap = 0.0
    max_drift = 0.0
    violations = []
    clean_trials = 0
    rounds = 0
    for t in range(trials):
        data, loss_t, updates = prepare(config, t)
        chain_seed = trial_seed(config.seed, t)
        state = core.learn(data, loss_t, cfg, seed=chain_seed)
        trial_ok = True
        for rnd in range(1, len(updates) + 1):
            state = core.unlearn(state, updates[rnd - 1], loss_t, cfg)
            mean = fresh_mean(state.data, loss_t, cfg).theta
            gap = float(np.linalg.norm(mean - state.theta_hat))
            theta_star, tol = reference_optimum(eff, state.data, config.iters)
            drift = float(np.linalg.norm(state.theta_hat - theta_star))
            max_gap = max(max_gap, gap)
            max_drift = max(max_drift, drift)
            ok = gap <= bound * (1 + 1e-9) and \
                drift <= drift_limit * (1 + 1e-9) + tol
            if not ok:
                trial_ok = False
                violations.append({"trial": t, "round": rnd, "gap": gap,
                                   "drift": drift})
            rounds += 1
        clean_trials += trial_ok
    frequency = clean_trials / max(trials, 1)
    required = 1.0 - config.delta / 2.0 if perfect else 1.0
    certified = gaussian_mechanism_epsilon(max_gap, sched.sigma, mech_delta)
    # Worst-case check: the deployed noise must cover the full gap bound,
    # not just the gap this run happened to produce.
    calibration = gaussian_mechanism_epsilon(bound, sched.sigma, mech_delta)
    budget = config.epsilon * (1 + 1e-9)
    passed = (frequency >= required and certified <= budget
              and calibration <= budget)
    return {
        "mode": config.mode,
        "trials": trials,
        "rounds": rounds,
        "sigma": sched.sigma,
        "gap_bound": bound,
        "drift_bound": drift_limit,
        "max_gap": max_gap,
        "max_drift": max_drift,
        "certified_epsilon": certified,
        "calibration_epsilon": calibration,
        "epsilon": config.epsilon,
        "frequency_observed": frequency,
        "frequency_required": required,
        "violations": violations,
        "passed": bool(passed),
    }


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def summarize(records: list) -> dict:
    """Aggregate per-round records into the summary schema."""
    dicts = [r.to_dict() if isinstance(r, MetricsRecord) else dict(r)
             for r in records]
    excess = [r["excess_risk"] for r in dicts if "excess_risk" in r]
    drifts = [r["drift"] for r in dicts if r.get("drift") is not None]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "rounds": len(dicts),
        "total_budget": dicts[-1]["budget"] if dicts else 0,
    }
    if excess:
        arr = np.asarray(excess, dtype=float)
        summary["excess_risk"] = {
            "p50": float(np.percentile(arr, 50)),
            "p90": float(np.percentile(arr, 90)),
            "max": float(arr.max()),
        }
    if drifts:
        summary["max_drift"] = float(max(drifts))
    return summary


def emit_report(records: list, records_path, summary_path=None,
                include_timings: bool = False) -> dict:
    """Write one JSON object per round plus a summary document.

    Output bytes are a pure function of the records (canonical JSON,
    sorted keys); timings are only included on request because they
    break run-to-run byte equality.
    """
    dicts = [r.to_dict(include_timings) if isinstance(r, MetricsRecord)
             else dict(r) for r in records]
    with open(records_path, "w") as fh:
        for rec in dicts:
            fh.write(_canonical(rec))
            fh.write("\n")
    summary = summarize(records)
    if summary_path is not None:
        with open(summary_path, "w") as fh:
            fh.write(_canonical(summary))
            fh.write("\n")
    return summary


def load_summary(records_path) -> dict:
    """Rebuild the summary from a records file (for the report command)."""
    records = []
    with open(records_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return summarize(records)
