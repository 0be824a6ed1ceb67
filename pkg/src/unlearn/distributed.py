"""Distributed deletion with subsampled, partitioned optimization.

Each of C independent copies holds a bootstrap subsample of B points
(drawn i.i.d. with replacement), split into K equal partitions that are
optimized separately; a copy's parameter is the average of its
partition optimizers and the best copy (lowest empirical loss on the
full current dataset) is published with Gaussian noise.

Edits reach the subsamples through reservoir maintenance that preserves
the i.i.d.-from-current-data law of every position: an add overwrites
Binomial(B, 1/n_i) random positions with the new point; a delete
redraws every position holding the deleted point from the edited
dataset. A position never changes partition, so an edit touches only
the partitions whose contents actually changed, and only those rerun
descent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import _check_privacy, _sqrt_gap, publish
from .data import Dataset, Update
from .losses import LossModel
from .optimizer import GDConfig, contraction_factor, pgd
from .rng import substream

logger = logging.getLogger(__name__)

__all__ = [
    "DistConfig",
    "CopyState",
    "CopyReport",
    "UpdateReport",
    "PartitionedState",
    "dist_params",
    "dist_learn",
    "reservoir_update",
    "dist_unlearn",
    "dist_publish",
    "select_best",
]

DIST_SNAPSHOT_FORMAT = "unlearn-dist-state/1"


@dataclass(frozen=True)
class DistConfig:
    """Derived shape and budgets of a distributed chain.

    Attributes:
        n, dim: training set size and dimension at learn time.
        sample_exponent: xi in [1, 4/3]; the subsample holds about
            n^xi points.
        sample_size: B, rounded up so num_partitions divides it.
        num_partitions: K = max(1, floor(sqrt(ceil(n^xi)))).
        copies: independent subsampled runs; the best one is published.
        iters: base per-update budget I.
        gamma: per-iteration contraction of the loss.
        exponent: e = K n^2 I / B^2, the learn-time contraction
            exponent the noise scale is calibrated against.
        sigma: publication noise scale.
        train_iters: learn-time iterations per partition.
    """

    n: int
    dim: int
    sample_exponent: float
    sample_size: int
    num_partitions: int
    copies: int
    iters: int
    epsilon: float
    delta: float
    gamma: float
    exponent: float
    sigma: float
    train_iters: int

    def total_update_iters(self, i: int) -> float:
        """Per-copy gradient budget multiplier T_i for update round i.

        T_i = 10 log(2i/delta) (I + (B^2/(K n^2))
              log(1 + 10 i log(2i/delta)) / log(1/gamma));
        the copy may spend n T_i point-gradients on round i.
        """
        if i < 1:
            raise ValueError("round index must be at least 1")
        tail = math.log(2.0 * i / self.delta)
        ratio = self.sample_size ** 2 / (self.num_partitions * self.n ** 2)
        return 10.0 * tail * (
            self.iters
            + ratio * math.log(1.0 + 10.0 * i * tail)
            / math.log(1.0 / self.gamma)
        )

    def partition_iters(self, i: int, touched: int) -> int:
        """Iterations for each of ``touched`` modified partitions.

        Splits the round budget n T_i evenly: each partition of size
        B/K runs ceil(K n T_i / (B * touched)) iterations, so the spent
        point-gradients stay within n T_i plus one partition sweep per
        touched partition (the rounding slack).
        """
        if touched < 1:
            raise ValueError("touched partition count must be positive")
        return math.ceil(
            self.num_partitions * self.n * self.total_update_iters(i)
            / (self.sample_size * touched)
        )


def dist_params(n: int, dim: int, loss: LossModel, sample_exponent: float,
                iters: int, epsilon: float, delta: float, beta: float = 0.05,
                copies: int | None = None,
                max_sample_size: int = 1_000_000) -> DistConfig:
    """Derive the distributed chain shape from the problem size.

    ``copies`` overrides the count otherwise derived from the accuracy
    failure probability ``beta`` as ceil(log(2/beta) / log 2).
    """
    if not 1.0 <= sample_exponent <= 4.0 / 3.0:
        raise ValueError("sample exponent must lie in [1, 4/3]")
    if n < 2:
        raise ValueError("need at least two points")
    if iters < 1:
        raise ValueError("iteration budget must be at least 1")
    _check_privacy(epsilon, delta)
    raw = math.ceil(n ** sample_exponent)
    k = max(1, math.isqrt(raw))
    b = k * math.ceil(raw / k)
    if b > max_sample_size:
        raise ValueError("sample budget exceeded: subsample of "
                         f"{b} points is over the {max_sample_size} cap")
    if delta > 1.0 / b:
        raise ValueError("delta too large: must be at most 1/B "
                         f"= {1.0 / b:.3g}")
    if copies is None:
        if not 0 < beta < 1:
            raise ValueError("beta must be in (0, 1)")
        copies = math.ceil(math.log(2.0 / beta) / math.log(2.0))
    if copies < 1:
        raise ValueError("copy count must be positive")
    gamma = contraction_factor(loss)
    exponent = k * n * n * iters / (b * b)
    g = gamma ** exponent
    if g == 0.0:
        raise ValueError("contraction underflow: calibration constants "
                         "vanish at this problem size")
    log2d = math.log(2.0 / delta)
    sigma = 4.0 * math.sqrt(2.0) * loss.lipschitz * g / (
        loss.strong_convexity * n * (1.0 - g)
        * _sqrt_gap(log2d + epsilon, log2d)
    )
    train_extra = math.log(
        loss.space.diameter * loss.strong_convexity * b
        * (1.0 + 10.0 * log2d) / loss.lipschitz
    ) / math.log(1.0 / gamma)
    train_iters = math.ceil(exponent + max(train_extra, 0.0))
    return DistConfig(
        n=n, dim=dim, sample_exponent=float(sample_exponent),
        sample_size=b, num_partitions=k, copies=int(copies), iters=int(iters),
        epsilon=float(epsilon), delta=float(delta), gamma=gamma,
        exponent=exponent, sigma=sigma, train_iters=train_iters,
    )


@dataclass
class CopyState:
    """One subsampled run: its points, partition map and optimizers."""

    features: np.ndarray   # (B, d) subsample rows
    labels: np.ndarray     # (B,)
    part: np.ndarray       # (B,) partition id of each position, fixed
    thetas: np.ndarray     # (K, d) per-partition optimizer estimates
    rng: np.random.Generator

    def average(self) -> np.ndarray:
        return self.thetas.mean(axis=0)


@dataclass(frozen=True)
class CopyReport:
    """What one copy did during a round, for budget and drift audits."""

    modified_per_partition: np.ndarray   # (K,) changed position counts
    touched: tuple                       # partition ids that reran descent
    iterations: int                      # per touched partition
    gradient_evaluations: int


@dataclass(frozen=True)
class UpdateReport:
    round_index: int
    total_iters: float
    copies: tuple


@dataclass
class PartitionedState:
    """Distributed chain position after round ``round_index``."""

    round_index: int
    data: Dataset
    copies: list
    theta_pub: np.ndarray
    budget: int
    noise_rng: np.random.Generator
    last_report: UpdateReport | None = None

    def snapshot(self) -> dict:
        """Portable state; subsample rows are deduplicated into a store."""
        rows = np.vstack([
            np.column_stack([c.features, c.labels]) for c in self.copies
        ])
        points, inverse = np.unique(rows, axis=0, return_inverse=True)
        b = self.copies[0].labels.size
        return {
            "format": DIST_SNAPSHOT_FORMAT,
            "round": self.round_index,
            "budget": self.budget,
            "theta_pub": [float(v) for v in self.theta_pub],
            "points": [[float(v) for v in row] for row in points],
            "copies": [
                {
                    "indices": [int(j) for j in inverse[i * b:(i + 1) * b]],
                    "part": [int(j) for j in c.part],
                    "thetas": [[float(v) for v in row] for row in c.thetas],
                    "rng": c.rng.bit_generator.state,
                }
                for i, c in enumerate(self.copies)
            ],
            "noise_rng": self.noise_rng.bit_generator.state,
        }

    @classmethod
    def restore(cls, snapshot: dict, data: Dataset) -> "PartitionedState":
        if snapshot.get("format") != DIST_SNAPSHOT_FORMAT:
            raise ValueError("unrecognized state format")
        points = np.asarray(snapshot["points"], dtype=float)
        copies = []
        for entry in snapshot["copies"]:
            rows = points[np.asarray(entry["indices"], dtype=int)]
            rng = np.random.default_rng()
            rng.bit_generator.state = entry["rng"]
            copies.append(CopyState(
                features=rows[:, :-1].copy(),
                labels=rows[:, -1].copy(),
                part=np.asarray(entry["part"], dtype=int),
                thetas=np.asarray(entry["thetas"], dtype=float),
                rng=rng,
            ))
        noise_rng = np.random.default_rng()
        noise_rng.bit_generator.state = snapshot["noise_rng"]
        return cls(
            round_index=int(snapshot["round"]),
            data=data,
            copies=copies,
            theta_pub=np.asarray(snapshot["theta_pub"], dtype=float),
            budget=int(snapshot["budget"]),
            noise_rng=noise_rng,
        )


def select_best(averages, data: Dataset, loss: LossModel) -> int:
    """Index of the average with the lowest empirical loss; ties go low."""
    values = [loss.empirical_loss(data, avg) for avg in averages]
    return int(np.argmin(values))


def dist_publish(thetas: np.ndarray, sigma: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Release the partition average plus Gaussian noise."""
    return publish(np.asarray(thetas, dtype=float).mean(axis=0), sigma, rng)


def dist_learn(data: Dataset, loss: LossModel, config: DistConfig,
               seed: int = 0) -> PartitionedState:
    """Draw the subsampled copies, optimize every partition, publish."""
    if data.size != config.n:
        raise ValueError("dataset size does not match the configuration")
    loss.check_dataset(data)
    data = Dataset(data.features.copy(), data.labels.copy(),
                   data.feature_bound, data.label_bound,
                   initial_size=data.size)
    b, k = config.sample_size, config.num_partitions
    chunk = b // k
    gd = GDConfig.for_loss(loss, config.train_iters)
    copies = []
    budget = 0
    for c in range(config.copies):
        boot = substream(seed, "bootstrap", c)
        idx = boot.integers(data.size, size=b)
        features = data.features[idx].copy()
        labels = data.labels[idx].copy()
        part = substream(seed, "partition", c).permutation(
            np.repeat(np.arange(k), chunk))
        thetas = np.zeros((k, config.dim))
        for j in range(k):
            mask = part == j
            sub = Dataset(features[mask], labels[mask],
                          data.feature_bound, data.label_bound)
            trace = pgd(loss, sub, np.zeros(config.dim), gd)
            thetas[j] = trace.theta
            budget += trace.gradient_evaluations
        copies.append(CopyState(
            features=features, labels=labels, part=part, thetas=thetas,
            rng=substream(seed, "reservoir", c),
        ))
    best = select_best([c.average() for c in copies], data, loss)
    noise_rng = substream(seed, "noise")
    theta_pub = dist_publish(copies[best].thetas, config.sigma, noise_rng)
    return PartitionedState(
        round_index=0, data=data, copies=copies, theta_pub=theta_pub,
        budget=budget, noise_rng=noise_rng, last_report=None,
    )


def reservoir_update(features: np.ndarray, labels: np.ndarray,
                     update: Update, new_data: Dataset,
                     rng: np.random.Generator):
    """Refresh one subsample after an edit; returns the changed positions.

    The subsample stays the same size. For an add, N ~ Binomial(B, 1/n_i)
    distinct positions are overwritten with the new point; for a delete,
    every position holding the deleted point is redrawn uniformly from
    the edited dataset. Positions whose value is overwritten with an
    identical value do not count as changed.
    """
    b = labels.size
    features = features.copy()
    labels = labels.copy()
    point = update.point
    if update.op == "add":
        if new_data.size < 1:
            raise ValueError("empty dataset")
        count = int(rng.binomial(b, 1.0 / new_data.size))
        if count > b:  # unreachable for a binomial; guard stays anyway
            logger.warning("overwrite count %d capped at %d", count, b)
            count = b
        pos = rng.choice(b, size=count, replace=False) if count else \
            np.empty(0, dtype=int)
        same = np.all(features[pos] == point.x, axis=1) & \
            (labels[pos] == point.y)
        changed = pos[~same]
        features[pos] = point.x
        labels[pos] = point.y
    else:
        if new_data.size < 1:
            raise ValueError("cannot redraw from an empty dataset")
        hits = np.flatnonzero(
            np.all(features == point.x, axis=1) & (labels == point.y))
        if hits.size:
            draws = rng.integers(new_data.size, size=hits.size)
            fresh_f = new_data.features[draws]
            fresh_l = new_data.labels[draws]
            same = np.all(features[hits] == fresh_f, axis=1) & \
                (labels[hits] == fresh_l)
            changed = hits[~same]
            features[hits] = fresh_f
            labels[hits] = fresh_l
        else:
            changed = np.empty(0, dtype=int)
    return features, labels, np.sort(changed)


def dist_unlearn(state: PartitionedState, update: Update, loss: LossModel,
                 config: DistConfig) -> PartitionedState:
    """Apply one edit to every copy and publish the refreshed best copy.

    Only partitions whose subsample content changed rerun descent; when
    an edit touches no position anywhere the publish still happens so
    void deletions are indistinguishable from real ones.
    """
    new_data = state.data.apply(update)
    i = state.round_index + 1
    total_iters = config.total_update_iters(i)
    k = config.num_partitions
    chunk = config.sample_size // k
    eta = GDConfig.for_loss(loss, 1).step_size
    new_copies = []
    reports = []
    budget = 0
    for copy in state.copies:
        features, labels, changed = reservoir_update(
            copy.features, copy.labels, update, new_data, copy.rng)
        per_part = np.bincount(copy.part[changed], minlength=k) \
            if changed.size else np.zeros(k, dtype=int)
        touched = np.flatnonzero(per_part)
        thetas = copy.thetas.copy()
        grads = 0
        iterations = 0
        if touched.size:
            iterations = config.partition_iters(i, int(touched.size))
            gd = GDConfig(eta, iterations)
            for j in touched:
                mask = copy.part == j
                sub = Dataset(features[mask], labels[mask],
                              new_data.feature_bound, new_data.label_bound)
                trace = pgd(loss, sub, thetas[j], gd)
                thetas[j] = trace.theta
                grads += trace.gradient_evaluations
        budget += grads
        new_copies.append(CopyState(
            features=features, labels=labels, part=copy.part,
            thetas=thetas, rng=copy.rng,
        ))
        reports.append(CopyReport(
            modified_per_partition=per_part,
            touched=tuple(int(j) for j in touched),
            iterations=iterations,
            gradient_evaluations=grads,
        ))
    best = select_best([c.average() for c in new_copies], new_data, loss)
    theta_pub = dist_publish(new_copies[best].thetas, config.sigma,
                             state.noise_rng)
    return PartitionedState(
        round_index=i,
        data=new_data,
        copies=new_copies,
        theta_pub=theta_pub,
        budget=state.budget + budget,
        noise_rng=state.noise_rng,
        last_report=UpdateReport(round_index=i, total_iters=total_iters,
                                 copies=tuple(reports)),
    )
