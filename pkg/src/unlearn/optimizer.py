"""Projected gradient descent on empirical losses.

For an m-strongly-convex, M-smooth objective the step size 2/(M+m)
contracts the distance to the constrained minimizer by
gamma = (M-m)/(M+m) per iteration. For merely convex M-smooth
objectives the step size 1/M gives the usual M |theta_0 - theta*|^2 / (2T)
bound on the objective gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .losses import LossModel

__all__ = ["GDConfig", "GDTrace", "pgd", "contraction_factor"]

REGIMES = ("strongly_convex_smooth", "convex_smooth")


@dataclass(frozen=True)
class GDConfig:
    """Step size, iteration count and the regime that justifies them."""

    step_size: float
    iterations: int
    regime: str = "strongly_convex_smooth"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.iterations < 0:
            raise ValueError("iteration count must be nonnegative")

    @classmethod
    def for_loss(cls, loss: LossModel, iterations: int,
                 regime: str = "strongly_convex_smooth") -> "GDConfig":
        """Pick the canonical step size for ``loss`` in ``regime``."""
        if regime == "strongly_convex_smooth":
            if loss.strong_convexity <= 0:
                raise ValueError("requires strong convexity")
            eta = 2.0 / (loss.smoothness + loss.strong_convexity)
        else:
            eta = 1.0 / loss.smoothness
        return cls(step_size=eta, iterations=iterations, regime=regime)


@dataclass(frozen=True)
class GDTrace:
    """Final iterate plus the point-gradient work it cost.

    ``gradient_evaluations`` counts one unit per data point per
    iteration: T iterations on n points cost T * n.
    """

    theta: np.ndarray
    gradient_evaluations: int


def pgd(loss: LossModel, data: Dataset, theta0, config: GDConfig) -> GDTrace:
    """Run projected gradient descent and return the final iterate.

    Deterministic: same inputs, same float operations, same output.
    The start point may lie outside the ball (warm starts from noisy
    published parameters do); every iterate from the first step on is
    feasible, and the contraction guarantee is unaffected because the
    shipped losses satisfy their regularity bounds on all of R^d.
    """
    if data.size == 0:
        raise ValueError("empty dataset")
    theta = np.asarray(theta0, dtype=float).copy()
    if theta.shape != (data.dim,):
        raise ValueError("start point has wrong dimension")
    space = loss.space
    for _ in range(config.iterations):
        grad = loss.empirical_gradient(data, theta)
        theta = space.project(theta - config.step_size * grad)
    return GDTrace(theta=theta, gradient_evaluations=config.iterations * data.size)


def contraction_factor(loss: LossModel) -> float:
    """Per-iteration contraction gamma = (M-m)/(M+m); needs m > 0."""
    m, big = loss.strong_convexity, loss.smoothness
    if m <= 0:
        raise ValueError("requires strong convexity")
    if big < m:
        raise ValueError("smoothness below strong convexity")
    return (big - m) / (big + m)
