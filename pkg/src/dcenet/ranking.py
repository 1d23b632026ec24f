"""Bivariate-Gaussian ranking of sampled trajectories and displacement metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-6
RHO_LIMIT = 1.0 - 1e-6


@dataclass(frozen=True)
class BivariateGaussian:
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float


@dataclass
class PredictionSet:
    """``trajectories`` is ``N x T' x 2``; ``most_likely_index`` is the argmax of ``scores``."""

    trajectories: np.ndarray
    scores: np.ndarray
    most_likely_index: int

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def most_likely(self) -> np.ndarray:
        return self.trajectories[self.most_likely_index]


def fit_step_gaussian(points) -> BivariateGaussian:
    """Sample moments (``N - 1`` denominator) of an ``N x 2`` cloud, with floors."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError(f"need at least 2 points of shape (N, 2), got {pts.shape}")
    mu = pts.mean(axis=0)
    d = pts - mu
    n1 = len(pts) - 1
    sx = np.sqrt(np.sum(d[:, 0] ** 2) / n1)
    sy = np.sqrt(np.sum(d[:, 1] ** 2) / n1)
    if sx > 0 and sy > 0:
        rho = np.sum(d[:, 0] * d[:, 1]) / n1 / (sx * sy)
    else:
        rho = 0.0
    return BivariateGaussian(
        float(mu[0]),
        float(mu[1]),
        float(max(sx, SIGMA_FLOOR)),
        float(max(sy, SIGMA_FLOOR)),
        float(np.clip(rho, -RHO_LIMIT, RHO_LIMIT)),
    )


def pdf(g: BivariateGaussian, p) -> np.ndarray:
    """Bivariate normal density at ``p`` (a point or an ``(..., 2)`` array)."""
    p = np.asarray(p, dtype=np.float64)
    zx = (p[..., 0] - g.mu_x) / g.sigma_x
    zy = (p[..., 1] - g.mu_y) / g.sigma_y
    one_m = 1.0 - g.rho * g.rho
    z = zx * zx + zy * zy - 2.0 * g.rho * zx * zy
    return np.exp(-z / (2.0 * one_m)) / (2.0 * np.pi * g.sigma_x * g.sigma_y * np.sqrt(one_m))


def score_trajectories(trajectories) -> np.ndarray:
    """Sum over steps of each trajectory's density under that step's fitted Gaussian."""
    trajs = np.asarray(trajectories, dtype=np.float64)
    if trajs.ndim != 3 or trajs.shape[-1] != 2:
        raise ValueError(f"expected N x T x 2 trajectories, got {trajs.shape}")
    scores = np.zeros(len(trajs))
    for t in range(trajs.shape[1]):
        g = fit_step_gaussian(trajs[:, t])
        scores += pdf(g, trajs[:, t])
    return scores


def score_and_select(trajectories) -> PredictionSet:
    trajs = np.asarray(trajectories, dtype=np.float64)
    scores = score_trajectories(trajs)
    # np.argmax returns the first maximum, so ties go to the lowest index
    return PredictionSet(trajs, scores, int(np.argmax(scores)))


def ade(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return float(np.mean(np.linalg.norm(pred - truth, axis=-1)))


def fde(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return float(np.linalg.norm(pred[-1] - truth[-1]))


def top_n(pset: PredictionSet, truth) -> tuple[float, float]:
    """ADE of the best (minimum-ADE) sample and the FDE of that same sample."""
    ades = [ade(tr, truth) for tr in pset.trajectories]
    best = int(np.argmin(ades))
    return ades[best], fde(pset.trajectories[best], truth)
