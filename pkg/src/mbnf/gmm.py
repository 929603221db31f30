"""Diagonal-covariance GMM estimation via EM, plus the scoring helpers the
aligner and i-vector code build on."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DataError
from .util import substream

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-3
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class DiagGmm:
    """Mixture weights plus per-component diagonal Gaussians."""

    weights: np.ndarray  # (C,)
    means: np.ndarray  # (C, D)
    vars: np.ndarray  # (C, D)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.vars = np.asarray(self.vars, dtype=np.float64)
        if self.means.shape != self.vars.shape or self.weights.shape[0] != self.means.shape[0]:
            raise ConfigError("inconsistent GMM parameter shapes")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ConfigError("GMM weights must be a simplex vector")
        if np.any(self.vars <= 0):
            raise ConfigError("GMM variances must be > 0")

    @property
    def num_comp(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def copy(self):
        return DiagGmm(self.weights.copy(), self.means.copy(), self.vars.copy())


def _as_matrix(frames):
    """Stack FeatureMatrix list / array list / single array into (N, D)."""
    if isinstance(frames, np.ndarray):
        return frames
    rows = [np.asarray(f) if isinstance(f, np.ndarray) else f.data for f in frames]
    if not rows:
        raise DataError("no frames given")
    return np.vstack(rows)


def component_logliks(gmm, X):
    """(T, C) log densities log N(x_t; mu_c, diag var_c)."""
    X = np.atleast_2d(X)
    if X.shape[1] != gmm.dim:
        raise DataError(f"feature dim {X.shape[1]} != GMM dim {gmm.dim}")
    inv_var = 1.0 / gmm.vars
    const = -0.5 * (gmm.dim * LOG_2PI + np.log(gmm.vars).sum(axis=1))
    quad = (
        (X**2) @ inv_var.T
        - 2.0 * (X @ (gmm.means * inv_var).T)
        + (gmm.means**2 * inv_var).sum(axis=1)
    )
    return const[None, :] - 0.5 * quad


def frame_logliks(gmm, X):
    """(T,) log sum_c w_c N(x_t; mu_c, var_c), via log-sum-exp."""
    with np.errstate(divide="ignore"):
        logw = np.where(gmm.weights > 0, np.log(np.maximum(gmm.weights, 1e-300)), -np.inf)
    return logsumexp(component_logliks(gmm, X) + logw[None, :], axis=1)


def gmm_loglik(gmm, x):
    """Log likelihood of a single frame."""
    return float(frame_logliks(gmm, np.atleast_2d(x))[0])


def responsibilities(gmm, X):
    """(T, C) posterior component probabilities; each row sums to 1."""
    with np.errstate(divide="ignore"):
        logw = np.where(gmm.weights > 0, np.log(np.maximum(gmm.weights, 1e-300)), -np.inf)
    log_joint = component_logliks(gmm, X) + logw[None, :]
    log_norm = logsumexp(log_joint, axis=1, keepdims=True)
    return np.exp(log_joint - log_norm)


def kmeans_pp_init(X, num_comp, rng):
    """Seeded k-means++ center selection (no Lloyd iterations)."""
    n = X.shape[0]
    centers = np.empty((num_comp, X.shape[1]))
    centers[0] = X[rng.integers(0, n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, num_comp):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(0, n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _init_gmm(X, num_comp, rng, var_floor):
    sub_size = min(X.shape[0], max(2000, 100 * num_comp))
    sub = X[rng.choice(X.shape[0], size=sub_size, replace=False)] if sub_size < X.shape[0] else X
    centers = kmeans_pp_init(sub, num_comp, rng)
    global_var = np.maximum(X.var(axis=0), var_floor)
    return DiagGmm(
        weights=np.full(num_comp, 1.0 / num_comp),
        means=centers,
        vars=np.tile(global_var, (num_comp, 1)),
    )


def em_steps(gmm, X, iters, var_floor=VAR_FLOOR):
    """Run EM from the given parameters; returns (new gmm, per-iter loglik).

    loglik[i] is the total data log likelihood under the parameters entering
    iteration i, so the sequence is non-decreasing up to float rounding.
    Starved components (occupancy < 1e-8) are re-seeded by splitting the
    highest-occupancy component.
    """
    gmm = gmm.copy()
    trace = []
    n = X.shape[0]
    for _ in range(iters):
        gamma = responsibilities(gmm, X)
        trace.append(float(frame_logliks(gmm, X).sum()))
        occ = gamma.sum(axis=0)
        starved = np.flatnonzero(occ < 1e-8)
        if starved.size:
            top = int(np.argmax(occ))
            for c in starved:
                logger.warning(
                    "GMM component %d starved (occupancy %.3g); re-seeding from "
                    "component %d",
                    c,
                    occ[c],
                    top,
                )
                gmm.means[c] = gmm.means[top] + 0.1 * np.sqrt(gmm.vars[top])
                gmm.vars[c] = gmm.vars[top]
                gmm.weights[c] = gmm.weights[top] / 2.0
                gmm.weights[top] /= 2.0
            gmm.weights = gmm.weights / gmm.weights.sum()
            gamma = responsibilities(gmm, X)
            occ = gamma.sum(axis=0)
        occ = np.maximum(occ, 1e-12)
        gmm.weights = occ / n
        gmm.means = (gamma.T @ X) / occ[:, None]
        ex2 = (gamma.T @ (X**2)) / occ[:, None]
        gmm.vars = np.maximum(ex2 - gmm.means**2, var_floor)
    return gmm, trace


def em_fit_gmm(frames, num_comp, iters=10, seed=0, var_floor=VAR_FLOOR):
    """Fit a diagonal GMM: seeded k-means++ init, then ``iters`` EM passes.

    Returns (gmm, loglik trace). With iters=0 the initialization is returned
    unchanged and the trace is empty.
    """
    X = _as_matrix(frames)
    if X.size == 0 or X.shape[0] < num_comp:
        raise DataError(
            f"need at least {num_comp} frames to fit {num_comp} components, "
            f"got {X.shape[0]}"
        )
    rng = substream(seed, 11)
    gmm = _init_gmm(X, num_comp, rng, var_floor)
    return em_steps(gmm, X, iters, var_floor)
