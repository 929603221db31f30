"""Total-variability model: Baum-Welch statistics, T-matrix EM, i-vector
extraction.

The model is f_u = N_u T w + eps with w ~ N(0, I) and eps ~ N(0, N_u Sigma),
where f_u are the mean-centered first-order statistics of utterance u under
the UBM. The i-vector is the posterior mean w* = L^-1 T' Sigma^-1 f with
L = I + sum_c N_c T_c' Sigma_c^-1 T_c.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .gmm import DiagGmm, responsibilities
from .util import substream


@dataclass
class BwStats:
    """Zeroth/first-order sufficient statistics of one utterance."""

    n: np.ndarray  # (C,) soft occupancies
    f: np.ndarray  # (C, D) mean-centered first-order stats
    total_frames: int

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=np.float64)
        self.f = np.asarray(self.f, dtype=np.float64)
        if np.any(self.n < 0):
            raise DataError("occupancies must be >= 0")
        if self.total_frames > 0 and abs(self.n.sum() - self.total_frames) > 1e-6:
            raise DataError("occupancies must sum to the frame count")

    def __add__(self, other):
        return BwStats(
            self.n + other.n, self.f + other.f, self.total_frames + other.total_frames
        )


@dataclass
class TvModel:
    """UBM plus total-variability matrix T of shape (num_comp*feat_dim, ivec_dim)."""

    ubm: DiagGmm
    T: np.ndarray
    ivec_dim: int

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.float64)
        want = (self.ubm.num_comp * self.ubm.dim, self.ivec_dim)
        if self.T.shape != want:
            raise ConfigError(f"T must have shape {want}, got {self.T.shape}")
        if not np.all(np.isfinite(self.T)):
            raise ConfigError("T contains NaN/Inf")
        if self.ivec_dim < 1:
            raise ConfigError("ivec_dim must be >= 1")

    @property
    def T3(self):
        return self.T.reshape(self.ubm.num_comp, self.ubm.dim, self.ivec_dim)


def accumulate_bw_stats(ubm, feats):
    """Soft-count statistics of one utterance under the UBM."""
    X = np.asarray(feats, dtype=np.float64) if isinstance(feats, np.ndarray) else feats.data
    if X.shape[0] == 0:
        return BwStats(
            n=np.zeros(ubm.num_comp),
            f=np.zeros((ubm.num_comp, ubm.dim)),
            total_frames=0,
        )
    if X.shape[1] != ubm.dim:
        raise DataError(f"feature dim {X.shape[1]} != UBM dim {ubm.dim}")
    gamma = responsibilities(ubm, X)
    n = gamma.sum(axis=0)
    f = gamma.T @ X - n[:, None] * ubm.means
    return BwStats(n=n, f=f, total_frames=X.shape[0])


def _posterior(model, stats, precomp=None):
    """Posterior (mean, L) of the latent vector for one utterance."""
    K = model.ivec_dim
    T3 = model.T3
    inv_var = 1.0 / model.ubm.vars  # (C, D)
    if precomp is None:
        precomp = np.einsum("cdk,cd,cdl->ckl", T3, inv_var, T3)
    L = np.eye(K) + np.einsum("c,ckl->kl", stats.n, precomp)
    b = np.einsum("cdk,cd->k", T3, stats.f * inv_var)
    w = np.linalg.solve(L, b)
    return w, L, b


def extract_ivector(model, feats):
    """Posterior-mean i-vector of one utterance (zero stats give zeros)."""
    stats = feats if isinstance(feats, BwStats) else accumulate_bw_stats(model.ubm, feats)
    w, _, _ = _posterior(model, stats)
    return w


def train_tmatrix(ubm, stats_list, ivec_dim, iters=5, seed=0):
    """EM for the total-variability matrix given the UBM and per-utterance stats.

    T starts as seeded Gaussian entries (scale 0.1). Returns (TvModel,
    objective trace); trace[i] is the T-dependent part of the marginal log
    likelihood under the parameters entering iteration i, so the sequence is
    non-decreasing up to float rounding. With iters=0 the seeded
    initialization is returned and the trace is empty.
    """
    if len(stats_list) < 2:
        raise DataError("T-matrix training needs stats from at least 2 utterances")
    C, D = ubm.num_comp, ubm.dim
    if ivec_dim >= C * D:
        raise ConfigError(
            f"ivec_dim {ivec_dim} must be < num_comp*feat_dim = {C * D}"
        )
    rng = substream(seed, 13)
    T = 0.1 * rng.standard_normal((C * D, ivec_dim))
    model = TvModel(ubm=ubm, T=T, ivec_dim=ivec_dim)
    trace = []
    inv_var = 1.0 / ubm.vars
    for _ in range(iters):
        T3 = model.T3
        precomp = np.einsum("cdk,cd,cdl->ckl", T3, inv_var, T3)
        obj = 0.0
        # E-step: posterior moments per utterance.
        acc_a = np.zeros((C, ivec_dim, ivec_dim))
        acc_c = np.zeros((C, D, ivec_dim))
        for stats in stats_list:
            w, L, b = _posterior(model, stats, precomp)
            cov = np.linalg.inv(L)
            eww = cov + np.outer(w, w)
            sign, logdet = np.linalg.slogdet(L)
            obj += -0.5 * sign * logdet + 0.5 * float(b @ w)
            acc_a += stats.n[:, None, None] * eww[None, :, :]
            acc_c += np.einsum("cd,k->cdk", stats.f, w)
        trace.append(float(obj))
        # M-step: per-component solve.
        newT3 = model.T3.copy()
        for c in range(C):
            if np.trace(acc_a[c]) > 1e-12:
                newT3[c] = np.linalg.solve(acc_a[c], acc_c[c].T).T
        model = TvModel(ubm=ubm, T=newT3.reshape(C * D, ivec_dim), ivec_dim=ivec_dim)
    return model, trace
