"""Hot inner-loop kernels, numba-compiled with pure-numpy fallbacks.

Three loops dominate runtime at any corpus size: the Viterbi trellis fill,
the edit-distance matrix fill, and the per-frame autocorrelation lag search
for pitch. Each exists in two equivalent forms:

  * ``*_numba`` — plain-loop implementation compiled with ``@njit``;
  * ``*_numpy`` — vectorized numpy implementation.

The module-level names (``viterbi_decode``, ``edit_dp``, ``nccf_peaks``)
dispatch to the numba form when it is available and to numpy otherwise.
Set ``MBNF_DISABLE_NUMBA=1`` in the environment to force the numpy path
(see ``benchmarks/bench_kernels.py`` for a timing comparison).

Both forms of each kernel use the same tie-breaking rules, so decoded paths
and edit matrices are identical; floating-point reductions may differ in the
last bits between backends (summation order), never within one backend.
"""

import os

import numpy as np


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


NUMBA_DISABLED = _env_flag("MBNF_DISABLE_NUMBA")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


# ---------------------------------------------------------------------------
# Viterbi decode over a left-to-right chain (self-loop / advance topology).
# ---------------------------------------------------------------------------

def _viterbi_decode_loops(emis, loop_lp, fwd_lp):
    # emis: (T, Q) emission log-liks for the composed transcript chain.
    # Path must start in state 0 and end in state Q-1; ties prefer self-loop.
    T, Q = emis.shape
    delta = np.full(Q, -np.inf)
    delta[0] = emis[0, 0]
    take_adv = np.zeros((T, Q), dtype=np.bool_)
    for t in range(1, T):
        for q in range(Q - 1, 0, -1):
            stay = delta[q] + loop_lp[q]
            adv = delta[q - 1] + fwd_lp[q - 1]
            if adv > stay:
                take_adv[t, q] = True
                delta[q] = emis[t, q] + adv
            else:
                delta[q] = emis[t, q] + stay
        delta[0] = emis[t, 0] + (delta[0] + loop_lp[0])
    path = np.empty(T, dtype=np.int32)
    q = Q - 1
    path[T - 1] = q
    for t in range(T - 1, 0, -1):
        if take_adv[t, q]:
            q -= 1
        path[t - 1] = q
    return path, delta[Q - 1]


def viterbi_decode_numpy(emis, loop_lp, fwd_lp):
    """Vectorized trellis fill; same tie rule (advance only if strictly better)."""
    T, Q = emis.shape
    delta = np.full(Q, -np.inf)
    delta[0] = emis[0, 0]
    take_adv = np.zeros((T, Q), dtype=np.bool_)
    for t in range(1, T):
        stay = delta + loop_lp
        adv = delta[:-1] + fwd_lp[:-1]
        better = adv > stay[1:]
        take_adv[t, 1:] = better
        stay[1:] = np.where(better, adv, stay[1:])
        delta = emis[t] + stay
    path = np.empty(T, dtype=np.int32)
    q = Q - 1
    path[T - 1] = q
    for t in range(T - 1, 0, -1):
        if take_adv[t, q]:
            q -= 1
        path[t - 1] = q
    return path, float(delta[Q - 1])


# ---------------------------------------------------------------------------
# Levenshtein cost matrix under unit costs.
# ---------------------------------------------------------------------------

def _edit_dp_loops(ref, hyp):
    n = ref.shape[0]
    m = hyp.shape[0]
    dp = np.empty((n + 1, m + 1), dtype=np.int32)
    for j in range(m + 1):
        dp[0, j] = j
    for i in range(1, n + 1):
        dp[i, 0] = i
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            best = dp[i - 1, j - 1] + cost
            if dp[i - 1, j] + 1 < best:
                best = dp[i - 1, j] + 1
            if dp[i, j - 1] + 1 < best:
                best = dp[i, j - 1] + 1
            dp[i, j] = best
    return dp


def edit_dp_numpy(ref, hyp):
    """Row-wise fill; the in-row insertion recurrence becomes a prefix min."""
    n = ref.shape[0]
    m = hyp.shape[0]
    dp = np.empty((n + 1, m + 1), dtype=np.int32)
    col = np.arange(m + 1, dtype=np.int32)
    dp[0] = col
    for i in range(1, n + 1):
        prev = dp[i - 1]
        cost = (ref[i - 1] != hyp).astype(np.int32)
        tmp = np.empty(m + 1, dtype=np.int32)
        tmp[0] = i
        tmp[1:] = np.minimum(prev[1:] + 1, prev[:-1] + cost)
        # dp[i, j] = min_{k<=j} tmp[k] + (j - k)
        dp[i] = np.minimum.accumulate(tmp - col) + col
    return dp


# ---------------------------------------------------------------------------
# Normalized autocorrelation peak per frame (pitch lag search).
# ---------------------------------------------------------------------------

# A periodic signal correlates almost equally well at every multiple of its
# period (integer-lag rounding even lets a multiple score above the
# fundamental), so the search ranks lags by r - NCCF_OCTAVE_COST * log2(lag).
# One octave costs 0.01: comfortably above the rounding-induced gaps between
# period multiples, far below a genuine peak difference. Returned values are
# the raw r at the chosen lag.
NCCF_OCTAVE_COST = 0.01


def _nccf_peaks_loops(frames, lag_min, lag_max):
    F, L = frames.shape
    csq = np.empty((F, L + 1))
    for f in range(F):
        acc = 0.0
        csq[f, 0] = 0.0
        for t in range(L):
            acc += frames[f, t] * frames[f, t]
            csq[f, t + 1] = acc
    best_lag = np.zeros(F, dtype=np.int32)
    best_val = np.full(F, -2.0)
    best_score = np.full(F, -2.0)
    for f in range(F):
        for k in range(lag_min, lag_max + 1):
            n = L - k
            num = 0.0
            for t in range(n):
                num += frames[f, t] * frames[f, t + k]
            denom = csq[f, n] * (csq[f, L] - csq[f, k])
            if denom < 1e-24:
                r = 0.0
            else:
                r = num / np.sqrt(denom)
            score = r - NCCF_OCTAVE_COST * np.log2(float(k))
            if score > best_score[f]:
                best_score[f] = score
                best_val[f] = r
                best_lag[f] = k
    return best_lag, best_val


def nccf_peaks_numpy(frames, lag_min, lag_max):
    """Lag-major vectorization over frames; same penalized-score tie rule."""
    F, L = frames.shape
    csq = np.concatenate(
        [np.zeros((F, 1)), np.cumsum(frames * frames, axis=1)], axis=1
    )
    best_lag = np.zeros(F, dtype=np.int32)
    best_val = np.full(F, -2.0)
    best_score = np.full(F, -2.0)
    for k in range(lag_min, lag_max + 1):
        n = L - k
        num = np.einsum("ft,ft->f", frames[:, :n], frames[:, k:])
        denom = csq[:, n] * (csq[:, L] - csq[:, k])
        r = np.where(denom < 1e-24, 0.0, num / np.sqrt(np.maximum(denom, 1e-300)))
        score = r - NCCF_OCTAVE_COST * np.log2(float(k))
        better = score > best_score
        best_score = np.where(better, score, best_score)
        best_val = np.where(better, r, best_val)
        best_lag = np.where(better, np.int32(k), best_lag)
    return best_lag, best_val


if HAVE_NUMBA:
    viterbi_decode_numba = njit(cache=True)(_viterbi_decode_loops)
    edit_dp_numba = njit(cache=True)(_edit_dp_loops)
    nccf_peaks_numba = njit(cache=True)(_nccf_peaks_loops)
else:  # pragma: no cover
    viterbi_decode_numba = None
    edit_dp_numba = None
    nccf_peaks_numba = None

if USING_NUMBA:
    viterbi_decode = viterbi_decode_numba
    edit_dp = edit_dp_numba
    nccf_peaks = nccf_peaks_numba
else:
    viterbi_decode = viterbi_decode_numpy
    edit_dp = edit_dp_numpy
    nccf_peaks = nccf_peaks_numpy
