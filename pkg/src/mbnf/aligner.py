"""Flat-start monophone GMM-HMM training and Viterbi forced alignment.

One left-to-right HMM per phone (no skips), states numbered globally as
phone_index * states_per_phone + state. Training is Viterbi-EM over hard
state assignments: align everything, re-estimate emissions and transitions
from counts, repeat. The total Viterbi log likelihood is non-decreasing
across iterations because every re-estimation step maximizes its term of the
path likelihood within the (variance- and transition-floored) family.
"""

import logging
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .errors import DataError, InfeasibleAlignmentError, MbnfError
from .gmm import VAR_FLOOR, DiagGmm, em_steps, frame_logliks, kmeans_pp_init
from .kernels import viterbi_decode
from .util import substream

logger = logging.getLogger(__name__)

TRANSITION_FLOOR = 1e-4
DEFAULT_NUM_COMP = 4


def _frames_of(feat):
    """Raw (T, D) array from a FeatureMatrix-like object or plain ndarray."""
    if isinstance(feat, np.ndarray):
        return np.asarray(feat, dtype=np.float64)
    return feat.data


@dataclass
class MonoHmmSet:
    """Per-language monophone HMMs: one emission GMM and one transition pair
    (self-loop, forward) per global state."""

    phoneset: object
    emissions: list  # DiagGmm per global state
    loop_logp: np.ndarray
    fwd_logp: np.ndarray

    def __post_init__(self):
        n = self.phoneset.num_states
        if len(self.emissions) != n or self.loop_logp.shape != (n,) or self.fwd_logp.shape != (n,):
            raise MbnfError("MonoHmmSet parameter shapes inconsistent with phoneset")
        probs = np.exp(self.loop_logp) + np.exp(self.fwd_logp)
        if np.any(np.abs(probs - 1.0) > 1e-9):
            raise MbnfError("per-state transition probabilities must sum to 1")

    @property
    def lang(self):
        return self.phoneset.lang


@dataclass
class AlignmentMatrix:
    """Per-frame global state indices for one utterance of one language."""

    utt_id: str
    lang_code: str
    states: np.ndarray  # (T,) int32

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int32)
        if self.states.ndim != 1:
            raise DataError("alignment must be a 1-D state vector")

    @property
    def num_frames(self):
        return self.states.shape[0]


def _transcript_states(phoneset, phone_seq):
    """Global state index chain for a transcript (phones in order, no skips)."""
    if not phone_seq:
        raise DataError("empty phone sequence")
    states = []
    for entry in phone_seq:
        phone = entry[0] if isinstance(entry, (tuple, list)) else entry
        if phone not in phoneset.phones:
            raise DataError(f"phone {phone!r} not in phoneset for {phoneset.lang.code}")
        base = phoneset.phones.index(phone) * phoneset.states_per_phone
        states.extend(range(base, base + phoneset.states_per_phone))
    return np.asarray(states, dtype=np.int64)


def _transition_logs(loop_prob):
    loop = np.clip(loop_prob, TRANSITION_FLOOR, 1.0 - TRANSITION_FLOOR)
    return np.log(loop), np.log(1.0 - loop)


def _fit_state_gmm(X, num_comp, rng, prev=None):
    """State emission estimate from hard-assigned frames."""
    if num_comp == 1:
        mean = X.mean(axis=0, keepdims=True)
        var = np.maximum(X.var(axis=0, keepdims=True), VAR_FLOOR)
        return DiagGmm(weights=np.ones(1), means=mean, vars=var)
    if prev is None:
        if X.shape[0] < num_comp:
            mean = X.mean(axis=0, keepdims=True)
            var = np.maximum(X.var(axis=0, keepdims=True), VAR_FLOOR)
            return DiagGmm(
                weights=np.full(num_comp, 1.0 / num_comp),
                means=np.tile(mean, (num_comp, 1))
                + 0.01 * np.arange(num_comp)[:, None] * np.sqrt(var),
                vars=np.tile(var, (num_comp, 1)),
            )
        centers = kmeans_pp_init(X, num_comp, rng)
        var = np.maximum(X.var(axis=0), VAR_FLOOR)
        prev = DiagGmm(
            weights=np.full(num_comp, 1.0 / num_comp),
            means=centers,
            vars=np.tile(var, (num_comp, 1)),
        )
    fitted, _ = em_steps(prev, X, iters=2)
    return fitted


def flat_start(records, feats, phoneset, num_comp=DEFAULT_NUM_COMP, seed=0):
    """Initialize HMMs by uniform frame-to-state segmentation.

    Each usable utterance's frames are split evenly across its transcript
    states; utterances with more states than frames are skipped with a
    warning. Transitions start at self-loop 0.75 / forward 0.25. States that
    received no frames fall back to global statistics.
    """
    n_states = phoneset.num_states
    buckets = [[] for _ in range(n_states)]
    usable = 0
    all_frames = []
    for rec in records:
        chain = _transcript_states(phoneset, rec.phone_seq)
        X = _frames_of(feats[rec.utt_id])
        T = X.shape[0]
        if T < chain.shape[0]:
            logger.warning(
                "flat_start: skipping %s (%d frames < %d states)",
                rec.utt_id,
                T,
                chain.shape[0],
            )
            continue
        usable += 1
        all_frames.append(X)
        edges = (np.arange(chain.shape[0] + 1) * T) // chain.shape[0]
        for j, state in enumerate(chain):
            buckets[state].append(X[edges[j] : edges[j + 1]])
    if usable == 0:
        raise DataError(f"flat_start: no usable utterances for {phoneset.lang.code}")
    pooled = np.vstack(all_frames)
    global_mean = pooled.mean(axis=0, keepdims=True)
    global_var = np.maximum(pooled.var(axis=0, keepdims=True), VAR_FLOOR)
    emissions = []
    for s in range(n_states):
        if buckets[s]:
            X = np.vstack(buckets[s])
            rng = substream(seed, 17, s)
            emissions.append(_fit_state_gmm(X, num_comp, rng))
        else:
            if num_comp == 1:
                emissions.append(DiagGmm(np.ones(1), global_mean, global_var))
            else:
                emissions.append(
                    DiagGmm(
                        weights=np.full(num_comp, 1.0 / num_comp),
                        means=np.tile(global_mean, (num_comp, 1))
                        + 0.01 * np.arange(num_comp)[:, None] * np.sqrt(global_var),
                        vars=np.tile(global_var, (num_comp, 1)),
                    )
                )
    loop, fwd = _transition_logs(np.full(n_states, 0.75))
    return MonoHmmSet(phoneset=phoneset, emissions=emissions, loop_logp=loop, fwd_logp=fwd)


def viterbi_align(hmms, feats, phone_seq):
    """Max-likelihood monotone state path for one utterance.

    Returns (AlignmentMatrix, path log likelihood). The first frame sits in
    the first transcript state and the last frame in the last one.
    """
    chain = _transcript_states(hmms.phoneset, phone_seq)
    X = _frames_of(feats)
    T, Q = X.shape[0], chain.shape[0]
    if T < Q:
        raise InfeasibleAlignmentError(
            f"{getattr(feats, 'utt_id', '?')}: {T} frames < {Q} transcript states"
        )
    # Emission matrix over the transcript chain, computed once per distinct state.
    state_ll = {}
    for s in np.unique(chain):
        state_ll[int(s)] = frame_logliks(hmms.emissions[int(s)], X)
    emis = np.column_stack([state_ll[int(s)] for s in chain])
    path, loglik = viterbi_decode(
        np.ascontiguousarray(emis),
        np.ascontiguousarray(hmms.loop_logp[chain]),
        np.ascontiguousarray(hmms.fwd_logp[chain]),
    )
    align = AlignmentMatrix(
        utt_id=getattr(feats, "utt_id", ""),
        lang_code=hmms.phoneset.lang.code,
        states=chain[path].astype(np.int32),
    )
    return align, float(loglik)


def _reestimate(hmms, records, feats, paths, num_comp, seed, iteration):
    pset = hmms.phoneset
    n_states = pset.num_states
    frame_buckets = [[] for _ in range(n_states)]
    loop_counts = np.zeros(n_states)
    fwd_counts = np.zeros(n_states)
    for rec in records:
        path = paths.get(rec.utt_id)
        if path is None:
            continue
        X = _frames_of(feats[rec.utt_id])
        states = path
        for s in range(n_states):
            mask = states == s
            if np.any(mask):
                frame_buckets[s].append(X[mask])
        same = states[1:] == states[:-1]
        np.add.at(loop_counts, states[:-1][same], 1)
        np.add.at(fwd_counts, states[:-1][~same], 1)
    emissions = []
    for s in range(n_states):
        if frame_buckets[s]:
            X = np.vstack(frame_buckets[s])
            rng = substream(seed, 19, iteration, s)
            emissions.append(_fit_state_gmm(X, num_comp, rng, prev=hmms.emissions[s]))
        else:
            emissions.append(hmms.emissions[s])
    total = loop_counts + fwd_counts
    loop_prob = np.where(total > 0, loop_counts / np.maximum(total, 1), 0.75)
    loop, fwd = _transition_logs(loop_prob)
    return MonoHmmSet(phoneset=pset, emissions=emissions, loop_logp=loop, fwd_logp=fwd)


def train_monophone(records, feats, phoneset, iters=8, num_comp=DEFAULT_NUM_COMP, seed=0):
    """Viterbi-EM monophone training.

    Returns (MonoHmmSet, per-iteration total Viterbi log likelihood). With
    iters=0 the flat-start model is returned unchanged and the trace is
    empty.
    """
    feats = {
        utt: SimpleNamespace(data=np.asarray(f, dtype=np.float64), utt_id=utt)
        if isinstance(f, np.ndarray)
        else f
        for utt, f in feats.items()
    }
    hmms = flat_start(records, feats, phoneset, num_comp=num_comp, seed=seed)
    trace = []
    for it in range(iters):
        total = 0.0
        paths = {}
        aligned = 0
        for rec in records:
            try:
                align, ll = viterbi_align(hmms, feats[rec.utt_id], rec.phone_seq)
            except InfeasibleAlignmentError:
                continue
            paths[rec.utt_id] = align.states
            total += ll
            aligned += 1
        if aligned == 0:
            raise DataError(f"train_monophone: no alignable utterances for {phoneset.lang.code}")
        trace.append(total)
        hmms = _reestimate(hmms, records, feats, paths, num_comp, seed, it)
    return hmms, trace


def alignments_to_targets(aligns, phoneset):
    """Block-local integer target streams per utterance.

    Global state numbering within one language already is the block-local
    numbering, so this is an identity re-index plus a range check.
    """
    out = {}
    block = phoneset.num_states
    for align in aligns:
        states = align.states
        if states.size and (states.min() < 0 or states.max() >= block):
            raise MbnfError(
                f"{align.utt_id}: alignment state outside block of size {block} "
                "(invariant breach)"
            )
        out[align.utt_id] = states.astype(np.int64)
    return out


def frame_accuracy(align, gold_states):
    """Fraction of frames whose aligned state matches the gold state."""
    n = min(align.states.shape[0], gold_states.shape[0])
    if n == 0:
        return 0.0
    return float(np.mean(align.states[:n] == gold_states[:n]))
