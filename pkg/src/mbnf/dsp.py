"""Acoustic front-end: framing, MFCC, regression deltas, pitch, speed perturbation.

Analysis grid is 25 ms windows every 10 ms. Two MFCC configurations are used
downstream: a 13-coefficient/23-filter setup (extended to 39 dims with
deltas) for alignment, and a 40-coefficient/40-filter "high resolution"
setup without liftering for the feature-extraction network.

Everything here is a pure function of (input, config): no dithering, log
energies floored at a small epsilon, so outputs are bit-reproducible and
never contain NaN/Inf for finite input.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.fft
import scipy.io.wavfile

from .errors import ConfigError, DataError, TooShortError
from .kernels import nccf_peaks

# Feature kinds with a fixed dimension; remaining kinds are free-dimensional.
KIND_DIMS = {"mfcc13": 13, "mfcc13dd": 39, "mfcc40": 40, "pitch3": 3}
FREE_KINDS = {"synth", "ivec", "bnf", "combined"}


@dataclass
class AudioSegment:
    """Mono PCM samples in [-1, 1] with sample rate and utterance identity."""

    samples: np.ndarray
    sample_rate_hz: int
    utt_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"{self.utt_id}: samples must be 1-D")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"{self.utt_id}: samples contain NaN/Inf")
        if self.sample_rate_hz <= 0:
            raise DataError(f"{self.utt_id}: sample rate must be > 0")


@dataclass
class FeatureMatrix:
    """frames x dims matrix with a kind tag and frame-shift metadata."""

    utt_id: str
    kind: str
    data: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError(f"{self.utt_id}/{self.kind}: data must be 2-D")
        if not np.all(np.isfinite(self.data)):
            raise DataError(f"{self.utt_id}/{self.kind}: data contains NaN/Inf")
        if self.kind in KIND_DIMS:
            want = KIND_DIMS[self.kind]
            if self.data.shape[1] != want:
                raise DataError(
                    f"{self.utt_id}: kind {self.kind} requires dim {want}, "
                    f"got {self.data.shape[1]}"
                )
        elif self.kind not in FREE_KINDS:
            raise DataError(f"{self.utt_id}: unknown feature kind {self.kind!r}")

    @property
    def num_frames(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]


@dataclass
class MfccConfig:
    """MFCC analysis settings.

    Pre-emphasis is applied inside each frame (first sample scaled by
    1-coeff); the power spectrum comes from a length-``fft_size`` real DFT of
    the zero-padded Hamming-windowed frame; mel filters are triangles with
    continuous bin weights from 0 Hz to Nyquist; the DCT-II is orthonormal.
    """

    sample_rate_hz: int = 16000
    frame_len_ms: float = 25.0
    frame_shift_ms: float = 10.0
    num_mel_filters: int = 23
    num_ceps: int = 13
    preemphasis: float = 0.97
    log_floor: float = 1e-10
    lifter: int = 22  # 0 disables liftering
    fft_size: int = 512

    def __post_init__(self):
        if self.num_ceps > self.num_mel_filters:
            raise ConfigError("num_ceps must be <= num_mel_filters")
        if self.frame_shift_ms > self.frame_len_ms:
            raise ConfigError("frame_shift_ms must be <= frame_len_ms")
        if self.frame_len_samples > self.fft_size:
            raise ConfigError("fft_size must cover one frame")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be > 0")

    @property
    def frame_len_samples(self):
        return int(round(self.frame_len_ms * self.sample_rate_hz / 1000.0))

    @property
    def frame_shift_samples(self):
        return int(round(self.frame_shift_ms * self.sample_rate_hz / 1000.0))

    @classmethod
    def mfcc13(cls, **kw):
        return cls(num_mel_filters=23, num_ceps=13, lifter=22, **kw)

    @classmethod
    def mfcc40(cls, **kw):
        """High-resolution variant: 40 filters, 40 cepstra, no liftering."""
        return cls(num_mel_filters=40, num_ceps=40, lifter=0, **kw)


def frame_signal(audio, cfg):
    """Slice a signal into overlapping frames; tail samples are dropped.

    num_frames = 1 + floor((N - L) / S) for N samples, frame length L and
    shift S in samples.
    """
    x = audio.samples
    L = cfg.frame_len_samples
    S = cfg.frame_shift_samples
    if x.shape[0] < L:
        raise TooShortError(
            f"{audio.utt_id}: {x.shape[0]} samples < one {L}-sample frame"
        )
    num_frames = 1 + (x.shape[0] - L) // S
    idx = np.arange(L)[None, :] + S * np.arange(num_frames)[:, None]
    return x[idx]


def mel_scale(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_filterbank(num_filters, fft_size, sample_rate_hz):
    """Triangular mel filters over rfft bins, (num_filters, fft_size//2+1)."""
    num_bins = fft_size // 2 + 1
    bin_hz = np.arange(num_bins) * sample_rate_hz / fft_size
    edges_mel = np.linspace(0.0, mel_scale(sample_rate_hz / 2.0), num_filters + 2)
    bin_mel = mel_scale(bin_hz)
    fb = np.zeros((num_filters, num_bins))
    for m in range(num_filters):
        left, center, right = edges_mel[m], edges_mel[m + 1], edges_mel[m + 2]
        up = (bin_mel - left) / (center - left)
        down = (right - bin_mel) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mfcc(audio, cfg):
    """MFCC features; kind "mfcc13" or "mfcc40" depending on num_ceps."""
    if audio.sample_rate_hz != cfg.sample_rate_hz:
        raise DataError(
            f"{audio.utt_id}: sample rate {audio.sample_rate_hz} != configured "
            f"{cfg.sample_rate_hz}"
        )
    frames = frame_signal(audio, cfg)
    pre = np.empty_like(frames)
    pre[:, 0] = frames[:, 0] * (1.0 - cfg.preemphasis)
    pre[:, 1:] = frames[:, 1:] - cfg.preemphasis * frames[:, :-1]
    windowed = pre * np.hamming(cfg.frame_len_samples)
    spectrum = np.fft.rfft(windowed, n=cfg.fft_size, axis=1)
    power = np.abs(spectrum) ** 2
    fb = mel_filterbank(cfg.num_mel_filters, cfg.fft_size, cfg.sample_rate_hz)
    energies = np.log(np.maximum(power @ fb.T, cfg.log_floor))
    ceps = scipy.fft.dct(energies, type=2, axis=1, norm="ortho")[:, : cfg.num_ceps]
    if cfg.lifter > 0:
        n = np.arange(cfg.num_ceps)
        ceps = ceps * (1.0 + (cfg.lifter / 2.0) * np.sin(np.pi * n / cfg.lifter))
    kind = {13: "mfcc13", 40: "mfcc40"}.get(cfg.num_ceps, "synth")
    return FeatureMatrix(
        utt_id=audio.utt_id, kind=kind, data=ceps, frame_shift_ms=cfg.frame_shift_ms
    )


def _regression_delta(data, window):
    # Delta_t = sum_k k (x_{t+k} - x_{t-k}) / (2 sum_k k^2), edges replicated.
    T = data.shape[0]
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    delta = np.zeros_like(data)
    for k in range(1, window + 1):
        fwd = np.minimum(np.arange(T) + k, T - 1)
        bwd = np.maximum(np.arange(T) - k, 0)
        delta += k * (data[fwd] - data[bwd])
    return delta / denom


def add_deltas(feat, window=2):
    """Append regression deltas and delta-deltas; output dim is 3x input dim."""
    if feat.num_frames < 1:
        raise DataError(f"{feat.utt_id}: cannot compute deltas on empty features")
    if feat.kind == "mfcc13":
        kind = "mfcc13dd"
    elif feat.kind in FREE_KINDS:
        kind = feat.kind
    else:
        raise DataError(f"{feat.utt_id}: {feat.kind} is not a base feature kind")
    d1 = _regression_delta(feat.data, window)
    d2 = _regression_delta(d1, window)
    return FeatureMatrix(
        utt_id=feat.utt_id,
        kind=kind,
        data=np.hstack([feat.data, d1, d2]),
        frame_shift_ms=feat.frame_shift_ms,
    )


# Pitch tracker settings (reference 16 kHz front end).
PITCH_F_MIN = 60.0
PITCH_F_MAX = 400.0
POV_VOICED = 0.5


def pitch3(audio, cfg=None):
    """Three-dimensional pitch features: [pov, normalized log-f0, delta log-f0].

    f0 per frame is the normalized autocorrelation peak in 60-400 Hz; pov is
    the peak value clamped to [0, 1]. Unvoiced frames carry f0 linearly
    interpolated from neighbouring voiced frames; log-f0 is mean-normalized
    over the utterance's voiced frames (all-unvoiced utterances get zeros).
    """
    cfg = cfg or MfccConfig()
    frames = frame_signal(audio, cfg)
    sr = audio.sample_rate_hz
    lag_min = int(np.ceil(sr / PITCH_F_MAX))
    lag_max = int(np.floor(sr / PITCH_F_MIN))
    if lag_max >= cfg.frame_len_samples:
        raise ConfigError("pitch lag range exceeds the frame length")
    lags, vals = nccf_peaks(np.ascontiguousarray(frames), lag_min, lag_max)
    pov = np.clip(vals, 0.0, 1.0)
    voiced = pov >= POV_VOICED
    T = frames.shape[0]
    logf0 = np.zeros(T)
    if np.any(voiced):
        f0 = sr / lags[voiced].astype(np.float64)
        knots = np.flatnonzero(voiced)
        interp = np.interp(np.arange(T), knots, np.log(f0))
        logf0 = interp - np.log(f0).mean()
    d1 = _regression_delta(logf0[:, None], 2)[:, 0]
    data = np.stack([pov, logf0, d1], axis=1)
    return FeatureMatrix(
        utt_id=audio.utt_id, kind="pitch3", data=data, frame_shift_ms=cfg.frame_shift_ms
    )


def speed_perturb(audio, factor):
    """Resample by linear interpolation; factor 1.1 is faster, shorter, higher.

    Output length is round(N / factor); factor 1.0 returns bit-identical
    samples.
    """
    if factor <= 0:
        raise ConfigError(f"speed factor must be > 0, got {factor}")
    n = audio.samples.shape[0]
    out_len = int(round(n / factor))
    positions = np.arange(out_len) * factor
    resampled = np.interp(positions, np.arange(n), audio.samples)
    return replace(audio, samples=resampled)


def read_wav(path, utt_id=""):
    """Read a 16-bit mono PCM WAV into an AudioSegment."""
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise DataError(f"{path}: only mono WAV is supported")
    if data.dtype != np.int16:
        raise DataError(f"{path}: only 16-bit PCM WAV is supported, got {data.dtype}")
    return AudioSegment(
        samples=data.astype(np.float64) / 32768.0,
        sample_rate_hz=int(rate),
        utt_id=utt_id,
    )


def write_wav(path, audio):
    """Write an AudioSegment as 16-bit mono PCM WAV (values clipped)."""
    scaled = np.round(np.clip(audio.samples, -1.0, 1.0) * 32767.0)
    scipy.io.wavfile.write(path, audio.sample_rate_hz, scaled.astype(np.int16))
