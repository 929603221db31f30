"""Corpus data model, manifest IO, and the seeded synthetic generator.

The generator stands in for real multilingual corpora at desk scale. It has
two modes sharing the same seeded transcripts and state durations:

  * feature mode (``synth_corpus``): per-frame emissions drawn from planted
    per-phone-state Gaussians, with the generating state recorded per frame
    as a gold alignment;
  * waveform mode (``synth_waveforms``): each phone rendered as an additive
    sinusoid mixture at 16 kHz, so the DSP front-end is exercised end to end.

Every stochastic choice hangs off a per-utterance substream of the master
seed, so equal seeds give bit-identical corpora and generation order does
not matter.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .util import (
    STREAM_CORRUPT,
    STREAM_CS,
    STREAM_EMISSION,
    STREAM_MEANS,
    STREAM_TRANSCRIPT,
    STREAM_WAVE,
    substream,
)


@dataclass(frozen=True)
class LanguageId:
    """A language tag plus its 0-based position in the corpus language list."""

    code: str
    index: int

    def __post_init__(self):
        if not self.code:
            raise ConfigError("language code must be non-empty")
        if self.index < 0:
            raise ConfigError("language index must be >= 0")


@dataclass
class UtteranceRecord:
    """One utterance: id, optional audio reference, tagged tokens, phone sequence.

    ``tokens`` and ``phone_seq`` entries are (symbol, language-code) pairs.
    """

    utt_id: str
    audio_ref: str | None = None
    tokens: list = field(default_factory=list)
    phone_seq: list = field(default_factory=list)

    def __post_init__(self):
        if not self.utt_id:
            raise DataError("utt_id must be non-empty")


@dataclass
class PhoneSet:
    """Phone inventory of one language with a fixed left-to-right state count."""

    lang: LanguageId
    phones: list
    states_per_phone: int = 3

    def __post_init__(self):
        if not self.phones:
            raise ConfigError(f"phoneset for {self.lang.code} has no phones")
        if len(set(self.phones)) != len(self.phones):
            raise ConfigError(f"duplicate phones in phoneset for {self.lang.code}")
        if self.states_per_phone < 1:
            raise ConfigError("states_per_phone must be >= 1")

    @property
    def num_states(self):
        return len(self.phones) * self.states_per_phone

    # Block size of this language's softmax output block.
    block_size = num_states

    def state_index(self, phone, state):
        return self.phones.index(phone) * self.states_per_phone + state


@dataclass
class LanguageSpec:
    """Per-language generation settings: inventory, counts, length range."""

    phoneset: PhoneSet
    num_utterances: int
    min_phones: int = 6
    max_phones: int = 10

    def __post_init__(self):
        if self.num_utterances < 0:
            raise ConfigError("num_utterances must be >= 0")
        if not (1 <= self.min_phones <= self.max_phones):
            raise ConfigError("need 1 <= min_phones <= max_phones")


@dataclass
class SynthConfig:
    """Everything the synthetic generator needs; the seed fully determines output.

    When ``state_means``/``state_vars`` are not given, each phone-state gets a
    distinct +/-``mean_scale`` sign-pattern mean (patterns are binary codes
    XORed with a seeded base pattern, so any two states differ in at least one
    coordinate by 2*mean_scale).
    """

    languages: list
    emission_dim: int = 8
    mean_scale: float = 5.0
    noise_level: float = 1.0
    min_frames_per_state: int = 2
    max_frames_per_state: int = 8
    seed: int = 0
    state_means: dict | None = None  # lang code -> (num_states, dim) array
    state_vars: dict | None = None
    sample_rate_hz: int = 16000
    frame_shift_samples: int = 160
    wave_amplitude: float = 0.35
    wave_noise_level: float = 0.0
    phone_recipes: dict | None = None  # (lang code, phone) -> [(freq_hz, rel_amp)]

    def validate(self):
        if not self.languages:
            raise ConfigError("synthetic corpus needs at least one language")
        codes = [spec.phoneset.lang.code for spec in self.languages]
        if len(set(codes)) != len(codes):
            raise ConfigError("duplicate language codes in SynthConfig")
        if self.emission_dim < 1:
            raise ConfigError("emission_dim must be >= 1")
        if self.noise_level < 0 or self.wave_noise_level < 0:
            raise ConfigError("noise levels must be >= 0")
        if not (1 <= self.min_frames_per_state <= self.max_frames_per_state):
            raise ConfigError("need 1 <= min_frames_per_state <= max_frames_per_state")
        for spec in self.languages:
            if spec.phoneset.num_states > 2**self.emission_dim and self.state_means is None:
                raise ConfigError(
                    f"emission_dim {self.emission_dim} too small to give "
                    f"{spec.phoneset.num_states} states distinct means"
                )
        if self.state_vars is not None:
            for code, v in self.state_vars.items():
                if np.any(np.asarray(v) <= 0):
                    raise ConfigError(f"state variances for {code} must be > 0")

    def language_ids(self):
        return [spec.phoneset.lang for spec in self.languages]


# ---------------------------------------------------------------------------
# Manifest IO: line-delimited JSON, one utterance per line.
# ---------------------------------------------------------------------------

def load_manifest(path):
    """Read a JSONL manifest into records, in file order.

    Keys: ``utt_id`` (required), ``audio`` (optional path), ``tokens``
    (optional [word, lang] pairs), ``phones`` (optional [phone, lang] pairs).
    Unknown keys are ignored.
    """
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: malformed JSON: {exc}") from exc
            if not isinstance(obj, dict) or "utt_id" not in obj:
                raise DataError(f"{path}: line {lineno}: missing utt_id")
            utt_id = obj["utt_id"]
            if not isinstance(utt_id, str) or not utt_id:
                raise DataError(f"{path}: line {lineno}: utt_id must be a non-empty string")
            if utt_id in seen:
                raise DataError(f"{path}: line {lineno}: duplicate utt_id {utt_id!r}")
            seen.add(utt_id)
            try:
                tokens = [(str(w), str(lang)) for w, lang in obj.get("tokens", [])]
                phones = [(str(p), str(lang)) for p, lang in obj.get("phones", [])]
            except (TypeError, ValueError) as exc:
                raise DataError(
                    f"{path}: line {lineno}: tokens/phones must be [symbol, lang] pairs"
                ) from exc
            records.append(
                UtteranceRecord(
                    utt_id=utt_id,
                    audio_ref=obj.get("audio"),
                    tokens=tokens,
                    phone_seq=phones,
                )
            )
    return records


def write_manifest(records, path):
    """Write records as JSONL; inverse of load_manifest modulo whitespace."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"utt_id": rec.utt_id}
            if rec.audio_ref is not None:
                obj["audio"] = rec.audio_ref
            if rec.tokens:
                obj["tokens"] = [[w, lang] for w, lang in rec.tokens]
            if rec.phone_seq:
                obj["phones"] = [[p, lang] for p, lang in rec.phone_seq]
            fh.write(json.dumps(obj, sort_keys=False) + "\n")


def language_inventory(records):
    """Ordered unique language codes (first appearance) as LanguageId list."""
    codes = []
    for rec in records:
        for _, lang in list(rec.tokens) + list(rec.phone_seq):
            if lang not in codes:
                codes.append(lang)
    return [LanguageId(code, i) for i, code in enumerate(codes)]


def validate_language_closure(records, languages):
    """Every language tag in any record must be in the corpus language list."""
    known = {lid.code for lid in languages}
    for rec in records:
        for _, lang in list(rec.tokens) + list(rec.phone_seq):
            if lang not in known:
                raise DataError(
                    f"utterance {rec.utt_id}: language {lang!r} not in corpus inventory"
                )


# ---------------------------------------------------------------------------
# Planted emission model.
# ---------------------------------------------------------------------------

def state_means_vars(cfg, lang_index):
    """Planted (means, vars) for one language, shape (num_states, dim) each."""
    spec = cfg.languages[lang_index]
    code = spec.phoneset.lang.code
    num_states = spec.phoneset.num_states
    dim = cfg.emission_dim
    if cfg.state_means is not None:
        means = np.asarray(cfg.state_means[code], dtype=np.float64)
        if means.shape != (num_states, dim):
            raise ConfigError(
                f"state_means for {code} must have shape {(num_states, dim)}"
            )
    else:
        rng = substream(cfg.seed, STREAM_MEANS, lang_index)
        base = rng.integers(0, 2, size=dim)
        codes_bits = (np.arange(num_states)[:, None] >> np.arange(dim)[None, :]) & 1
        patterns = np.bitwise_xor(base[None, :], codes_bits)
        means = cfg.mean_scale * (2.0 * patterns - 1.0)
    if cfg.state_vars is not None:
        var = np.asarray(cfg.state_vars[code], dtype=np.float64)
        if var.shape != (num_states, dim):
            raise ConfigError(f"state_vars for {code} must have shape {(num_states, dim)}")
    else:
        var = np.full((num_states, dim), cfg.noise_level**2)
    return means, var


def _utterance_transcript(cfg, lang_index, utt_index):
    spec = cfg.languages[lang_index]
    rng = substream(cfg.seed, STREAM_TRANSCRIPT, lang_index, utt_index)
    n_phones = int(rng.integers(spec.min_phones, spec.max_phones + 1))
    phone_ids = rng.integers(0, len(spec.phoneset.phones), size=n_phones)
    return [spec.phoneset.phones[i] for i in phone_ids]


def _utterance_durations(cfg, lang_index, utt_index, n_states):
    rng = substream(cfg.seed, STREAM_EMISSION, lang_index, utt_index)
    durs = rng.integers(
        cfg.min_frames_per_state, cfg.max_frames_per_state + 1, size=n_states
    )
    return durs.astype(np.int64), rng


def _utt_id(cfg, lang_index, utt_index):
    code = cfg.languages[lang_index].phoneset.lang.code
    return f"{code}_{utt_index:04d}"


def synth_corpus(cfg):
    """Generate feature-domain utterances with gold alignments.

    Returns (records, emissions, gold) where emissions and gold map utt_id to
    a (frames, dim) float64 matrix and an int32 per-frame global-state vector.
    """
    cfg.validate()
    records = []
    emissions = {}
    gold = {}
    for li, spec in enumerate(cfg.languages):
        pset = spec.phoneset
        code = pset.lang.code
        means, variances = state_means_vars(cfg, li)
        stds = np.sqrt(variances)
        for u in range(spec.num_utterances):
            phones = _utterance_transcript(cfg, li, u)
            states = [
                pset.state_index(p, s)
                for p in phones
                for s in range(pset.states_per_phone)
            ]
            durs, rng = _utterance_durations(cfg, li, u, len(states))
            frame_states = np.repeat(np.asarray(states, dtype=np.int32), durs)
            noise = rng.standard_normal((frame_states.shape[0], cfg.emission_dim))
            emis = means[frame_states] + stds[frame_states] * noise
            utt_id = _utt_id(cfg, li, u)
            records.append(
                UtteranceRecord(
                    utt_id=utt_id,
                    tokens=[(f"{code}-{p}", code) for p in phones],
                    phone_seq=[(p, code) for p in phones],
                )
            )
            emissions[utt_id] = emis
            gold[utt_id] = frame_states
    return records, emissions, gold


# ---------------------------------------------------------------------------
# Waveform mode.
# ---------------------------------------------------------------------------

def default_phone_recipes(cfg):
    """Deterministic phone -> sinusoid mixture map.

    Each phone gets a fundamental inside the pitch-tracking range plus up to
    two higher 'formant' components, all distinct across the corpus.
    """
    pairs = [
        (spec.phoneset.lang.code, p)
        for spec in cfg.languages
        for p in spec.phoneset.phones
    ]
    n = len(pairs)
    recipes = {}
    for i, key in enumerate(pairs):
        f0 = 120.0 + (260.0 * i) / max(n - 1, 1)  # 120..380 Hz
        formant1 = 600.0 + (2800.0 * i) / max(n - 1, 1)
        parts = [(f0, 1.0)]
        if i % 3 >= 1:
            parts.append((formant1, 0.5))
        if i % 3 == 2:
            parts.append((min(formant1 * 1.5, 7200.0), 0.25))
        recipes[key] = parts
    return recipes


def synth_waveforms(cfg):
    """Render each utterance as concatenated per-phone sinusoid mixtures.

    Returns (segments, boundaries): AudioSegment list plus, per utterance, a
    list of (phone, start_sample, end_sample) tuples. Transcripts and state
    durations reuse the feature-mode substreams, so gold alignments from
    synth_corpus describe the same utterances on the same 10 ms frame grid.
    """
    from .dsp import AudioSegment  # local import avoids a module cycle

    cfg.validate()
    recipes = cfg.phone_recipes if cfg.phone_recipes is not None else default_phone_recipes(cfg)
    nyquist = cfg.sample_rate_hz / 2.0
    for key, parts in recipes.items():
        for freq, _amp in parts:
            if freq >= nyquist:
                raise ConfigError(
                    f"phone {key}: frequency {freq} Hz >= Nyquist ({nyquist} Hz)"
                )
    segments = []
    boundaries = []
    for li, spec in enumerate(cfg.languages):
        pset = spec.phoneset
        code = pset.lang.code
        for u in range(spec.num_utterances):
            phones = _utterance_transcript(cfg, li, u)
            n_states = len(phones) * pset.states_per_phone
            durs, _ = _utterance_durations(cfg, li, u, n_states)
            rng_w = substream(cfg.seed, STREAM_WAVE, li, u)
            pieces = []
            bounds = []
            start = 0
            for pi, phone in enumerate(phones):
                state_frames = durs[
                    pi * pset.states_per_phone : (pi + 1) * pset.states_per_phone
                ]
                n_samples = int(state_frames.sum()) * cfg.frame_shift_samples
                t = np.arange(n_samples) / cfg.sample_rate_hz
                wave = np.zeros(n_samples)
                parts = recipes[(code, phone)]
                norm = sum(a for _, a in parts) or 1.0
                for freq, amp in parts:
                    wave += (amp / norm) * np.sin(2.0 * np.pi * freq * t)
                pieces.append(cfg.wave_amplitude * wave)
                bounds.append((phone, start, start + n_samples))
                start += n_samples
            samples = np.concatenate(pieces) if pieces else np.zeros(0)
            if cfg.wave_noise_level > 0:
                samples = samples + cfg.wave_noise_level * rng_w.standard_normal(
                    samples.shape[0]
                )
            samples = np.clip(samples, -0.999, 0.999)
            segments.append(
                AudioSegment(
                    samples=samples,
                    sample_rate_hz=cfg.sample_rate_hz,
                    utt_id=_utt_id(cfg, li, u),
                )
            )
            boundaries.append(bounds)
    return segments, boundaries


# ---------------------------------------------------------------------------
# Code-switched transcripts and simulated recognizer output (for scoring).
# ---------------------------------------------------------------------------

def synth_cs_transcripts(cfg, num_utterances, min_segments=2, max_segments=4,
                         min_words=1, max_words=4):
    """Code-switched token-only records: concatenated language segments."""
    cfg.validate()
    if len(cfg.languages) < 2 and num_utterances > 0:
        raise ConfigError("code-switched transcripts need >= 2 languages")
    vocab = {
        spec.phoneset.lang.code: [f"{spec.phoneset.lang.code}-{p}" for p in spec.phoneset.phones]
        for spec in cfg.languages
    }
    codes = list(vocab)
    records = []
    for u in range(num_utterances):
        rng = substream(cfg.seed, STREAM_CS, u)
        n_seg = int(rng.integers(min_segments, max_segments + 1))
        tokens = []
        prev = None
        for _ in range(n_seg):
            choices = [c for c in codes if c != prev]
            lang = choices[int(rng.integers(0, len(choices)))]
            prev = lang
            n_words = int(rng.integers(min_words, max_words + 1))
            words = vocab[lang]
            for _ in range(n_words):
                tokens.append((words[int(rng.integers(0, len(words)))], lang))
        records.append(UtteranceRecord(utt_id=f"cs_{u:04d}", tokens=tokens))
    return records


def corrupt_tokens(record, vocab_by_lang, sub_rate, del_rate, ins_rate, rng):
    """Simulated recognizer output: seeded sub/del/ins noise over one record."""
    out = []
    for word, lang in record.tokens:
        r = rng.random()
        if r < del_rate:
            pass
        elif r < del_rate + sub_rate:
            choices = [w for w in vocab_by_lang[lang] if w != word] or [word]
            out.append(choices[int(rng.integers(0, len(choices)))])
        else:
            out.append(word)
        if rng.random() < ins_rate:
            words = vocab_by_lang[lang]
            out.append(words[int(rng.integers(0, len(words)))])
    return out


def synth_hypotheses(cfg, records, sub_rate=0.15, del_rate=0.05, ins_rate=0.05):
    """Corrupted hypotheses for a list of records, keyed by utt_id."""
    vocab = {
        spec.phoneset.lang.code: [f"{spec.phoneset.lang.code}-{p}" for p in spec.phoneset.phones]
        for spec in cfg.languages
    }
    hyps = {}
    for i, rec in enumerate(records):
        rng = substream(cfg.seed, STREAM_CORRUPT, i)
        hyps[rec.utt_id] = corrupt_tokens(rec, vocab, sub_rate, del_rate, ins_rate, rng)
    return hyps


def make_phoneset(code, index, num_phones, states_per_phone=3):
    """PhoneSet with generic phone symbols p0..p{n-1}."""
    if num_phones < 1:
        raise ConfigError("num_phones must be >= 1")
    return PhoneSet(
        lang=LanguageId(code, index),
        phones=[f"p{k}" for k in range(num_phones)],
        states_per_phone=states_per_phone,
    )


def total_frames(emissions):
    return int(sum(e.shape[0] for e in emissions.values()))


def gold_for_waveform_frames(gold_states, num_frames):
    """Map a feature-mode gold alignment onto the MFCC frame grid.

    MFCC frame t covers samples [160t, 160t+400); its center lands in
    feature-mode frame t+1, so the mapped alignment is gold shifted by one,
    truncated to the extracted frame count.
    """
    idx = np.minimum(np.arange(num_frames) + 1, gold_states.shape[0] - 1)
    return gold_states[idx]
