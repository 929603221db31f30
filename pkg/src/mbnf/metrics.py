"""Code-switch-aware scoring: edit alignment, overall and per-language WER,
and the switch-point bigram-correct measure.

Hypotheses carry no language tags; all language attribution flows from the
reference tags through the minimal-edit alignment. Corpus figures are
micro-averaged: counts accumulate across utterances before percentages are
formed.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .kernels import edit_dp

MATCH, SUB, DEL, INS = "match", "sub", "del", "ins"


@dataclass
class TaggedTranscript:
    """Reference tokens, each tagged with its language code."""

    utt_id: str
    tokens: list  # ordered (word, lang code) pairs


@dataclass
class EditCounts:
    match: int = 0
    sub: int = 0
    dele: int = 0
    ins: int = 0

    @property
    def errors(self):
        return self.sub + self.dele + self.ins

    @property
    def num_ref(self):
        return self.match + self.sub + self.dele

    def wer(self):
        if self.num_ref == 0:
            return None
        return 100.0 * self.errors / self.num_ref

    def __add__(self, other):
        return EditCounts(
            self.match + other.match,
            self.sub + other.sub,
            self.dele + other.dele,
            self.ins + other.ins,
        )


def align(ref, hyp):
    """Minimal-edit alignment of two token lists under unit costs.

    Returns (ops, counts); ops is a list of (op, ref_index, hyp_index)
    tuples in reading order, with None for the side an INS/DEL lacks.
    Backtrace ties prefer MATCH > SUB > DEL > INS.
    """
    vocab = {}
    for w in list(ref) + list(hyp):
        vocab.setdefault(w, len(vocab))
    r = np.asarray([vocab[w] for w in ref], dtype=np.int64)
    h = np.asarray([vocab[w] for w in hyp], dtype=np.int64)
    dp = edit_dp(r, h)
    ops = []
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i, j] == dp[i - 1, j - 1]:
            ops.append((MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + 1:
            ops.append((SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            ops.append((DEL, i - 1, None))
            i -= 1
        else:
            ops.append((INS, None, j - 1))
            j -= 1
    ops.reverse()
    counts = EditCounts(
        match=sum(1 for op, _, _ in ops if op == MATCH),
        sub=sum(1 for op, _, _ in ops if op == SUB),
        dele=sum(1 for op, _, _ in ops if op == DEL),
        ins=sum(1 for op, _, _ in ops if op == INS),
    )
    return ops, counts


def language_wer(ref, hyp):
    """Per-language edit counts for one utterance.

    SUB/DEL are charged to the aligned reference token's language; INS to the
    language of the nearest preceding reference token (utterance-initial
    insertions to the first reference token's language).
    """
    if not ref.tokens:
        raise DataError(f"{ref.utt_id}: cannot score an utterance with no tokens")
    words = [w for w, _ in ref.tokens]
    langs = [lang for _, lang in ref.tokens]
    ops, _ = align(words, list(hyp))
    per_lang = {}

    def bucket(lang):
        return per_lang.setdefault(lang, EditCounts())

    last_ref = 0
    for op, ri, _ in ops:
        if ri is not None:
            last_ref = ri
        if op == MATCH:
            bucket(langs[ri]).match += 1
        elif op == SUB:
            bucket(langs[ri]).sub += 1
        elif op == DEL:
            bucket(langs[ri]).dele += 1
        else:
            bucket(langs[last_ref]).ins += 1
    return per_lang


def switch_points(ref):
    """Reference positions i>0 whose language differs from position i-1."""
    langs = [lang for _, lang in ref.tokens]
    return [i for i in range(1, len(langs)) if langs[i] != langs[i - 1]]


def cs_bigram_correct(ref, hyp, strict=False):
    """Fraction of switch-point reference tokens recognized correctly.

    Returns (percentage or None, switch point count); None when the
    reference has no switch points. ``strict`` additionally requires the
    token before the switch to be a MATCH (off by default).
    """
    points = switch_points(ref)
    if not points:
        return None, 0
    words = [w for w, _ in ref.tokens]
    ops, _ = align(words, list(hyp))
    matched_ref = {ri for op, ri, _ in ops if op == MATCH}
    hits = 0
    for i in points:
        ok = i in matched_ref
        if strict:
            ok = ok and (i - 1) in matched_ref
        hits += int(ok)
    return 100.0 * hits / len(points), len(points)


@dataclass
class ScoreReport:
    per_language: dict = field(default_factory=dict)  # code -> EditCounts
    overall: EditCounts = field(default_factory=EditCounts)
    cs_bigram_pct: float | None = None
    num_switch_points: int = 0
    num_utterances: int = 0

    def to_dict(self):
        def block(c):
            return {
                "sub": c.sub,
                "del": c.dele,
                "ins": c.ins,
                "num_ref": c.num_ref,
                "wer_pct": c.wer(),
            }

        return {
            "overall": block(self.overall),
            "per_language": {code: block(c) for code, c in sorted(self.per_language.items())},
            "cs_bigram_correct_pct": self.cs_bigram_pct,
            "num_switch_points": self.num_switch_points,
            "num_utterances": self.num_utterances,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def render_table(self):
        """Aligned plain-text table: one row per language plus the overall row."""
        rows = [("Language", "Sub", "Del", "Ins", "N_ref", "WER%")]
        for code in sorted(self.per_language):
            c = self.per_language[code]
            wer = c.wer()
            rows.append(
                (code, str(c.sub), str(c.dele), str(c.ins), str(c.num_ref),
                 "-" if wer is None else f"{wer:.2f}")
            )
        wer = self.overall.wer()
        rows.append(
            ("ALL", str(self.overall.sub), str(self.overall.dele), str(self.overall.ins),
             str(self.overall.num_ref), "-" if wer is None else f"{wer:.2f}")
        )
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        if self.cs_bigram_pct is None:
            lines.append(f"CS bigram correct: - ({self.num_switch_points} switch points)")
        else:
            lines.append(
                f"CS bigram correct: {self.cs_bigram_pct:.2f}% "
                f"({self.num_switch_points} switch points)"
            )
        return "\n".join(lines)


def score_corpus(refs, hyps, strict_bigram=False):
    """Micro-averaged corpus scoring.

    ``refs`` is a list of TaggedTranscript (or records with .tokens), ``hyps``
    maps utt_id to a hypothesis token list. A hypothesis without a reference
    is an error; a reference without a hypothesis is scored against the empty
    hypothesis (all deletions).
    """
    ref_map = {}
    for ref in refs:
        tokens = [(w, lang) for w, lang in ref.tokens]
        ref_map[ref.utt_id] = TaggedTranscript(utt_id=ref.utt_id, tokens=tokens)
    unknown = sorted(set(hyps) - set(ref_map))
    if unknown:
        raise DataError(f"hypotheses without references: {', '.join(unknown)}")
    report = ScoreReport()
    cs_hits = 0
    cs_points = 0
    for utt_id in sorted(ref_map):
        ref = ref_map[utt_id]
        hyp = list(hyps.get(utt_id, []))
        per_lang = language_wer(ref, hyp)
        for code, counts in per_lang.items():
            report.per_language[code] = report.per_language.get(code, EditCounts()) + counts
            report.overall = report.overall + counts
        pct, n_points = cs_bigram_correct(ref, hyp, strict=strict_bigram)
        if n_points:
            cs_hits += round(pct * n_points / 100.0)
            cs_points += n_points
        report.num_utterances += 1
    report.num_switch_points = cs_points
    report.cs_bigram_pct = (100.0 * cs_hits / cs_points) if cs_points else None
    return report


def load_hypotheses(path):
    """Read a hypothesis file: UTF-8 lines of "utt_id<TAB>word word ..."."""
    hyps = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataError(f"{path}: line {lineno}: expected 'utt_id<TAB>words'")
            utt_id, words = line.split("\t", 1)
            if utt_id in hyps:
                raise DataError(f"{path}: line {lineno}: duplicate utt_id {utt_id!r}")
            hyps[utt_id] = words.split()
    return hyps


def write_hypotheses(hyps, path):
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id in sorted(hyps):
            fh.write(f"{utt_id}\t{' '.join(hyps[utt_id])}\n")
