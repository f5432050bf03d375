"""Note tokenization: pitch-class / octave / delay-ratio vocabularies.

Pitches split exactly into pitch class (mod 12) and octave (div 12); delay
ratios index into a corpus-wide vocabulary capped at 32 entries with
nearest-neighbor fallback for rarer ratios.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

from .midi_io import NoteEvent

PITCH_CLASSES = 12
DELAY_VOCAB_CAP = 32


class TokenizerError(Exception):
    pass


class EmptyCorpus(TokenizerError):
    pass


class UnknownMetaLabel(TokenizerError):
    pass


class IndexOutOfVocab(TokenizerError):
    pass


@dataclass(frozen=True)
class TokenizedNote:
    pitch_class: int  # 0..11
    octave_index: int  # pitch // 12, absolute (0..10)
    delay_index: int  # index into Vocab.delay_ratios

    @property
    def pitch(self):
        return 12 * self.octave_index + self.pitch_class


@dataclass
class Vocab:
    delay_ratios: list  # sorted ascending Fractions, contains 1
    octave_range: tuple  # (min_octave_index, max_octave_index), inclusive
    meta_labels: list

    @property
    def n_octaves(self):
        return self.octave_range[1] - self.octave_range[0] + 1

    @property
    def n_delays(self):
        return len(self.delay_ratios)

    @property
    def n_meta(self):
        return len(self.meta_labels)

    def delay_index(self, ratio):
        """Exact index if present, else nearest kept ratio (ties smaller)."""
        try:
            return self.delay_ratios.index(ratio)
        except ValueError:
            pass
        best = min(range(len(self.delay_ratios)),
                   key=lambda i: (abs(self.delay_ratios[i] - ratio),
                                  self.delay_ratios[i]))
        return best

    def meta_index(self, label):
        try:
            return self.meta_labels.index(label)
        except ValueError:
            raise UnknownMetaLabel(label)

    def serialize(self):
        lines = ["melodygen-vocab v1",
                 f"octaves {self.octave_range[0]} {self.octave_range[1]}"]
        for r in self.delay_ratios:
            lines.append(f"ratio {r.numerator}/{r.denominator}")
        for label in self.meta_labels:
            lines.append(f"label {label}")
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text):
        lines = text.strip().split("\n")
        if not lines or lines[0] != "melodygen-vocab v1":
            raise TokenizerError("not a vocab file")
        ratios, labels, octaves = [], [], (0, 10)
        for line in lines[1:]:
            kind, _, rest = line.partition(" ")
            if kind == "octaves":
                lo, hi = rest.split()
                octaves = (int(lo), int(hi))
            elif kind == "ratio":
                ratios.append(Fraction(rest))
            elif kind == "label":
                labels.append(rest)
        return cls(delay_ratios=ratios, octave_range=octaves, meta_labels=labels)

    def fingerprint(self):
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.deserialize(fh.read())


def build_vocab(records):
    """Corpus-wide vocabulary from normalized records.

    Delay ratios kept by descending frequency (ties: smaller ratio first),
    capped at 32, then sorted ascending. Octave range covers exactly the
    observed octaves. Meta labels in sorted order.
    """
    if not records:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    freq = Counter()
    octaves = set()
    labels = set()
    for rec in records:
        freq.update(rec.delay_ratios)
        octaves.update(p // 12 for p in rec.pitches)
        labels.add(rec.meta_label)
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = sorted(r for r, _ in ranked[:DELAY_VOCAB_CAP])
    return Vocab(delay_ratios=kept,
                 octave_range=(min(octaves), max(octaves)),
                 meta_labels=sorted(labels))


def encode_track(record, vocab):
    """Record -> (TokenizedNote list, meta index). Length preserved."""
    meta = vocab.meta_index(record.meta_label)
    tokens = [TokenizedNote(pitch % 12, pitch // 12, vocab.delay_index(ratio))
              for pitch, ratio in zip(record.pitches, record.delay_ratios)]
    return tokens, meta


def decode_track(tokens, vocab, median_pause_ticks, division=480):
    """Tokens -> legato NoteEvents; onsets accumulate exact ratios,
    rounded to the nearest tick at emission."""
    notes = []
    onset = Fraction(0)
    for tok in tokens:
        if not 0 <= tok.delay_index < vocab.n_delays:
            raise IndexOutOfVocab(f"delay index {tok.delay_index}")
        if not vocab.octave_range[0] <= tok.octave_index <= vocab.octave_range[1]:
            raise IndexOutOfVocab(f"octave index {tok.octave_index}")
        delay = vocab.delay_ratios[tok.delay_index] * median_pause_ticks
        start = _round_half_up(onset)
        end = _round_half_up(onset + delay)
        notes.append(NoteEvent(start, tok.pitch, max(1, end - start)))
        onset += delay
    return notes


def _round_half_up(x):
    return int(x + Fraction(1, 2))
