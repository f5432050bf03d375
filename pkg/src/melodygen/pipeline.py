"""Corpus normalization and filtering.

Turns raw per-track note events into normalized monophonic records:
skyline reduction, octave-preserving pitch centering onto octave 4,
median-pause delay normalization, pause-variety and entropy filters.
"""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

from .midi_io import MidiError, NoteEvent, load_notes

OCTAVE4_LOW, OCTAVE4_HIGH = 60, 71
MAX_DISTINCT_PAUSES = 11

ENTROPY_BIN_WIDTH = 0.25
ENTROPY_BIN_MAX = 6.0


class PipelineError(Exception):
    pass


class EmptyTrack(PipelineError):
    pass


class TooShort(PipelineError):
    pass


class PitchOutOfRange(PipelineError):
    pass


@dataclass
class PipelineConfig:
    entropy_min_bits: float = 1.5
    min_notes: int = 16
    max_notes: int = 512


@dataclass
class CorpusRecord:
    """One normalized, tokenizable track."""

    source: str
    meta_label: str
    pitches: list
    delay_ratios: list  # Fractions, delay / median pause
    entropy_bits: float
    transpose: int
    median_pitch_before: int = 0

    def to_json(self):
        return json.dumps({
            "source": self.source,
            "meta_label": self.meta_label,
            "pitches": self.pitches,
            "delay_ratios": [f"{r.numerator}/{r.denominator}" for r in self.delay_ratios],
            "entropy_bits": self.entropy_bits,
            "transpose": self.transpose,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(
            source=d["source"],
            meta_label=d["meta_label"],
            pitches=list(d["pitches"]),
            delay_ratios=[Fraction(s) for s in d["delay_ratios"]],
            entropy_bits=d["entropy_bits"],
            transpose=d["transpose"],
        )


@dataclass
class Reject:
    reason: str  # too_short | pause_variety | low_entropy | pitch_range


@dataclass
class FilterReport:
    kept: int = 0
    rejected_low_entropy: int = 0
    rejected_pause_variety: int = 0
    rejected_too_short: int = 0
    rejected_pitch_range: int = 0
    entropy_histogram: list = field(default_factory=lambda: [0] * int(
        round(ENTROPY_BIN_MAX / ENTROPY_BIN_WIDTH)))

    def total(self):
        return (self.kept + self.rejected_low_entropy + self.rejected_pause_variety
                + self.rejected_too_short + self.rejected_pitch_range)

    def add_entropy(self, bits):
        idx = int(bits / ENTROPY_BIN_WIDTH)
        idx = min(max(idx, 0), len(self.entropy_histogram) - 1)
        self.entropy_histogram[idx] += 1

    def histogram_rows(self):
        return [(i * ENTROPY_BIN_WIDTH, count)
                for i, count in enumerate(self.entropy_histogram)]


def reduce_monophonic(notes):
    """Skyline reduction: keep the highest sounding pitch at every instant.

    A segment starts whenever the top pitch changes or a note re-attacks at
    the current top pitch. Notes shadowed by higher ones are truncated or
    split; zero-length remnants vanish.
    """
    if not notes:
        return []
    # boundary sweep over onsets/offsets
    boundaries = sorted({n.onset_ticks for n in notes}
                        | {n.onset_ticks + n.duration_ticks for n in notes})
    out = []
    cur = None  # (pitch, onset_of_current_segment, source_onset)
    for t in boundaries:
        active = [n for n in notes
                  if n.onset_ticks <= t < n.onset_ticks + n.duration_ticks]
        if not active:
            if cur is not None:
                out.append(NoteEvent(cur[1], cur[0], t - cur[1]))
                cur = None
            continue
        top = max(active, key=lambda n: (n.pitch, n.onset_ticks))
        if cur is None:
            cur = (top.pitch, t, top.onset_ticks)
        elif (top.pitch, top.onset_ticks) != (cur[0], cur[2]):
            if t > cur[1]:
                out.append(NoteEvent(cur[1], cur[0], t - cur[1]))
            cur = (top.pitch, t, top.onset_ticks)
    if cur is not None:
        end = max(n.onset_ticks + n.duration_ticks for n in notes)
        if end > cur[1]:
            out.append(NoteEvent(cur[1], cur[0], end - cur[1]))
    return out


def lower_median(values):
    """Median; for even-length input, the lower of the two central values."""
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def center_pitch(notes):
    """Transpose by whole octaves so the median pitch lands in octave 4."""
    if not notes:
        raise EmptyTrack("cannot center an empty track")
    median = lower_median(n.pitch for n in notes)
    shift = 12 * math.ceil((OCTAVE4_LOW - median) / 12)
    if shift == 0:
        return list(notes), 0
    if any(not 0 <= n.pitch + shift <= 127 for n in notes):
        raise PitchOutOfRange("transposition would leave the MIDI pitch range")
    moved = [NoteEvent(n.onset_ticks, n.pitch + shift, n.duration_ticks,
                       n.channel, n.program) for n in notes]
    return moved, shift


def delays_of(notes):
    """Inter-onset intervals; the last entry is the final note's duration."""
    if len(notes) < 2:
        raise TooShort("need at least 2 notes for delays")
    delays = [notes[i + 1].onset_ticks - notes[i].onset_ticks
              for i in range(len(notes) - 1)]
    delays.append(notes[-1].duration_ticks)
    return delays


def pause_filter(delays):
    """Keep a track iff it uses at most 11 distinct delay values.

    Returns the lower-median delay when kept, else None.
    """
    if not delays:
        raise TooShort("empty delay list")
    if len(set(delays)) > MAX_DISTINCT_PAUSES:
        return None
    return lower_median(delays)


def normalize_delays(delays, median):
    """Express each delay exactly as a fraction of the median pause."""
    if median <= 0:
        raise ValueError("median pause must be positive")
    return [Fraction(d, median) for d in delays]


def pitch_entropy(pitches):
    """Base-2 Shannon entropy of the empirical pitch distribution."""
    if not pitches:
        raise EmptyTrack("entropy of an empty track")
    counts = Counter(pitches)
    n = len(pitches)
    # + 0.0 normalizes the -0.0 produced by a single-pitch track
    return -sum((c / n) * math.log2(c / n) for c in counts.values()) + 0.0


def filter_track(notes, config, source="", meta_label="",
                 report=None):
    """Run the full per-track pipeline; returns CorpusRecord or Reject."""
    def _reject(reason):
        if report is not None:
            setattr(report, "rejected_" + reason,
                    getattr(report, "rejected_" + reason) + 1)
        return Reject(reason)

    if not config.min_notes <= len(notes) <= config.max_notes:
        return _reject("too_short")
    mono = reduce_monophonic(notes)
    if len(mono) < max(2, config.min_notes):
        return _reject("too_short")
    if len(mono) > config.max_notes:
        return _reject("too_short")
    median_before = lower_median(n.pitch for n in mono)
    try:
        centered, shift = center_pitch(mono)
    except PitchOutOfRange:
        return _reject("pitch_range")

    pitches = [n.pitch for n in centered]
    entropy = pitch_entropy(pitches)
    if report is not None:
        report.add_entropy(entropy)

    delays = delays_of(centered)
    median_pause = pause_filter(delays)
    if median_pause is None:
        return _reject("pause_variety")
    ratios = normalize_delays(delays, median_pause)
    if entropy < config.entropy_min_bits:
        return _reject("low_entropy")
    if report is not None:
        report.kept += 1
    return CorpusRecord(source=source, meta_label=meta_label, pitches=pitches,
                        delay_ratios=ratios, entropy_bits=entropy,
                        transpose=shift, median_pitch_before=median_before)


def _midi_paths(input_dir):
    found = []
    for root, dirs, files in os.walk(input_dir):
        dirs.sort()
        for name in sorted(files):
            if name.lower().endswith((".mid", ".midi")):
                found.append(os.path.join(root, name))
    return sorted(found)


def label_for(path, input_dir, manifest):
    """Meta label per manifest {subdir: label}; falls back to 'default'."""
    rel = os.path.relpath(path, input_dir)
    parts = rel.split(os.sep)
    for i in range(len(parts) - 1, 0, -1):
        key = os.sep.join(parts[:i])
        if key in manifest:
            return manifest[key]
    return manifest.get(".", "default")


def build_corpus(input_dir, manifest, config, log=None):
    """Process every MIDI file under input_dir into corpus records.

    Deterministic: files in lexicographic path order, tracks in file order.
    Unreadable files are logged and skipped. Returns (records, report, skipped).
    """
    records = []
    report = FilterReport()
    skipped = 0
    for path in _midi_paths(input_dir):
        try:
            with open(path, "rb") as fh:
                data = fh.read()
            _, per_track = load_notes(data)
        except (OSError, MidiError) as e:
            skipped += 1
            if log is not None:
                log(f"skipping {path}: {e}")
            continue
        label = label_for(path, input_dir, manifest)
        rel = os.path.relpath(path, input_dir)
        for idx, (notes, _warnings) in enumerate(per_track):
            result = filter_track(notes, config, source=f"{rel}:{idx}",
                                  meta_label=label, report=report)
            if isinstance(result, CorpusRecord):
                records.append(result)
    return records, report, skipped


def write_corpus(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_corpus(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [CorpusRecord.from_json(line) for line in fh if line.strip()]


def write_report_csv(report, path):
    """Entropy histogram rows plus a totals block."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("bin_lower_bound_bits,count\n")
        for lower, count in report.histogram_rows():
            fh.write(f"{lower},{count}\n")
        fh.write("total,kept,rejected_low_entropy,rejected_pause_variety,"
                 "rejected_too_short,rejected_pitch_range\n")
        fh.write(f"{report.total()},{report.kept},{report.rejected_low_entropy},"
                 f"{report.rejected_pause_variety},{report.rejected_too_short},"
                 f"{report.rejected_pitch_range}\n")
