import math
import os
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from melodygen.midi_io import NoteEvent, encode_smf
from melodygen.pipeline import (
    CorpusRecord, EmptyTrack, FilterReport, PipelineConfig, Reject, TooShort,
    build_corpus, center_pitch, delays_of, filter_track, lower_median,
    normalize_delays, pause_filter, pitch_entropy, read_corpus,
    reduce_monophonic, write_corpus,
)


def mono_track(pitches, step=240, dur=None):
    dur = dur or step
    return [NoteEvent(i * step, p, dur) for i, p in enumerate(pitches)]


class TestReduceMonophonic:
    def test_non_overlapping_unchanged(self):
        notes = mono_track([60, 62, 64])
        assert reduce_monophonic(notes) == notes

    def test_higher_pitch_wins_and_truncates(self):
        notes = [NoteEvent(0, 60, 480), NoteEvent(240, 72, 240)]
        assert reduce_monophonic(notes) == [
            NoteEvent(0, 60, 240), NoteEvent(240, 72, 240)]

    def test_lower_note_resumes_after_interruption(self):
        notes = [NoteEvent(0, 60, 480), NoteEvent(120, 72, 120)]
        assert reduce_monophonic(notes) == [
            NoteEvent(0, 60, 120), NoteEvent(120, 72, 120),
            NoteEvent(240, 60, 240)]

    def test_empty(self):
        assert reduce_monophonic([]) == []


def _skyline_oracle(notes):
    """Per-tick max-pitch scan, resampled to note segments. A segment is a
    maximal run of ticks with the same (top pitch, top-note onset)."""
    if not notes:
        return []
    end = max(n.onset_ticks + n.duration_ticks for n in notes)
    per_tick = []
    for t in range(end):
        active = [n for n in notes
                  if n.onset_ticks <= t < n.onset_ticks + n.duration_ticks]
        if active:
            top = max(active, key=lambda n: (n.pitch, n.onset_ticks))
            per_tick.append((top.pitch, top.onset_ticks))
        else:
            per_tick.append(None)
    out = []
    start = None
    for t in range(end + 1):
        cur = per_tick[t] if t < end else None
        prev = per_tick[t - 1] if t > 0 else None
        if cur != prev:
            if prev is not None:
                out.append(NoteEvent(start, prev[0], t - start))
            start = t
    return out


@given(st.lists(
    st.tuples(st.integers(0, 60), st.integers(40, 80), st.integers(1, 25)),
    min_size=1, max_size=12))
@settings(max_examples=200)
def test_skyline_matches_tick_scan_oracle(raw):
    notes = sorted(NoteEvent(t, p, d) for t, p, d in raw)
    assert reduce_monophonic(notes) == _skyline_oracle(notes)


class TestCenterPitch:
    def test_median_48_shifts_up_one_octave(self):
        notes, shift = center_pitch(mono_track([48, 48, 50]))
        assert shift == 12
        assert lower_median(n.pitch for n in notes) == 60

    def test_median_65_untouched(self):
        notes, shift = center_pitch(mono_track([65, 65, 67]))
        assert shift == 0

    def test_median_84_shifts_down_two_octaves(self):
        notes, shift = center_pitch(mono_track([84, 84, 86]))
        assert shift == -24
        assert lower_median(n.pitch for n in notes) == 60

    def test_empty_raises(self):
        with pytest.raises(EmptyTrack):
            center_pitch([])

    def test_out_of_range_shift_rejected(self):
        from melodygen.pipeline import PitchOutOfRange
        with pytest.raises(PitchOutOfRange):
            center_pitch(mono_track([20, 80]))  # +48 shift pushes 80 past 127

    @given(st.lists(st.integers(20, 107), min_size=1, max_size=40))
    def test_median_lands_in_octave4_and_preserves_pitch_class(self, pitches):
        from melodygen.pipeline import PitchOutOfRange
        try:
            notes, shift = center_pitch(mono_track(pitches))
        except PitchOutOfRange:
            return
        assert shift % 12 == 0
        assert 60 <= lower_median(n.pitch for n in notes) <= 71
        for before, after in zip(pitches, notes):
            assert before % 12 == after.pitch % 12


class TestDelays:
    def test_regular(self):
        notes = [NoteEvent(0, 60, 240), NoteEvent(240, 62, 240),
                 NoteEvent(480, 64, 240)]
        assert delays_of(notes) == [240, 240, 240]

    def test_last_is_final_duration(self):
        notes = [NoteEvent(0, 60, 120), NoteEvent(120, 62, 480)]
        assert delays_of(notes) == [120, 480]

    def test_too_short(self):
        with pytest.raises(TooShort):
            delays_of([NoteEvent(0, 60, 240)])

    @given(st.lists(st.tuples(st.integers(40, 80), st.integers(1, 100)),
                    min_size=2, max_size=30))
    def test_all_delays_positive_on_monophonic_input(self, raw):
        notes, onset = [], 0
        for pitch, step in raw:
            notes.append(NoteEvent(onset, pitch, step))
            onset += step
        assert all(d > 0 for d in delays_of(notes))


class TestPauseFilter:
    def test_keep_with_median(self):
        assert pause_filter([240, 240, 480, 120]) == 240

    def test_reject_twelve_distinct(self):
        assert pause_filter(list(range(100, 112))) is None

    def test_keep_exactly_eleven_distinct(self):
        delays = list(range(100, 111))
        assert pause_filter(delays) == lower_median(delays)


class TestNormalizeDelays:
    def test_paper_style_ratios(self):
        assert normalize_delays([240, 240, 480, 120], 240) == [
            Fraction(1), Fraction(1), Fraction(2), Fraction(1, 2)]

    def test_all_equal(self):
        assert normalize_delays([100, 100], 100) == [Fraction(1), Fraction(1)]

    def test_exact_rational(self):
        assert normalize_delays([320, 240, 240], 240) == [
            Fraction(4, 3), Fraction(1), Fraction(1)]


class TestPitchEntropy:
    def test_constant_is_zero(self):
        assert pitch_entropy([60] * 10) == 0.0

    def test_uniform_eight(self):
        assert pitch_entropy(list(range(60, 68))) == pytest.approx(3.0)

    def test_half_quarter_quarter(self):
        assert pitch_entropy([60, 60, 62, 64]) == pytest.approx(1.5)

    @given(st.lists(st.integers(0, 127), min_size=1, max_size=50))
    def test_permutation_invariant_and_bounded(self, pitches):
        h = pitch_entropy(pitches)
        assert h == pytest.approx(pitch_entropy(sorted(pitches)))
        k = len(set(pitches))
        assert -1e-9 <= h <= math.log2(k) + 1e-9
        if len(pitches) % k == 0 and all(
                pitches.count(p) == len(pitches) // k for p in set(pitches)):
            assert h == pytest.approx(math.log2(k))


class TestFilterTrack:
    config = PipelineConfig()

    def test_repeating_bass_line_rejected_low_entropy(self):
        notes = mono_track([40] * 32)
        result = filter_track(notes, self.config)
        assert isinstance(result, Reject) and result.reason == "low_entropy"

    def test_too_short(self):
        result = filter_track(mono_track([60, 62, 64]), self.config)
        assert isinstance(result, Reject) and result.reason == "too_short"

    def test_c_major_scale_loop_kept(self):
        scale = [60, 62, 64, 65, 67, 69, 71]
        notes = mono_track(scale * 4 + scale[:4])  # 32 notes
        result = filter_track(notes, self.config)
        assert isinstance(result, CorpusRecord)
        # hand-counted histogram: 5,5,5,5,4,4,4 over 32 notes
        counts = [5, 5, 5, 5, 4, 4, 4]
        expected = -sum(c / 32 * math.log2(c / 32) for c in counts)
        assert result.entropy_bits == pytest.approx(expected)
        assert expected == pytest.approx(math.log2(7), abs=0.01)

    def test_kept_track_invariants(self):
        scale = [55, 57, 59, 60, 62, 64, 66]
        notes = mono_track(scale * 5, step=240)
        rec = filter_track(notes, self.config)
        assert isinstance(rec, CorpusRecord)
        assert 60 <= lower_median(rec.pitches) <= 71
        assert rec.transpose % 12 == 0
        assert Fraction(1) in rec.delay_ratios
        assert len(set(rec.delay_ratios)) <= 11


class TestBuildCorpus:
    def _write_midi(self, path, pitches, step=240):
        with open(path, "wb") as fh:
            fh.write(encode_smf(mono_track(pitches, step)))

    def test_empty_dir(self, tmp_path):
        records, report, skipped = build_corpus(
            str(tmp_path), {}, PipelineConfig())
        assert records == [] and report.total() == 0 and skipped == 0

    def test_corrupt_file_skipped(self, tmp_path):
        scale = [60, 62, 64, 65, 67, 69, 71] * 5
        self._write_midi(tmp_path / "good.mid", scale)
        (tmp_path / "bad.mid").write_bytes(b"not midi at all")
        records, report, skipped = build_corpus(
            str(tmp_path), {}, PipelineConfig())
        assert len(records) == 1
        assert skipped == 1

    def test_deterministic_rerun(self, tmp_path):
        scale = [60, 62, 64, 65, 67, 69, 71]
        self._write_midi(tmp_path / "a.mid", scale * 5)
        self._write_midi(tmp_path / "b.mid", list(reversed(scale)) * 5)
        out1 = tmp_path / "corpus1.jsonl"
        out2 = tmp_path / "corpus2.jsonl"
        for out in (out1, out2):
            records, _, _ = build_corpus(str(tmp_path), {}, PipelineConfig())
            # only .mid files are picked up, so corpus outputs don't recurse
            write_corpus(records, str(out))
        assert out1.read_bytes() == out2.read_bytes()

    def test_manifest_labels_and_report_reconciles(self, tmp_path):
        os.makedirs(tmp_path / "jazz")
        scale = [60, 62, 64, 65, 67, 69, 71] * 5
        self._write_midi(tmp_path / "jazz" / "x.mid", scale)
        self._write_midi(tmp_path / "flat.mid", [60] * 32)
        records, report, _ = build_corpus(
            str(tmp_path), {"jazz": "jazz"}, PipelineConfig())
        assert [r.meta_label for r in records] == ["jazz"]
        assert report.total() == 2
        assert report.kept == 1 and report.rejected_low_entropy == 1

    def test_corpus_roundtrip(self, tmp_path):
        scale = [60, 62, 64, 65, 67, 69, 71] * 5
        self._write_midi(tmp_path / "a.mid", scale)
        records, _, _ = build_corpus(str(tmp_path), {}, PipelineConfig())
        path = tmp_path / "corpus.jsonl"
        write_corpus(records, str(path))
        loaded = read_corpus(str(path))
        assert len(loaded) == len(records)
        assert loaded[0].pitches == records[0].pitches
        assert loaded[0].delay_ratios == records[0].delay_ratios


def test_report_histogram_bins():
    report = FilterReport()
    report.add_entropy(0.0)
    report.add_entropy(0.26)
    report.add_entropy(5.99)
    report.add_entropy(7.5)  # clipped into the top bin
    rows = report.histogram_rows()
    assert len(rows) == 24
    assert rows[0] == (0.0, 1)
    assert rows[1] == (0.25, 1)
    assert rows[23][1] == 2
