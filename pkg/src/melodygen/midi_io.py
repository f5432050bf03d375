"""Standard MIDI File reading and writing.

Parses format 0/1 SMF into absolute-tick note events and serializes note
sequences back to single-track format-0 files. Running status is supported
on read, never emitted on write. SMPTE time divisions are rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field


class MidiError(Exception):
    pass


class MalformedVlq(MidiError):
    pass


class MalformedHeader(MidiError):
    pass


class TruncatedTrack(MidiError):
    pass


class UnsupportedSmpteDivision(MidiError):
    pass


DEFAULT_TEMPO_US = 500000  # 120 BPM
PERCUSSION_CHANNEL = 9


@dataclass(frozen=True, order=True)
class NoteEvent:
    """One sounded note with absolute-tick timing."""

    onset_ticks: int
    pitch: int
    duration_ticks: int = field(compare=False)
    channel: int = field(default=0, compare=False)
    program: int = field(default=0, compare=False)

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch out of range: {self.pitch}")
        if self.onset_ticks < 0:
            raise ValueError("negative onset")
        if self.duration_ticks < 1:
            raise ValueError("duration must be >= 1 tick")


@dataclass
class MidiFile:
    format: int
    division: int
    tracks: list  # list of per-track event lists: (tick, status, data bytes)
    tempo_map: list  # sorted (tick, us_per_quarter)


def decode_varlen(data, offset):
    """Decode one variable-length quantity; returns (value, bytes consumed)."""
    value = 0
    for i in range(4):
        if offset + i >= len(data):
            raise MalformedVlq("input truncated inside VLQ")
        b = data[offset + i]
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, i + 1
    raise MalformedVlq("continuation bit set past 4 bytes")


def encode_varlen(value):
    """Encode a non-negative integer < 2**28 as a VLQ byte string."""
    if not 0 <= value < 1 << 28:
        raise ValueError(f"value out of VLQ range: {value}")
    out = bytearray([value & 0x7F])
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


# data-byte counts per channel-message high nibble
_CHANNEL_DATA_LEN = {0x8: 2, 0x9: 2, 0xA: 2, 0xB: 2, 0xC: 1, 0xD: 1, 0xE: 2}


def _parse_track(chunk):
    """Decode one MTrk chunk body into (abs_tick, status, data) events."""
    events = []
    tick = 0
    pos = 0
    running = None
    while pos < len(chunk):
        try:
            delta, n = decode_varlen(chunk, pos)
        except MalformedVlq as e:
            raise TruncatedTrack(str(e))
        pos += n
        tick += delta
        if pos >= len(chunk):
            raise TruncatedTrack("event missing after delta time")
        b = chunk[pos]
        if b == 0xFF:  # meta
            if pos + 2 > len(chunk):
                raise TruncatedTrack("truncated meta event")
            meta_type = chunk[pos + 1]
            length, n = decode_varlen(chunk, pos + 2)
            start = pos + 2 + n
            if start + length > len(chunk):
                raise TruncatedTrack("meta event data truncated")
            events.append((tick, 0xFF, bytes([meta_type]) + chunk[start:start + length]))
            pos = start + length
            running = None
            if meta_type == 0x2F:
                break
        elif b in (0xF0, 0xF7):  # sysex: skip
            length, n = decode_varlen(chunk, pos + 1)
            pos += 1 + n + length
            if pos > len(chunk):
                raise TruncatedTrack("sysex data truncated")
            running = None
        else:
            if b & 0x80:
                status = b
                pos += 1
            else:
                if running is None:
                    raise TruncatedTrack("data byte with no running status")
                status = running
            high = status >> 4
            if high not in _CHANNEL_DATA_LEN:
                raise TruncatedTrack(f"unexpected status byte 0x{status:02X}")
            ndata = _CHANNEL_DATA_LEN[high]
            if pos + ndata > len(chunk):
                raise TruncatedTrack("channel message truncated")
            events.append((tick, status, bytes(chunk[pos:pos + ndata])))
            pos += ndata
            running = status
    return events


def parse_smf(data):
    """Parse SMF bytes into a MidiFile with absolute-tick event lists."""
    if len(data) < 14 or data[0:4] != b"MThd":
        raise MalformedHeader("missing MThd chunk")
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen != 6:
        raise MalformedHeader(f"unexpected MThd length {hlen}")
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MalformedHeader(f"unsupported SMF format {fmt}")
    if division & 0x8000:
        raise UnsupportedSmpteDivision("SMPTE time division not supported")
    if division == 0:
        raise MalformedHeader("zero ticks-per-quarter division")

    tracks = []
    tempo_entries = []
    pos = 14
    while pos + 8 <= len(data):
        ctype = data[pos:pos + 4]
        (clen,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + clen]
        if ctype == b"MTrk":
            if len(body) < clen:
                raise TruncatedTrack("MTrk chunk shorter than declared length")
            events = _parse_track(body)
            tracks.append(events)
            for tick, status, payload in events:
                if status == 0xFF and payload[:1] == b"\x51" and len(payload) >= 4:
                    us = int.from_bytes(payload[1:4], "big")
                    tempo_entries.append((tick, us))
        pos += 8 + clen
    if not tracks:
        raise MalformedHeader("no MTrk chunks")
    tempo_entries.sort()
    if not tempo_entries or tempo_entries[0][0] != 0:
        tempo_entries.insert(0, (0, DEFAULT_TEMPO_US))
    return MidiFile(format=fmt, division=division, tracks=tracks, tempo_map=tempo_entries)


def extract_notes(track_events, division=None, tempo_map=None):
    """Pair note-ons with note-offs into NoteEvents.

    Velocity-0 note-ons count as note-offs. Pairing is FIFO per
    (channel, pitch). Unmatched note-ons are closed with a 1-tick duration;
    orphan note-offs are dropped. Percussion (channel 9) is excluded.
    Returns (notes, warnings) with notes sorted by (onset, pitch).
    """
    open_notes = {}  # (channel, pitch) -> list of (onset, program)
    program = {}  # channel -> current GM program
    notes = []
    warnings = 0
    for tick, status, payload in track_events:
        high = status >> 4
        channel = status & 0x0F
        if high == 0xC:
            program[channel] = payload[0]
            continue
        if channel == PERCUSSION_CHANNEL:
            continue
        if high == 0x9 and payload[1] > 0:
            open_notes.setdefault((channel, payload[0]), []).append(
                (tick, program.get(channel, 0)))
        elif high == 0x8 or (high == 0x9 and payload[1] == 0):
            pending = open_notes.get((channel, payload[0]))
            if not pending:
                warnings += 1
                continue
            onset, prog = pending.pop(0)
            duration = tick - onset
            if duration < 1:
                warnings += 1
                duration = 1
            notes.append(NoteEvent(onset, payload[0], duration, channel, prog))
    for (channel, pitch), pending in open_notes.items():
        for onset, prog in pending:
            warnings += 1
            notes.append(NoteEvent(onset, pitch, 1, channel, prog))
    notes.sort()
    return notes, warnings


def encode_smf(notes, division=480, tempo_us_per_quarter=DEFAULT_TEMPO_US,
               velocity=80):
    """Serialize notes as a single-track format-0 SMF byte string."""
    # (tick, order, status, data1, data2); offs sort before ons at equal ticks
    raw = []
    for note in notes:
        ch = note.channel & 0x0F
        raw.append((note.onset_ticks, 1, 0x90 | ch, note.pitch, velocity))
        raw.append((note.onset_ticks + note.duration_ticks, 0, 0x80 | ch,
                    note.pitch, 0))
    raw.sort()

    body = bytearray()
    body += encode_varlen(0) + bytes([0xFF, 0x51, 0x03])
    body += tempo_us_per_quarter.to_bytes(3, "big")
    tick = 0
    for abs_tick, _, status, d1, d2 in raw:
        body += encode_varlen(abs_tick - tick) + bytes([status, d1, d2])
        tick = abs_tick
    body += encode_varlen(0) + bytes([0xFF, 0x2F, 0x00])

    out = bytearray(b"MThd")
    out += struct.pack(">IHHH", 6, 0, 1, division)
    out += b"MTrk" + struct.pack(">I", len(body)) + body
    return bytes(out)


def load_notes(data):
    """Parse SMF bytes and extract notes per track.

    Returns (MidiFile, list of (notes, warnings) per track).
    """
    mf = parse_smf(data)
    extracted = [extract_notes(tr, mf.division, mf.tempo_map) for tr in mf.tracks]
    return mf, extracted
