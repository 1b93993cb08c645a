"""Bit-exact binary format for detector timestamp streams, plus a CSV export.

Layout (all integers little-endian):

    offset  size  field
    0       16    magic ``PHOTONTAGSTREAM\\0``
    16      2     format version (u16), currently 1
    18      4     time unit in picoseconds (u32), currently 1
    22      8     run duration in ps (u64)
    30      1     channel count (u8)
    31      ...   channel table: per channel, id (u8), name length (u8),
                  ASCII name bytes
    ...     8     record count (u64)
    ...     9*N   records: channel id (u8) + timestamp in ps (u64),
                  globally non-decreasing timestamps, ties broken by
                  ascending channel id

The parser reads exactly the declared record count and never beyond it;
malformed input always raises a structured TagStreamError subclass.  Truth
tags carried by in-memory streams are deliberately not representable here.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .errors import (
    CorruptRecordError,
    TagStreamError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)
from .streams import CHANNEL_IDS, CHANNELS, EventStream

MAGIC = b"PHOTONTAGSTREAM\x00"
FORMAT_VERSION = 1
TIME_UNIT_PS = 1
RECORD_SIZE = 9

_RECORD_DTYPE = np.dtype([("ch", "u1"), ("t", "<u8")])


def _normalize_streams(streams):
    if isinstance(streams, dict):
        items = list(streams.values())
    else:
        items = list(streams)
    by_name = {}
    for s in items:
        if not isinstance(s, EventStream):
            raise ValidationError(f"expected EventStream, got {type(s).__name__}")
        if s.channel in by_name:
            raise ValidationError(f"duplicate channel {s.channel!r}")
        by_name[s.channel] = s
    return by_name


def write_tags(streams, destination):
    """Write streams to the binary format; returns the number of bytes emitted.

    Input invariants are checked before any byte is written; on validation
    failure the destination is never touched.
    """
    by_name = _normalize_streams(streams)
    for s in by_name.values():
        s.validate()
        if s.times_ps.size and s.times_ps[0] < 0:
            raise ValidationError(f"channel {s.channel}: negative timestamp")

    duration = max(
        [int(s.duration_ps) for s in by_name.values()]
        + [int(s.times_ps[-1]) for s in by_name.values() if s.times_ps.size]
        + [0]
    )

    total = sum(s.times_ps.size for s in by_name.values())
    records = np.empty(total, dtype=_RECORD_DTYPE)
    pos = 0
    keys = np.empty((2, total), dtype=np.int64)
    for name in CHANNELS:
        s = by_name.get(name)
        if s is None or not s.times_ps.size:
            continue
        n = s.times_ps.size
        records["ch"][pos : pos + n] = CHANNEL_IDS[name]
        records["t"][pos : pos + n] = s.times_ps.astype(np.uint64)
        keys[0, pos : pos + n] = CHANNEL_IDS[name]
        keys[1, pos : pos + n] = s.times_ps
        pos += n
    # Stable merge: primary key timestamp (last lexsort key), ties by channel id.
    order = np.lexsort(keys) if total else np.empty(0, dtype=np.intp)
    records = records[order]

    header = io.BytesIO()
    header.write(MAGIC)
    header.write(struct.pack("<H", FORMAT_VERSION))
    header.write(struct.pack("<I", TIME_UNIT_PS))
    header.write(struct.pack("<Q", duration))
    header.write(struct.pack("<B", len(CHANNELS)))
    for name in CHANNELS:
        encoded = name.encode("ascii")
        header.write(struct.pack("<BB", CHANNEL_IDS[name], len(encoded)))
        header.write(encoded)
    header.write(struct.pack("<Q", total))
    payload = header.getvalue() + records.tobytes()

    if hasattr(destination, "write"):
        destination.write(payload)
    else:
        with open(destination, "wb") as fh:
            fh.write(payload)
    return len(payload)


def _read_exact(buf, n, what, offset):
    data = buf.read(n)
    if len(data) != n:
        raise TagStreamError(f"file ends inside {what} (offset {offset + len(data)})")
    return data


def parse_tags(source):
    """Parse a tag file back into per-channel EventStreams (no truth tags).

    Raises UnsupportedVersionError for unknown versions, TruncatedFileError
    with the last valid record offset when the body is cut short, and
    CorruptRecordError for unknown channel ids or non-monotone timestamps.
    """
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    buf = io.BytesIO(data)

    magic = _read_exact(buf, 16, "magic", 0)
    if magic != MAGIC:
        raise TagStreamError("not a tag-stream file (bad magic)")
    (version,) = struct.unpack("<H", _read_exact(buf, 2, "version", 16))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    (unit,) = struct.unpack("<I", _read_exact(buf, 4, "time unit", 18))
    if unit != TIME_UNIT_PS:
        raise TagStreamError(f"unsupported time unit {unit} ps")
    (duration,) = struct.unpack("<Q", _read_exact(buf, 8, "duration", 22))
    (n_channels,) = struct.unpack("<B", _read_exact(buf, 1, "channel count", 30))
    channel_names = {}
    for _ in range(n_channels):
        off = buf.tell()
        cid, name_len = struct.unpack("<BB", _read_exact(buf, 2, "channel entry", off))
        name = _read_exact(buf, name_len, "channel name", off + 2)
        try:
            decoded = name.decode("ascii")
        except UnicodeDecodeError as exc:
            raise TagStreamError(f"channel {cid}: non-ASCII name") from exc
        if cid in channel_names:
            raise TagStreamError(f"duplicate channel id {cid} in header")
        channel_names[cid] = decoded
    (count,) = struct.unpack("<Q", _read_exact(buf, 8, "record count", buf.tell()))

    body_offset = buf.tell()
    body = data[body_offset : body_offset + count * RECORD_SIZE]
    if len(body) < count * RECORD_SIZE:
        complete = len(body) // RECORD_SIZE
        raise TruncatedFileError(
            f"body truncated after {complete} of {count} records",
            last_valid_offset=body_offset + complete * RECORD_SIZE,
        )
    records = np.frombuffer(body, dtype=_RECORD_DTYPE)

    if records.size:
        known = np.isin(records["ch"], list(channel_names))
        if not known.all():
            idx = int(np.argmin(known))
            raise CorruptRecordError(
                f"record {idx}: unknown channel id {int(records['ch'][idx])}",
                record_index=idx,
            )
        if np.any(records["t"] >= np.uint64(2**63)):
            idx = int(np.argmax(records["t"] >= np.uint64(2**63)))
            raise CorruptRecordError(
                f"record {idx}: timestamp exceeds supported range", record_index=idx
            )
        times = records["t"].astype(np.int64)
        if np.any(np.diff(times) < 0):
            idx = int(np.argmax(np.diff(times) < 0)) + 1
            raise CorruptRecordError(
                f"record {idx}: timestamp decreases", record_index=idx
            )
    else:
        times = np.empty(0, dtype=np.int64)

    if duration >= 2**63:
        raise TagStreamError("duration exceeds supported range")

    streams = {}
    for cid, name in sorted(channel_names.items()):
        if name not in CHANNEL_IDS:
            raise TagStreamError(f"channel id {cid} has unknown name {name!r}")
        mask = records["ch"] == cid if records.size else np.zeros(0, dtype=bool)
        streams[name] = EventStream(name, times[mask], duration_ps=int(duration))
    return streams


def export_csv(streams, destination):
    """Human-readable secondary form: `channel,time_ps` rows after a commented header."""
    by_name = _normalize_streams(streams)
    for s in by_name.values():
        s.validate()
    duration = max(
        [int(s.duration_ps) for s in by_name.values()]
        + [int(s.times_ps[-1]) for s in by_name.values() if s.times_ps.size]
        + [0]
    )

    def _dump(fh):
        fh.write("# tagstream-csv 1\n")
        fh.write(f"# duration_ps={duration}\n")
        for name in CHANNELS:
            fh.write(f"# channel {CHANNEL_IDS[name]} {name}\n")
        fh.write("channel,time_ps\n")
        total = sum(s.times_ps.size for s in by_name.values())
        keys = np.empty((2, total), dtype=np.int64)
        names = []
        pos = 0
        for name in CHANNELS:
            s = by_name.get(name)
            if s is None or not s.times_ps.size:
                continue
            n = s.times_ps.size
            keys[0, pos : pos + n] = CHANNEL_IDS[name]
            keys[1, pos : pos + n] = s.times_ps
            names.extend([name] * n)
            pos += n
        order = np.lexsort(keys) if total else []
        for i in order:
            fh.write(f"{names[i]},{keys[1, i]}\n")

    if hasattr(destination, "write"):
        _dump(destination)
    else:
        with open(destination, "w", newline="") as fh:
            _dump(fh)
