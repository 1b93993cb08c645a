"""Time-ordered detection records shared by the simulator, file format, and analysis.

Timestamps are integer picoseconds from the start of the run.  Streams carry
optional simulation-only truth tags (never serialized into tag files): the
origin of each record (genuine vs dark), the first-source pair id it
descends from, and, for signal/idler records, the emitted mode charges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Channel table: id <-> name.  Fixed for this experiment topology.
CHANNELS = ("herald_a", "herald_b", "signal", "idler")
CHANNEL_IDS = {name: i for i, name in enumerate(CHANNELS)}

ORIGIN_GENUINE = 0
ORIGIN_DARK = 1

# Sentinel for "no emitted mode" in truth charge arrays (dark counts, heralds).
NO_MODE = -128


@dataclass
class EventStream:
    """Detections on one channel: sorted int64 picosecond timestamps plus truth tags."""

    channel: str
    times_ps: np.ndarray
    origin: np.ndarray | None = None
    pair_id: np.ndarray | None = None
    ell_s: np.ndarray | None = None
    ell_i: np.ndarray | None = None
    duration_ps: int = 0

    def __post_init__(self):
        if self.channel not in CHANNEL_IDS:
            raise ValidationError(f"unknown channel {self.channel!r}")
        self.times_ps = np.asarray(self.times_ps, dtype=np.int64)
        if self.times_ps.ndim != 1:
            raise ValidationError("times_ps must be 1-D")

    def __len__(self):
        return self.times_ps.size

    def validate(self):
        t = self.times_ps
        if t.size and np.any(np.diff(t) < 0):
            raise ValidationError(f"channel {self.channel}: timestamps not non-decreasing")
        if t.size and (t[0] < 0 or (self.duration_ps and t[-1] > self.duration_ps)):
            raise ValidationError(
                f"channel {self.channel}: timestamps outside [0, {self.duration_ps}]"
            )
        for name in ("origin", "pair_id", "ell_s", "ell_i"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != t.size:
                raise ValidationError(f"channel {self.channel}: truth array {name} length mismatch")
        return self

    def stripped(self):
        """Copy without truth tags, as reconstructed from a tag file."""
        return EventStream(self.channel, self.times_ps.copy(), duration_ps=self.duration_ps)


def merge_streams(a: EventStream, b: EventStream, channel=None):
    """Merge two streams into one sorted stream (e.g. the two heralding arms)."""
    channel = channel or a.channel
    times = np.concatenate([a.times_ps, b.times_ps])
    order = np.argsort(times, kind="stable")
    return EventStream(channel, times[order], duration_ps=max(a.duration_ps, b.duration_ps))


@dataclass
class SettingStreams:
    """Streams recorded at one projective measurement setting of a scan."""

    ell_s: int
    ell_i: int
    streams: dict
    duration_ps: int
    ground_truth: object = None
    seed: int | None = None
