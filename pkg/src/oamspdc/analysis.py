"""Coincidence analysis of timestamp streams.

Delay histograms, windowed coincidence counting with greedy earliest-match
pairing, heralded triple coincidences, accidental-level estimation from the
flat histogram background, correlation-matrix assembly over projective scan
settings, and matrix comparison statistics.

Window convention: a window of full width w centered at offset d accepts a
delay t_b - t_a when |2 (t_b - t_a - d)| <= w, which is integer-exact for
both parities of w.  Histogram bins are half-open [lo, lo + bin_width).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ParameterError, UndefinedStatisticError, ValidationError
from .streams import EventStream, merge_streams

__all__ = [
    "DelayHistogram",
    "CoincidenceWindows",
    "CorrelationMatrix",
    "MatrixCell",
    "AccidentalEstimate",
    "cross_histogram",
    "count_coincidences",
    "matched_pair_times",
    "heralded_coincidences",
    "accidental_rate",
    "build_matrix",
    "pearson",
    "diagonal_fraction",
]

SECONDS_PER_HOUR = 3600.0
PS_PER_SECOND = 1e12


@dataclass(frozen=True)
class CoincidenceWindows:
    """Full widths, in picoseconds, of the three coincidence windows."""

    pair_window: int = 1000
    herald_window: int = 300
    unheralded_window: int = 400

    def __post_init__(self):
        for name in ("pair_window", "herald_window", "unheralded_window"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")


@dataclass
class DelayHistogram:
    """Counts of pairwise delays t_b - t_a binned over a fixed range."""

    bin_width: int
    range: tuple
    counts: np.ndarray
    integration_time: float

    @property
    def bin_starts(self):
        return np.arange(self.range[0], self.range[1], self.bin_width)

    def write_csv(self, destination, config_hash=None):
        def _dump(fh):
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            fh.write(f"# integration_time_s={self.integration_time:.17g}\n")
            fh.write("bin_start_ps,count\n")
            for start, c in zip(self.bin_starts, self.counts):
                fh.write(f"{start},{c}\n")

        if hasattr(destination, "write"):
            _dump(destination)
        else:
            with open(destination, "w", newline="") as fh:
                _dump(fh)


@dataclass
class MatrixCell:
    raw: int
    integration_s: float
    rate_per_hour: float
    error_per_hour: float
    accidental_per_hour: float = 0.0


@dataclass
class CorrelationMatrix:
    """Per-(ell_s, ell_i) raw counts and accidental-corrected rates."""

    pump_ell: int
    cells: dict
    time_bin: float

    def sorted_keys(self):
        """Fixed cell order used for comparisons: sorted by (ell_s, ell_i)."""
        return sorted(self.cells)

    def rates(self):
        return np.array([self.cells[k].rate_per_hour for k in self.sorted_keys()])

    def to_jsonable(self, config_hash=None):
        out = {
            "pump_ell": self.pump_ell,
            "time_bin_s": self.time_bin,
            "cells": {
                f"{k[0]},{k[1]}": {
                    "raw": self.cells[k].raw,
                    "integration_s": self.cells[k].integration_s,
                    "rate_per_hour": self.cells[k].rate_per_hour,
                    "error_per_hour": self.cells[k].error_per_hour,
                    "accidental_per_hour": self.cells[k].accidental_per_hour,
                }
                for k in self.sorted_keys()
            },
        }
        if config_hash:
            out["config_hash"] = config_hash
        return out

    @classmethod
    def from_jsonable(cls, data):
        cells = {}
        for key, val in data["cells"].items():
            ls, _, li = key.partition(",")
            cells[(int(ls), int(li))] = MatrixCell(
                raw=int(val["raw"]),
                integration_s=float(val["integration_s"]),
                rate_per_hour=float(val["rate_per_hour"]),
                error_per_hour=float(val["error_per_hour"]),
                accidental_per_hour=float(val.get("accidental_per_hour", 0.0)),
            )
        return cls(pump_ell=int(data["pump_ell"]), cells=cells, time_bin=float(data["time_bin_s"]))

    def write_csv(self, destination, config_hash=None):
        def _dump(fh):
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            fh.write(f"# pump_ell={self.pump_ell}\n")
            fh.write("ell_s,ell_i,raw,integration_s,rate_per_hour,error_per_hour,accidental_per_hour\n")
            for k in self.sorted_keys():
                c = self.cells[k]
                fh.write(
                    f"{k[0]},{k[1]},{c.raw},{c.integration_s:.17g},{c.rate_per_hour:.17g},"
                    f"{c.error_per_hour:.17g},{c.accidental_per_hour:.17g}\n"
                )

        if hasattr(destination, "write"):
            _dump(destination)
        else:
            with open(destination, "w", newline="") as fh:
                _dump(fh)


def _sorted_times(stream):
    if isinstance(stream, EventStream):
        t = stream.times_ps
    else:
        t = np.asarray(stream, dtype=np.int64)
    if t.size and np.any(np.diff(t) < 0):
        raise ValidationError("stream timestamps are not sorted")
    return t.astype(np.int64, copy=False)


def cross_histogram(a, b, bin_width, delay_range, integration_time=None):
    """Histogram of all pairwise delays t_b - t_a inside [lo, hi).

    Linear in the stream lengths for a bounded range: for each a-record the
    matching b-slice is located by bisection.  The oracle definition is the
    brute-force histogram over every (a, b) pair.
    """
    ta, tb = _sorted_times(a), _sorted_times(b)
    lo, hi = int(delay_range[0]), int(delay_range[1])
    bin_width = int(bin_width)
    if bin_width <= 0:
        raise ValidationError("bin_width must be positive")
    if hi <= lo:
        raise ValidationError(f"empty delay range [{lo}, {hi})")
    if (hi - lo) % bin_width:
        raise ValidationError(f"bin_width {bin_width} does not divide range length {hi - lo}")
    n_bins = (hi - lo) // bin_width

    if integration_time is None:
        integration_time = _integration_time(a, b)

    counts = np.zeros(n_bins, dtype=np.int64)
    if ta.size and tb.size:
        lo_idx = np.searchsorted(tb, ta + lo, side="left")
        hi_idx = np.searchsorted(tb, ta + hi, side="left")
        per_a = hi_idx - lo_idx
        total = int(per_a.sum())
        if total:
            a_rep = np.repeat(np.arange(ta.size), per_a)
            offsets = np.arange(total) - np.repeat(np.cumsum(per_a) - per_a, per_a)
            delays = tb[np.repeat(lo_idx, per_a) + offsets] - ta[a_rep]
            counts = np.bincount((delays - lo) // bin_width, minlength=n_bins).astype(np.int64)
    return DelayHistogram(
        bin_width=bin_width,
        range=(lo, hi),
        counts=counts,
        integration_time=float(integration_time),
    )


def _integration_time(*streams):
    dur = 0
    for s in streams:
        if isinstance(s, EventStream):
            dur = max(dur, s.duration_ps)
            if s.times_ps.size:
                dur = max(dur, int(s.times_ps[-1]))
        else:
            t = np.asarray(s)
            if t.size:
                dur = max(dur, int(t[-1]))
    return dur / PS_PER_SECOND


@njit(cache=True)
def _greedy_match(ta, tb, window, offset, out):
    """Earliest-match pairing: each a takes the first unconsumed b in its window.

    Window test: |2 (t_b - t_a - offset)| <= window (integer-exact).  Fills
    `out` with matched a-times and returns the match count.
    """
    j = 0
    count = 0
    nb = tb.size
    for i in range(ta.size):
        center2 = 2 * (ta[i] + offset)
        lo2 = center2 - window
        while j < nb and 2 * tb[j] < lo2:
            j += 1
        if j < nb and 2 * tb[j] <= center2 + window:
            out[count] = ta[i]
            count += 1
            j += 1
    return count


def count_coincidences(a, b, window, offset=0):
    """Number of a-records with a b-record inside the centered window.

    Each b-record is consumed by at most one a-record (greedy earliest
    pairing in time order).
    """
    ta, tb = _sorted_times(a), _sorted_times(b)
    if int(window) <= 0:
        raise ValidationError("window must be positive")
    out = np.empty(min(ta.size, tb.size), dtype=np.int64)
    return int(_greedy_match(ta, tb, int(window), int(offset), out))


def matched_pair_times(a, b, window, offset=0):
    """Timestamps (from stream a) of greedy-matched coincidences."""
    ta, tb = _sorted_times(a), _sorted_times(b)
    if int(window) <= 0:
        raise ValidationError("window must be positive")
    out = np.empty(min(ta.size, tb.size), dtype=np.int64)
    n = _greedy_match(ta, tb, int(window), int(offset), out)
    return out[:n].copy()


def heralded_coincidences(herald, signal, idler, windows: CoincidenceWindows, offset=0):
    """Signal-idler pairs inside the pair window whose time also matches a herald.

    The pair carries the signal timestamp; pair-herald matching uses the
    herald window.  Both stages use greedy earliest pairing, so every record
    participates in at most one triple.
    """
    pair_times = matched_pair_times(signal, idler, windows.pair_window)
    th = _sorted_times(herald)
    out = np.empty(min(pair_times.size, th.size), dtype=np.int64)
    return int(_greedy_match(pair_times, th, int(windows.herald_window), int(offset), out))


@dataclass(frozen=True)
class AccidentalEstimate:
    """Flat background level of a delay histogram, rescaled to one window."""

    rate_per_window_per_s: float
    stderr: float
    mean_per_bin: float
    n_bins: int


def accidental_rate(hist: DelayHistogram, window, exclusion):
    """Mean bin level outside the exclusion interval, rescaled to the window.

    `exclusion` is a (lo, hi) ps interval that must cover the true
    coincidence peak; any bin overlapping it is discarded.  Returns the
    accidental rate per coincidence window per second of integration time,
    with the standard error of the background mean propagated.
    """
    if int(window) <= 0:
        raise ValidationError("window must be positive")
    ex_lo, ex_hi = int(exclusion[0]), int(exclusion[1])
    starts = hist.bin_starts
    ends = starts + hist.bin_width
    outside = (ends <= ex_lo) | (starts >= ex_hi)
    n = int(outside.sum())
    if n == 0:
        raise ValidationError("exclusion interval covers the entire histogram range")
    sel = hist.counts[outside].astype(float)
    mean = float(sel.mean())
    std = float(sel.std(ddof=1)) if n > 1 else math.sqrt(max(mean, 1.0))
    if hist.integration_time <= 0:
        raise ValidationError("histogram has no integration time")
    scale = (int(window) / hist.bin_width) / hist.integration_time
    return AccidentalEstimate(
        rate_per_window_per_s=mean * scale,
        stderr=(std / math.sqrt(n)) * scale,
        mean_per_bin=mean,
        n_bins=n,
    )


# Default histogram geometry for per-cell accidental estimation: the
# background is sampled out to several ns on both sides of the peak, and the
# exclusion is +-3 coincidence windows around zero delay.
_HIST_HALF_RANGE_WINDOWS = 16
_EXCLUSION_WINDOWS = 3


def _cell_analysis(bundle, windows: CoincidenceWindows, heralded, time_bin):
    """Raw counts, accidental level, and per-time-bin counts for one setting."""
    signal = bundle.streams["signal"]
    idler = bundle.streams["idler"]
    duration_s = bundle.duration_ps / PS_PER_SECOND

    if heralded:
        herald = merge_streams(bundle.streams["herald_a"], bundle.streams["herald_b"])
        window = windows.herald_window
        pair_times = matched_pair_times(signal, idler, windows.pair_window)
        ref_a, ref_b = pair_times, herald.times_ps
    else:
        window = windows.unheralded_window
        ref_a, ref_b = signal.times_ps, idler.times_ps

    raw = count_coincidences(ref_a, ref_b, window)

    half = _HIST_HALF_RANGE_WINDOWS * window
    hist = cross_histogram(ref_a, ref_b, window, (-half, half), integration_time=duration_s)
    exclusion = (-_EXCLUSION_WINDOWS * window, _EXCLUSION_WINDOWS * window)
    acc = accidental_rate(hist, window, exclusion)

    # Counts per wall-clock chunk for the error bar.
    n_chunks = max(1, int(duration_s / time_bin))
    edges_ps = (np.arange(n_chunks + 1) * (bundle.duration_ps / n_chunks)).astype(np.int64)
    chunk_counts = []
    for k in range(n_chunks):
        sel_a = ref_a[(ref_a >= edges_ps[k]) & (ref_a < edges_ps[k + 1])]
        sel_b = ref_b[(ref_b >= edges_ps[k]) & (ref_b < edges_ps[k + 1])]
        chunk_counts.append(count_coincidences(sel_a, sel_b, window))
    return raw, acc, np.array(chunk_counts, dtype=float), duration_s


def build_matrix(scan, windows: CoincidenceWindows, time_bin=5400.0, heralded=False,
                 pump_ell=None):
    """Correlation matrix over the scan's (ell_s, ell_i) settings.

    Every cell of the full product grid implied by the observed settings must
    be present.  Cell rates are accidental-corrected (per hour, correction
    from the flat histogram background, kept unclamped); errors are the
    standard deviation of rates over wall-clock time bins, scaled to the full
    integration time of the cell.  pump_ell defaults to the scan's ground
    truth when available.
    """
    if not scan:
        raise ValidationError("scan is empty")
    by_cell = {}
    pump_ells = set()
    for bundle in scan:
        if bundle.duration_ps <= 0:
            raise ValidationError(
                f"setting ({bundle.ell_s}, {bundle.ell_i}) has zero duration"
            )
        by_cell.setdefault((bundle.ell_s, bundle.ell_i), []).append(bundle)
        gt = getattr(bundle, "ground_truth", None)
        if gt is not None:
            pump_ells.add(gt.pump_ell)

    ells_s = sorted({k[0] for k in by_cell})
    ells_i = sorted({k[1] for k in by_cell})
    for ls in ells_s:
        for li in ells_i:
            if (ls, li) not in by_cell:
                raise ValidationError(f"scan is missing setting ({ls}, {li})")

    if pump_ell is None:
        if len(pump_ells) > 1:
            raise ValidationError(f"scan mixes pump charges {sorted(pump_ells)}")
        pump_ell = pump_ells.pop() if pump_ells else 0

    cells = {}
    for key, bundles in by_cell.items():
        raw_total = 0
        acc_counts = 0.0  # expected accidental counts over the cell
        total_s = 0.0
        chunks = []
        for bundle in bundles:
            raw, acc, chunk_counts, duration_s = _cell_analysis(
                bundle, windows, heralded, time_bin
            )
            raw_total += raw
            acc_counts += acc.rate_per_window_per_s * duration_s
            total_s += duration_s
            chunks.append(chunk_counts)
        rate_per_hour = (raw_total - acc_counts) / total_s * SECONDS_PER_HOUR

        all_chunks = np.concatenate(chunks)
        chunk_s = total_s / all_chunks.size
        chunk_rates = all_chunks / chunk_s * SECONDS_PER_HOUR
        if all_chunks.size > 1:
            error = float(chunk_rates.std(ddof=1)) / math.sqrt(all_chunks.size)
        else:
            error = 0.0
        # Poisson floor keeps the error meaningful for sparse cells.
        poisson_floor = math.sqrt(max(raw_total, 1.0)) / total_s * SECONDS_PER_HOUR
        error = max(error, poisson_floor)

        cells[key] = MatrixCell(
            raw=int(raw_total),
            integration_s=total_s,
            rate_per_hour=rate_per_hour,
            error_per_hour=error,
            accidental_per_hour=acc_counts / total_s * SECONDS_PER_HOUR,
        )
    return CorrelationMatrix(pump_ell=pump_ell, cells=cells, time_bin=time_bin)


def pearson(a: CorrelationMatrix, b: CorrelationMatrix):
    """Sample Pearson correlation of corrected rates over the shared cell grid."""
    if set(a.cells) != set(b.cells):
        raise ValidationError("matrices cover different cell sets")
    va, vb = a.rates(), b.rates()
    da, db = va - va.mean(), vb - vb.mean()
    norm = math.sqrt(float(da @ da) * float(db @ db))
    if norm == 0:
        raise UndefinedStatisticError("at least one matrix has zero variance across cells")
    return float(da @ db) / norm


def diagonal_fraction(m: CorrelationMatrix):
    """Share of the total corrected rate in cells with ell_s + ell_i = pump_ell."""
    total = float(sum(c.rate_per_hour for c in m.cells.values()))
    diag = float(
        sum(c.rate_per_hour for k, c in m.cells.items() if k[0] + k[1] == m.pump_ell)
    )
    if total <= 0:
        raise UndefinedStatisticError("matrix has no positive total rate")
    return min(1.0, max(0.0, diag / total))
