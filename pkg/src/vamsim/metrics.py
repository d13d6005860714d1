"""Evaluation quantities: CBR series, VPR, mitigation ground-truth deltas, boxplot stats."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .redundancy import MitigationEvent
from .scenario import MobilityTrace, TraceError, sample_state
from .vam import distance, heading_diff


@dataclass(frozen=True)
class VprSample:
    t: int
    observer_id: int
    aware_count: int
    in_range_count: int


@dataclass(frozen=True)
class DiffRecord:
    t: int
    ego_id: int
    ref_id: int
    ego_speed_truth: float
    d_pos: float
    d_speed: float
    d_heading: float
    mode: str


@dataclass(frozen=True)
class SummaryStats:
    median: float
    q25: float
    q75: float
    whisker_low: float
    whisker_high: float
    min: float
    max: float
    n: int


@dataclass(frozen=True)
class Rect:
    """Axis-aligned region of interest."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x, y):
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


# ---------------------------------------------------------------------------
# VPR
# ---------------------------------------------------------------------------


def vpr_sample(observer_id: int, t: int, positions: Mapping[int, tuple[float, float]],
               last_rx: Mapping[int, int], radius: float = 50.0, validity: int = 10_000_000,
               observer_pos: tuple[float, float] | None = None) -> VprSample:
    """Awareness of one observer at ``t``.

    ``positions`` holds the true positions of all live VRUs; ``last_rx`` the
    latest reception time per sender at this observer.
    """
    me = observer_pos if observer_pos is not None else positions[observer_id]
    in_range = aware = 0
    for vid, pos in positions.items():
        if vid == observer_id or distance(me, pos) > radius:
            continue
        in_range += 1
        rx = last_rx.get(vid)
        if rx is not None and t - rx <= validity:
            aware += 1
    return VprSample(t, observer_id, aware, in_range)


def vpr_aggregate(samples: Iterable[VprSample]) -> float:
    """Ratio of summed awareness to summed in-range counts."""
    aware = total = 0
    for s in samples:
        aware += s.aware_count
        total += s.in_range_count
    if total == 0:
        raise ValueError("no VPR sample has a VRU in range")
    return aware / total


def vpr_ratios(aware: np.ndarray, in_range: np.ndarray) -> np.ndarray:
    """Per-sample ratios, samples with nobody in range dropped."""
    aware = np.asarray(aware)
    in_range = np.asarray(in_range)
    keep = in_range > 0
    return aware[keep] / in_range[keep]


# ---------------------------------------------------------------------------
# mitigation deltas
# ---------------------------------------------------------------------------


def diff_record(event: MitigationEvent, truth: MobilityTrace) -> DiffRecord:
    """Ground-truth deltas between ego and reference VRU at the event time.

    Raises ``TraceError`` when either VRU is not alive at ``event.t``.
    """
    ego = sample_state(truth, event.ego_id, event.t)
    ref = sample_state(truth, event.ref_id, event.t)
    return DiffRecord(
        t=event.t,
        ego_id=event.ego_id,
        ref_id=event.ref_id,
        ego_speed_truth=ego.speed,
        d_pos=distance(ego.pos, ref.pos),
        d_speed=abs(ego.speed - ref.speed),
        d_heading=heading_diff(ego.heading, ref.heading),
        mode=event.mode.value,
    )


def diff_records(events: Iterable[MitigationEvent], truth: MobilityTrace) -> tuple[list[DiffRecord], int]:
    """DiffRecords for all events plus the count dropped for a despawned VRU."""
    out, dropped = [], 0
    for ev in events:
        try:
            out.append(diff_record(ev, truth))
        except TraceError:
            dropped += 1
    return out, dropped


# ---------------------------------------------------------------------------
# boxplot statistics
# ---------------------------------------------------------------------------


def summarize(values: Sequence[float]) -> SummaryStats:
    """Median, quartiles (linear interpolation) and 1.5 IQR whiskers.

    Whiskers are data points: the most extreme values inside the fences, so
    with heavy ties a whisker may sit inside the box (``[0, 0, 0, 100]`` has
    ``q75 = 25`` but ``whisker_high = 0``).
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("summarize needs at least one value")
    q25, med, q75 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    iqr = q75 - q25
    hi_fence = q75 + 1.5 * iqr
    lo_fence = q25 - 1.5 * iqr
    whisker_high = v[v <= hi_fence].max()
    whisker_low = v[v >= lo_fence].min()
    return SummaryStats(float(med), float(q25), float(q75), float(whisker_low), float(whisker_high),
                        float(v[0]), float(v[-1]), int(v.size))


# ---------------------------------------------------------------------------
# CBR
# ---------------------------------------------------------------------------


def cbr_series(sense_node: np.ndarray, start: np.ndarray, end: np.ndarray, n_nodes: int,
               t0: int, t1: int, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Busy ratio per node for consecutive windows in ``[t0, t1)``.

    ``sense_node[k]`` senses interval ``[start[k], end[k])``. Returns
    ``(window_starts, ratio[n_nodes, n_windows])``; only whole windows count.
    """
    n_windows = max(0, (t1 - t0) // window)
    busy = kernels.busy_per_window(np.ascontiguousarray(sense_node, dtype=np.int64),
                                   np.ascontiguousarray(start, dtype=np.int64),
                                   np.ascontiguousarray(end, dtype=np.int64),
                                   int(n_nodes), np.int64(t0), np.int64(window), int(n_windows))
    starts = t0 + window * np.arange(n_windows, dtype=np.int64)
    return starts, busy / float(window)
