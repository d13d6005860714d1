"""Ground-truth mobility: CSV traces, synthetic generators, obstacle geometry.

Coordinates live in a flat local plane (meters). Headings are compass
degrees: 0 points along +y, 90 along +x. Times are integer microseconds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels

US_PER_S = 1_000_000


class TraceError(ValueError):
    """Malformed trace/obstacle input, or a query outside a trace."""


@dataclass(frozen=True)
class VruState:
    vru_id: int
    t: int
    pos: tuple[float, float]
    speed: float
    heading: float


@dataclass(frozen=True)
class Obstacle:
    polygon: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = [tuple(map(float, p)) for p in self.polygon]
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts = pts[:-1]
        if len(pts) < 3:
            raise TraceError("obstacle needs at least 3 distinct vertices")
        object.__setattr__(self, "polygon", tuple(pts))

    def edges(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        pts = self.polygon
        return [(pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts))]


def normalize_heading(h: float) -> float:
    h = math.fmod(h, 360.0)
    if h < 0:
        h += 360.0
    return 0.0 if h >= 360.0 else h


class MobilityTrace:
    """Immutable per-VRU sample tracks with linear interpolation.

    ``samples`` maps vru_id to a sequence of ``(t_us, x, y, speed, heading)``.
    """

    def __init__(self, samples: dict[int, Sequence[tuple]], t_start: int | None = None,
                 t_end: int | None = None):
        ids = sorted(samples)
        ts, xs, ys, vs, hs = [], [], [], [], []
        offsets = [0]
        for vid in ids:
            rows = sorted(samples[vid], key=lambda r: r[0])
            if len(rows) < 2:
                raise TraceError(f"VRU {vid} has a single sample; need at least 2")
            arr_t = np.array([int(r[0]) for r in rows], dtype=np.int64)
            if np.any(np.diff(arr_t) <= 0):
                dup = int(arr_t[np.nonzero(np.diff(arr_t) <= 0)[0][0]])
                raise TraceError(f"duplicate sample for VRU {vid} at t={dup}")
            for r in rows:
                if float(r[3]) < 0 or not all(math.isfinite(float(c)) for c in r[1:5]):
                    raise TraceError(f"invalid sample for VRU {vid} at t={int(r[0])}")
            ts.append(arr_t)
            xs.append([float(r[1]) for r in rows])
            ys.append([float(r[2]) for r in rows])
            vs.append([float(r[3]) for r in rows])
            hs.append([normalize_heading(float(r[4])) for r in rows])
            offsets.append(offsets[-1] + len(rows))
        self.ids = np.array(ids, dtype=np.int64)
        self._index = {vid: k for k, vid in enumerate(ids)}
        cat = (lambda parts, dt: np.concatenate(parts).astype(dt)) if ids else (
            lambda parts, dt: np.zeros(0, dtype=dt))
        self.t = cat(ts, np.int64)
        self.x = cat(xs, np.float64)
        self.y = cat(ys, np.float64)
        self.v = cat(vs, np.float64)
        self.h = cat(hs, np.float64)
        self.offsets = np.array(offsets, dtype=np.int64)
        self.keys = kernels.track_keys(self.t, self.offsets)
        for a in (self.t, self.x, self.y, self.v, self.h, self.offsets, self.keys):
            a.flags.writeable = False
        self.spawn = self.t[self.offsets[:-1]] if ids else np.zeros(0, dtype=np.int64)
        self.despawn = self.t[self.offsets[1:] - 1] if ids else np.zeros(0, dtype=np.int64)
        self.t_start = int(t_start if t_start is not None else (self.spawn.min() if ids else 0))
        self.t_end = int(t_end if t_end is not None else (self.despawn.max() if ids else 0))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def vru_ids(self) -> list[int]:
        return [int(i) for i in self.ids]

    def index_of(self, vru_id: int) -> int:
        try:
            return self._index[int(vru_id)]
        except KeyError:
            raise TraceError(f"unknown VRU id {vru_id}") from None

    def lifespan(self, vru_id: int) -> tuple[int, int]:
        k = self.index_of(vru_id)
        return int(self.spawn[k]), int(self.despawn[k])

    def samples(self, vru_id: int) -> list[VruState]:
        k = self.index_of(vru_id)
        lo, hi = self.offsets[k], self.offsets[k + 1]
        return [
            VruState(int(vru_id), int(self.t[j]), (float(self.x[j]), float(self.y[j])),
                     float(self.v[j]), float(self.h[j]))
            for j in range(lo, hi)
        ]

    def sample_many(self, idx: np.ndarray, t: int):
        """Vectorised interpolation for dense track indices -> (x, y, v, h, ok)."""
        return kernels.interp_tracks(self.t, self.keys, self.x, self.y, self.v, self.h,
                                     self.offsets, np.asarray(idx, dtype=np.int64), np.int64(t))

    def alive_mask(self, t: int) -> np.ndarray:
        return (self.spawn <= t) & (self.despawn >= t)

    def rows(self) -> Iterable[tuple[int, int, float, float, float, float]]:
        for k, vid in enumerate(self.ids):
            for j in range(self.offsets[k], self.offsets[k + 1]):
                yield (int(self.t[j]), int(vid), float(self.x[j]), float(self.y[j]),
                       float(self.v[j]), float(self.h[j]))


def sample_state(trace: MobilityTrace, vru_id: int, t: int) -> VruState:
    """Ground-truth state of one VRU at ``t``; errors outside its lifespan."""
    k = trace.index_of(vru_id)
    x, y, v, h, ok = trace.sample_many(np.array([k]), int(t))
    if not ok[0]:
        lo, hi = trace.lifespan(vru_id)
        raise TraceError(f"t={t} outside lifespan [{lo}, {hi}] of VRU {vru_id}")
    return VruState(int(vru_id), int(t), (float(x[0]), float(y[0])), float(v[0]), float(h[0]))


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

TRACE_HEADER = ["t_us", "id", "x_m", "y_m", "speed_mps", "heading_deg"]
OBSTACLE_HEADER = ["obstacle_id", "vertex_index", "x_m", "y_m"]


def _data_lines(path: Path, meta: dict | None = None):
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if s.startswith("#"):
                if meta is not None and "=" in s:
                    k, _, v = s[1:].partition("=")
                    meta[k.strip()] = v.strip()
                continue
            if not s:
                continue
            yield lineno, next(csv.reader([s]))


def load_trace(path, format: str = "csv") -> MobilityTrace:
    if format != "csv":
        raise TraceError(f"unsupported trace format {format!r}")
    path = Path(path)
    samples: dict[int, list[tuple]] = {}
    seen: set[tuple[int, int]] = set()
    meta: dict[str, str] = {}
    first = True
    for lineno, fields in _data_lines(path, meta):
        if first:
            first = False
            if fields and fields[0].strip().lower() == "t_us":
                continue
        if len(fields) != 6:
            raise TraceError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
        try:
            t = int(float(fields[0]))
            vid = int(fields[1])
            x, y, v, h = (float(f) for f in fields[2:])
        except ValueError as exc:
            raise TraceError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(c) for c in (x, y, v, h)):
            raise TraceError(f"{path}:{lineno}: non-finite value")
        if v < 0:
            raise TraceError(f"{path}:{lineno}: negative speed {v}")
        if (vid, t) in seen:
            raise TraceError(f"{path}:{lineno}: duplicate sample for VRU {vid} at t={t}")
        seen.add((vid, t))
        samples.setdefault(vid, []).append((t, x, y, v, h))
    if not samples:
        raise TraceError(f"{path}: no samples")
    # time 0 is the scenario origin unless a "# span_us=a,b" comment says otherwise
    t_first = min(r[0] for rows in samples.values() for r in rows)
    t_last = max(r[0] for rows in samples.values() for r in rows)
    t_start, t_end = min(0, t_first), t_last
    if "span_us" in meta:
        try:
            t_start, t_end = (int(v) for v in meta["span_us"].split(","))
        except ValueError:
            raise TraceError(f"{path}: malformed span_us comment {meta['span_us']!r}") from None
    return MobilityTrace(samples, t_start=t_start, t_end=t_end)


def write_trace(trace: MobilityTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        fh.write(f"# span_us={trace.t_start},{trace.t_end}\n")
        w.writerow(TRACE_HEADER)
        for row in trace.rows():
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), repr(row[4]), repr(row[5])])


def load_obstacles(path) -> list[Obstacle]:
    path = Path(path)
    verts: dict[int, list[tuple[int, float, float]]] = {}
    first = True
    for lineno, fields in _data_lines(path):
        if first:
            first = False
            if fields and fields[0].strip().lower() == "obstacle_id":
                continue
        if len(fields) != 4:
            raise TraceError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
        try:
            oid, vi = int(fields[0]), int(fields[1])
            x, y = float(fields[2]), float(fields[3])
        except ValueError as exc:
            raise TraceError(f"{path}:{lineno}: {exc}") from None
        verts.setdefault(oid, []).append((vi, x, y))
    return [Obstacle(tuple((x, y) for _, x, y in sorted(verts[o]))) for o in sorted(verts)]


def write_obstacles(obstacles: Sequence[Obstacle], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OBSTACLE_HEADER)
        for oid, ob in enumerate(obstacles):
            for vi, (x, y) in enumerate(ob.polygon):
                w.writerow([oid, vi, repr(x), repr(y)])


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

SAMPLE_STEP_US = 100_000


def gen_platoon_scenario(n_bikes: int = 30, red_duration: float = 20.0, accel: float = 1.0,
                         cruise_speed: float = 5.0, gap: float = 2.0, duration: float = 50.0,
                         seed: int = 0) -> MobilityTrace:
    """Bikes queued at a red light that all depart when it turns green.

    Bike ``i`` waits at ``x = -i * gap`` heading east (90 deg), departs at
    ``red_duration + d_i`` with ``d_i ~ U[0, 1] s`` and accelerates at
    ``accel`` up to ``cruise_speed``.
    """
    if n_bikes < 1:
        raise ValueError("n_bikes must be >= 1")
    if accel <= 0 or cruise_speed <= 0 or gap <= 0:
        raise ValueError("accel, cruise_speed and gap must be > 0")
    if duration <= 0 or red_duration < 0:
        raise ValueError("duration must be > 0 and red_duration >= 0")
    rng = np.random.default_rng(seed)
    delays = rng.uniform(0.0, 1.0, size=n_bikes)
    t_end = int(round(duration * US_PER_S))
    grid = list(range(0, t_end + 1, SAMPLE_STEP_US))
    if grid[-1] != t_end:
        grid.append(t_end)
    t_acc = cruise_speed / accel
    samples = {}
    for i in range(n_bikes):
        x0 = -i * gap
        depart = int(round((red_duration + delays[i]) * US_PER_S))
        reach = depart + int(round(t_acc * US_PER_S))
        times = sorted({*grid, *(t for t in (depart, reach) if 0 <= t <= t_end)})
        rows = []
        for t in times:
            dt = (t - depart) / US_PER_S
            if dt <= 0:
                s, v = 0.0, 0.0
            elif dt < t_acc:
                s, v = 0.5 * accel * dt * dt, accel * dt
            else:
                s = 0.5 * accel * t_acc * t_acc + cruise_speed * (dt - t_acc)
                v = cruise_speed
            rows.append((t, x0 + s, 0.0, v, 90.0))
        samples[i + 1] = rows
    return MobilityTrace(samples, t_start=0, t_end=t_end)


CROSSING_HALF_LENGTH = 150.0
CROSSING_MARGIN = 3.0


def default_building(half_length: float = CROSSING_HALF_LENGTH,
                     margin: float = CROSSING_MARGIN) -> Obstacle:
    """Block filling the quadrant between the two approach roads."""
    return Obstacle(((-half_length, -half_length), (-margin, -half_length),
                     (-margin, -margin), (-half_length, -margin)))


def on_crossing_approach(pos: tuple[float, float], margin: float = CROSSING_MARGIN) -> str | None:
    """'a' / 'b' when ``pos`` lies on the shadowed approach of road A / B."""
    x, y = pos
    if abs(y) < 1e-9 and x <= -2 * margin:
        return "a"
    if abs(x) < 1e-9 and y <= -2 * margin:
        return "b"
    return None


def gen_crossing_scenario(flow_a: float = 60.0, flow_b: float = 60.0,
                          building: Obstacle | None = None, duration: float = 50.0,
                          seed: int = 0, cruise_speed: float = 5.0,
                          half_length: float = CROSSING_HALF_LENGTH) -> MobilityTrace:
    """Two perpendicular bike streams meeting at the origin.

    Road A runs west->east along y = 0, road B south->north along x = 0, both
    from ``-half_length`` to ``+half_length``. Arrivals are Poisson with the
    given rates (bikes/min). ``building`` is only validated here; the default
    sits between the two approaches.
    """
    if flow_a < 0 or flow_b < 0:
        raise ValueError("flows must be >= 0")
    if duration <= 0 or cruise_speed <= 0 or half_length <= 0:
        raise ValueError("duration, cruise_speed and half_length must be > 0")
    building = building or default_building(half_length)
    xs = [p[0] for p in building.polygon]
    ys = [p[1] for p in building.polygon]
    if max(xs) > 0 or max(ys) > 0:
        raise ValueError("building must lie in the quadrant between the approaches (x, y <= 0)")
    rng = np.random.default_rng(seed)
    t_end = int(round(duration * US_PER_S))
    travel = int(round(2 * half_length / cruise_speed * US_PER_S))
    samples = {}
    vid = 1
    for flow, heading in ((flow_a, 90.0), (flow_b, 0.0)):
        n = int(rng.poisson(flow * duration / 60.0))
        arrivals = np.sort(rng.uniform(0.0, duration, size=n))
        for a in arrivals:
            t0 = int(round(a * US_PER_S))
            t1 = t0 + travel
            if heading == 90.0:
                p0, p1 = (-half_length, 0.0), (half_length, 0.0)
            else:
                p0, p1 = (0.0, -half_length), (0.0, half_length)
            samples[vid] = [(t0, *p0, cruise_speed, heading), (t1, *p1, cruise_speed, heading)]
            vid += 1
    return MobilityTrace(samples, t_start=0, t_end=t_end)
