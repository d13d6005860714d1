"""Deterministic discrete-event core.

One run processes events in ``(t, sequence)`` order from a heap. Per-node
runtimes own their LDM and RM state; the medium is evaluated at transmit time
(range, LOS, random loss) and at delivery time (collisions against every
frame overlapping in the air).

RNG streams are split from the master seed by name with
``numpy.random.SeedSequence(master, spawn_key=(crc32(name),))``; the streams
are ``"scenario"``, ``"phase"`` and ``"channel"``.
"""

from __future__ import annotations

import heapq
import json
import logging
import zlib
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import kernels
from .channel import ChannelConfig, ObstacleSet, Outcome, airtime, broadcast_outcomes
from .metrics import DiffRecord, Rect, SummaryStats, cbr_series, diff_record, summarize, vpr_ratios
from .redundancy import (Decision, MitigationEvent, Mode, RmConfig, RmNodeState,
                         rm_adapted_on_generate, rm_adapted_on_receive, rm_standard_check)
from .scenario import (MobilityTrace, Obstacle, TraceError, VruState, default_building,
                       gen_crossing_scenario, gen_platoon_scenario, load_obstacles, load_trace)
from .vam import GenThresholds, Ldm, Vam, check_generation_rules

log = logging.getLogger(__name__)

US = 1_000_000
NEVER = np.iinfo(np.int64).min // 4


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending setting."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class RunError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "platoon"
    seed: int | None = None
    bikes: int = 30
    red_s: float = 20.0
    accel: float = 1.0
    cruise: float = 5.0
    gap: float = 2.0
    flow_a: float = 60.0
    flow_b: float = 60.0
    trace_path: str | None = None
    obstacles_path: str | None = None


@dataclass(frozen=True)
class MetricsConfig:
    vpr_radius: float = 50.0
    vpr_validity: int | None = None  # default: num_skip * t_gen_max
    vpr_cadence: int = 100_000
    rois: tuple[Rect, ...] = ()
    observers: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    duration: int = 50 * US
    warmup: int = 10 * US
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    rm: RmConfig = field(default_factory=RmConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    thresholds: GenThresholds = field(default_factory=GenThresholds)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if self.duration <= 0:
            raise ConfigError("duration_s", "must be > 0")
        if not 0 <= self.warmup < self.duration:
            raise ConfigError("warmup_s", "must satisfy 0 <= warmup < duration")
        if self.metrics.vpr_cadence <= 0:
            raise ConfigError("metrics.vpr_cadence_ms", "must be > 0")
        if self.metrics.vpr_radius <= 0:
            raise ConfigError("metrics.vpr_radius_m", "must be > 0")

    @property
    def vpr_validity(self) -> int:
        if self.metrics.vpr_validity is not None:
            return int(self.metrics.vpr_validity)
        return self.rm.skip_window(self.thresholds)

    def with_(self, **kw) -> "RunConfig":
        """Copy with top-level fields replaced; ``mode=`` sets the RM mode."""
        if "mode" in kw:
            kw["rm"] = replace(kw.get("rm", self.rm), mode=Mode.parse(kw.pop("mode")))
        return replace(self, **kw)


def derive_seed(master: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=(zlib.crc32(name.encode()),))


def rng_stream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, name))


def build_scenario(cfg: RunConfig) -> tuple[MobilityTrace, list[Obstacle]]:
    sc = cfg.scenario
    seed = sc.seed if sc.seed is not None else int(derive_seed(cfg.seed, "scenario").generate_state(1)[0])
    dur = cfg.duration / US
    if sc.kind == "platoon":
        trace = gen_platoon_scenario(sc.bikes, sc.red_s, sc.accel, sc.cruise, sc.gap, dur, seed)
        obstacles = []
    elif sc.kind == "crossing":
        building = default_building()
        trace = gen_crossing_scenario(sc.flow_a, sc.flow_b, building, dur, seed, sc.cruise)
        obstacles = [building]
    elif sc.kind == "trace":
        if not sc.trace_path:
            raise ConfigError("scenario.trace_path", "required for kind = 'trace'")
        trace = load_trace(sc.trace_path)
        obstacles = []
    else:
        raise ConfigError("scenario.kind", f"unknown scenario {sc.kind!r}")
    if sc.obstacles_path:
        obstacles = load_obstacles(sc.obstacles_path)
    return trace, obstacles


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


@dataclass
class RunOutput:
    config: RunConfig
    frames: dict[str, np.ndarray]
    rx: dict[str, np.ndarray]
    mitigation: list[DiffRecord]
    mitigation_dropped: int
    cbr: dict[str, np.ndarray]
    vpr: dict[str, np.ndarray]
    tx_counts: dict[int, int]
    events_processed: int

    @property
    def mode(self) -> Mode:
        return self.config.rm.mode

    @property
    def seed(self) -> int:
        return self.config.seed

    def tx_times(self) -> dict[int, np.ndarray]:
        """Post-warmup transmission start times per node."""
        out = {}
        tx = self.frames["tx_id"]
        ts = self.frames["t_start_us"]
        for vid in np.unique(tx):
            out[int(vid)] = ts[tx == vid]
        return out


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

GEN_CHECK, FRAME_RX, METRIC_TICK, NODE_SPAWN, NODE_DESPAWN = range(5)
EVENT_NAMES = ("GEN_CHECK", "FRAME_RX", "METRIC_TICK", "NODE_SPAWN", "NODE_DESPAWN")


@dataclass
class _Frame:
    tx_k: int
    t_start: int
    t_end: int
    vam: Vam
    rx_li: np.ndarray     # listener indices, ascending
    codes: np.ndarray     # pre-collision outcome codes


class Simulator:
    def __init__(self, cfg: RunConfig, trace: MobilityTrace | None = None,
                 obstacles: Sequence[Obstacle] | None = None):
        self.cfg = cfg
        if trace is None:
            trace, built_obs = build_scenario(cfg)
            obstacles = built_obs if obstacles is None else obstacles
        self.trace = trace
        self.obstacles = ObstacleSet(obstacles or ())
        if len(trace) and (trace.t_start > 0 or trace.t_end < cfg.duration):
            raise TraceError(
                f"scenario spans [{trace.t_start}, {trace.t_end}] us but the run needs [0, {cfg.duration}]")
        self.mode = cfg.rm.mode
        self.th = cfg.thresholds
        self.air = airtime(cfg.channel.frame_size, cfg.channel)
        self.n_vru = len(trace)
        self.obs_pos = np.array(cfg.metrics.observers, dtype=np.float64).reshape(-1, 2)
        self.n_listen = self.n_vru + self.obs_pos.shape[0]
        self.listener_ids = np.concatenate([trace.ids, -1 - np.arange(self.obs_pos.shape[0])]).astype(np.int64)
        self.rng_phase = rng_stream(cfg.seed, "phase")
        self.rng_channel = rng_stream(cfg.seed, "channel")

        self.alive = np.zeros(self.n_vru, dtype=bool)
        self.ldm = [Ldm(self.th) for _ in range(self.n_vru)]
        self.rm = [RmNodeState() for _ in range(self.n_vru)]
        self.last_rx = np.full((self.n_listen, self.n_vru), NEVER, dtype=np.int64)

        self._heap: list = []
        self._seq = 0
        self.events_processed = 0
        self._air_frames: deque[_Frame] = deque()

        self.frame_log: list[tuple] = []
        self.rx_log: list[tuple[int, int, int, np.ndarray, np.ndarray]] = []
        self.sense_log: list[tuple[np.ndarray, int, int]] = []
        self.events: list[MitigationEvent] = []
        self.vpr_rows: list[tuple[np.ndarray, ...]] = []

    # -- queue -------------------------------------------------------------

    def schedule(self, t: int, kind: int, arg=None) -> None:
        if t > self.cfg.duration:
            return
        heapq.heappush(self._heap, (t, self._seq, kind, arg))
        self._seq += 1

    # -- state helpers -----------------------------------------------------

    def state_of(self, k: int, t: int) -> VruState:
        x, y, v, h, ok = self.trace.sample_many(np.array([k], dtype=np.int64), t)
        if not ok[0]:
            raise TraceError(f"VRU {int(self.trace.ids[k])} not alive at t={t}")
        return VruState(int(self.trace.ids[k]), t, (float(x[0]), float(y[0])), float(v[0]), float(h[0]))

    def _state_or_none(self, k: int, t: int) -> VruState | None:
        try:
            return self.state_of(k, t)
        except TraceError:
            return None

    # -- run ---------------------------------------------------------------

    def run(self) -> RunOutput:
        cfg = self.cfg
        phases = self.rng_phase.integers(0, self.th.t_gen_min, size=self.n_vru) if self.n_vru else []
        self.phase = np.asarray(phases, dtype=np.int64)
        for k in range(self.n_vru):
            spawn = max(int(self.trace.spawn[k]), 0)
            self.schedule(spawn, NODE_SPAWN, k)
            # a trace reaching the run end keeps its node alive through it
            if self.trace.despawn[k] < cfg.duration:
                self.schedule(int(self.trace.despawn[k]), NODE_DESPAWN, k)
        t = cfg.warmup
        while t < cfg.duration:
            self.schedule(t, METRIC_TICK)
            t += cfg.metrics.vpr_cadence

        handlers = (self._on_gen_check, self._on_frame_rx, self._on_metric_tick,
                    self._on_spawn, self._on_despawn)
        while self._heap:
            t, _seq, kind, arg = heapq.heappop(self._heap)
            self.events_processed += 1
            handlers[kind](t, arg)
        log.debug("seed=%d mode=%s: %d events, %d frames", cfg.seed, self.mode.value,
                  self.events_processed, len(self.frame_log))
        return self._finish()

    def _on_spawn(self, t: int, k: int) -> None:
        self.alive[k] = True
        self.schedule(t + int(self.phase[k]), GEN_CHECK, k)

    def _on_despawn(self, t: int, k: int) -> None:
        self.alive[k] = False

    def _on_gen_check(self, now: int, k: int) -> None:
        if not self.alive[k]:
            return
        nxt = now + self.th.t_gen_min
        if nxt <= self.trace.despawn[k]:
            self.schedule(nxt, GEN_CHECK, k)
        ego = self.state_of(k, now)
        st = self.rm[k]
        if st.last_tx_time is not None and now - st.last_tx_time < self.th.t_gen_min:
            return
        if self.mode is Mode.ADAPTED:
            if rm_adapted_on_generate(ego, st, self.cfg.rm, self.th, now) is Decision.TRANSMIT:
                self._transmit(k, ego, now)
            return
        if st.ego_ref is not None and not check_generation_rules(ego, st.ego_ref, self.th, now).triggered:
            return
        if self.mode is Mode.STANDARD and st.ego_ref is not None:
            ref = rm_standard_check(ego, self.ldm[k], st, self.cfg.rm, self.th, now)
            if ref is not None:
                self._mitigation(now, k, ego, ref)
                return
        st.record_transmission(ego, now)
        self._transmit(k, ego, now)

    def _mitigation(self, now: int, k: int, ego: VruState, ref: Vam) -> None:
        rk = self.trace.index_of(ref.station_id)
        self.events.append(MitigationEvent(now, ego.vru_id, ref.station_id, ego,
                                           self._state_or_none(rk, now), ref, self.mode))

    def _listener_positions(self, t: int, exclude_k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        alive = np.nonzero(self.alive)[0]
        alive = alive[alive != exclude_k]
        x, y, _v, _h, ok = self.trace.sample_many(alive, t)
        alive, x, y = alive[ok], x[ok], y[ok]
        if self.obs_pos.shape[0]:
            alive = np.concatenate([alive, self.n_vru + np.arange(self.obs_pos.shape[0])])
            x = np.concatenate([x, self.obs_pos[:, 0]])
            y = np.concatenate([y, self.obs_pos[:, 1]])
        # receivers in ascending station-id order for the RNG contract
        order = np.argsort(self.listener_ids[alive], kind="stable")
        return alive[order], x[order], y[order]

    def _transmit(self, k: int, ego: VruState, now: int) -> None:
        ch = self.cfg.channel
        vam = Vam(ego.vru_id, now, ego.pos, ego.speed, ego.heading, ch.frame_size)
        li, x, y = self._listener_positions(now, k)
        codes = broadcast_outcomes(ego.pos, x, y, self.obstacles, ch, self.rng_channel)
        fr = _Frame(k, now, now + self.air, vam, li, codes)
        self._air_frames.append(fr)
        self.frame_log.append((now, self.air, ego.vru_id, vam.gen_time, ego.pos[0], ego.pos[1],
                               ego.speed, ego.heading, vam.size_bytes))
        sensed = li[codes != Outcome.LOST_RANGE]
        self.sense_log.append((np.append(sensed, k), now, now + self.air))
        self.schedule(fr.t_end, FRAME_RX, fr)

    def _resolve(self, fr: _Frame) -> np.ndarray:
        codes = fr.codes.copy()
        if not self.cfg.channel.collisions_enabled:
            return codes
        others = [g for g in self._air_frames
                  if g is not fr and g.t_start < fr.t_end and g.t_end > fr.t_start]
        if not others:
            return codes
        parts_rx, parts_s, parts_e = [], [], []
        for g in [fr, *others]:
            d = g.rx_li[g.codes == Outcome.DELIVERED]
            parts_rx.append(d)
            parts_s.append(np.full(d.shape[0], g.t_start, dtype=np.int64))
            parts_e.append(np.full(d.shape[0], g.t_end, dtype=np.int64))
        lost = kernels.collision_lost(np.concatenate(parts_rx).astype(np.int64),
                                      np.concatenate(parts_s), np.concatenate(parts_e))
        mine = lost[: parts_rx[0].shape[0]]
        pos = np.nonzero(fr.codes == Outcome.DELIVERED)[0]
        codes[pos[mine]] = Outcome.LOST_COLLISION
        return codes

    def _on_frame_rx(self, now: int, fr: _Frame) -> None:
        codes = self._resolve(fr)
        while self._air_frames and self._air_frames[0].t_end + self.air < now:
            self._air_frames.popleft()
        self.rx_log.append((fr.t_start, self.air, fr.vam.station_id, self.listener_ids[fr.rx_li], codes))
        got = fr.rx_li[codes == Outcome.DELIVERED]
        if got.shape[0] == 0:
            return
        self.last_rx[got, fr.tx_k] = now
        vru = got[got < self.n_vru]
        vru = vru[self.alive[vru]]
        vam = fr.vam
        for k in vru:
            self.ldm[k].insert(vam, now)
        if self.mode is Mode.ADAPTED and vru.shape[0]:
            self._adapted_receive(now, vru, fr)

    def _adapted_receive(self, now: int, vru: np.ndarray, fr: _Frame) -> None:
        vam, rmc = fr.vam, self.cfg.rm
        x, y, v, h, ok = self.trace.sample_many(vru, now)
        # cheap vectorised prefilter; the scalar rule below decides
        dh = np.abs(np.mod(h - vam.heading + 180.0, 360.0) - 180.0)
        cand = ok & (np.hypot(x - vam.pos[0], y - vam.pos[1]) < rmc.rm_dist + 1e-6) \
            & (np.abs(v - vam.speed) < rmc.rm_speed + 1e-6) & (dh < rmc.rm_heading + 1e-6)
        ref_state = None
        for j in np.nonzero(cand)[0]:
            k = int(vru[j])
            ego = VruState(int(self.trace.ids[k]), now, (float(x[j]), float(y[j])), float(v[j]), float(h[j]))
            if rm_adapted_on_receive(ego, vam, self.rm[k], rmc, self.th, now):
                if ref_state is None:
                    ref_state = self._state_or_none(fr.tx_k, now)
                self.events.append(MitigationEvent(now, ego.vru_id, vam.station_id, ego, ref_state, vam,
                                                   self.mode))

    def _on_metric_tick(self, now: int, _arg) -> None:
        cfg = self.cfg
        alive = np.nonzero(self.alive)[0]
        x, y, _v, _h, ok = self.trace.sample_many(alive, now)
        alive, x, y = alive[ok], x[ok], y[ok]
        obs_li = alive
        ox, oy = x, y
        if self.obs_pos.shape[0]:
            obs_li = np.concatenate([alive, self.n_vru + np.arange(self.obs_pos.shape[0])])
            ox = np.concatenate([x, self.obs_pos[:, 0]])
            oy = np.concatenate([y, self.obs_pos[:, 1]])
        if cfg.metrics.rois:
            keep = np.zeros(obs_li.shape[0], dtype=bool)
            for r in cfg.metrics.rois:
                keep |= r.contains(ox, oy)
            obs_li, ox, oy = obs_li[keep], ox[keep], oy[keep]
        if obs_li.shape[0] == 0:
            return
        sub = np.ascontiguousarray(self.last_rx[np.ix_(obs_li, alive)])
        aware, in_range = kernels.vpr_counts(
            np.ascontiguousarray(ox), np.ascontiguousarray(oy), self.listener_ids[obs_li],
            np.ascontiguousarray(x), np.ascontiguousarray(y), self.listener_ids[alive],
            sub, np.int64(now), float(cfg.metrics.vpr_radius), np.int64(cfg.vpr_validity))
        self.vpr_rows.append((np.full(obs_li.shape[0], now, dtype=np.int64), self.listener_ids[obs_li],
                              aware, in_range))

    # -- outputs -----------------------------------------------------------

    def _finish(self) -> RunOutput:
        cfg = self.cfg
        w0 = cfg.warmup
        fl = self.frame_log
        frames = {
            "t_start_us": np.array([f[0] for f in fl], dtype=np.int64),
            "airtime_us": np.array([f[1] for f in fl], dtype=np.int64),
            "tx_id": np.array([f[2] for f in fl], dtype=np.int64),
            "gen_time_us": np.array([f[3] for f in fl], dtype=np.int64),
            "x_m": np.array([f[4] for f in fl], dtype=np.float64),
            "y_m": np.array([f[5] for f in fl], dtype=np.float64),
            "speed_mps": np.array([f[6] for f in fl], dtype=np.float64),
            "heading_deg": np.array([f[7] for f in fl], dtype=np.float64),
            "size_bytes": np.array([f[8] for f in fl], dtype=np.int64),
        }
        keep = frames["t_start_us"] >= w0
        frames = {k: v[keep] for k, v in frames.items()}

        if self.rx_log:
            lens = [r[3].shape[0] for r in self.rx_log]
            rx = {
                "t_start_us": np.repeat([r[0] for r in self.rx_log], lens).astype(np.int64),
                "airtime_us": np.repeat([r[1] for r in self.rx_log], lens).astype(np.int64),
                "tx_id": np.repeat([r[2] for r in self.rx_log], lens).astype(np.int64),
                "rx_id": np.concatenate([r[3] for r in self.rx_log]).astype(np.int64),
                "outcome": np.concatenate([r[4] for r in self.rx_log]).astype(np.int8),
            }
        else:
            rx = {k: np.zeros(0, dtype=np.int64) for k in ("t_start_us", "airtime_us", "tx_id", "rx_id")}
            rx["outcome"] = np.zeros(0, dtype=np.int8)
        # rows are in delivery order; order by (t_start, tx, rx) for a stable file
        order = np.lexsort((rx["rx_id"], rx["tx_id"], rx["t_start_us"]))
        keep = rx["t_start_us"][order] >= w0
        rx = {k: v[order][keep] for k, v in rx.items()}

        cbr = self._cbr()

        if self.vpr_rows:
            vpr = {
                "t_us": np.concatenate([r[0] for r in self.vpr_rows]),
                "observer": np.concatenate([r[1] for r in self.vpr_rows]),
                "aware": np.concatenate([r[2] for r in self.vpr_rows]).astype(np.int64),
                "in_range": np.concatenate([r[3] for r in self.vpr_rows]).astype(np.int64),
            }
        else:
            vpr = {k: np.zeros(0, dtype=np.int64) for k in ("t_us", "observer", "aware", "in_range")}

        records, dropped = [], 0
        for ev in self.events:
            if ev.t < w0:
                continue
            if ev.ref_state_truth is None:
                dropped += 1
                continue
            records.append(diff_record(ev, self.trace))
        tx_counts = {int(v): 0 for v in self.trace.ids}
        for vid in frames["tx_id"]:
            tx_counts[int(vid)] += 1
        return RunOutput(cfg, frames, rx, records, dropped, cbr, vpr, tx_counts, self.events_processed)

    def _cbr(self) -> dict[str, np.ndarray]:
        cfg = self.cfg
        win = cfg.channel.cbr_window
        if self.sense_log:
            lens = [s[0].shape[0] for s in self.sense_log]
            node = np.concatenate([s[0] for s in self.sense_log]).astype(np.int64)
            start = np.repeat([s[1] for s in self.sense_log], lens).astype(np.int64)
            end = np.repeat([s[2] for s in self.sense_log], lens).astype(np.int64)
        else:
            node = start = end = np.zeros(0, dtype=np.int64)
        starts, ratio = cbr_series(node, start, end, self.n_listen, cfg.warmup, cfg.duration, win)
        # a node reports a window only if alive for all of it
        spawn = np.concatenate([self.trace.spawn, np.full(self.obs_pos.shape[0], NEVER)])
        despawn = np.concatenate([self.trace.despawn, np.full(self.obs_pos.shape[0], -NEVER)])
        valid = (spawn[:, None] <= starts[None, :]) & (despawn[:, None] >= starts[None, :] + win)
        if cfg.metrics.rois:
            inroi = np.zeros_like(valid)
            for w, t in enumerate(starts):
                x, y, _v, _h, ok = self.trace.sample_many(np.arange(self.n_vru), int(t))
                xs = np.concatenate([x, self.obs_pos[:, 0]])
                ys = np.concatenate([y, self.obs_pos[:, 1]])
                for r in cfg.metrics.rois:
                    inroi[:, w] |= np.nan_to_num(r.contains(xs, ys), nan=False).astype(bool)
            valid &= inroi
        li, wi = np.nonzero(valid.T)[::-1]
        # order rows by (window, node)
        order = np.lexsort((self.listener_ids[li], wi))
        li, wi = li[order], wi[order]
        return {"t_us": starts[wi], "node": self.listener_ids[li], "cbr": ratio[li, wi]}


def run(cfg: RunConfig, trace: MobilityTrace | None = None,
        obstacles: Sequence[Obstacle] | None = None) -> RunOutput:
    return Simulator(cfg, trace, obstacles).run()


def _run_one(args):
    cfg, trace, obstacles = args
    try:
        return run(cfg, trace, obstacles)
    except Exception as exc:  # noqa: BLE001 - re-raised with run identity
        raise RunError(f"run seed={cfg.seed} mode={cfg.rm.mode.value} failed: {exc}") from exc


def run_matrix(base: RunConfig, seeds: Sequence[int], modes: Sequence, workers: int = 1,
               trace: MobilityTrace | None = None,
               obstacles: Sequence[Obstacle] | None = None) -> list[RunOutput]:
    """All seed x mode combinations, seeds outer, modes inner."""
    if not seeds or not modes:
        raise ValueError("seeds and modes must be non-empty")
    jobs = [(base.with_(seed=int(s), mode=m), trace, obstacles) for s in seeds for m in modes]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

# flat key -> (section, field, converter)
_S = 1_000_000
_MS = 1_000


class _us:
    def __init__(self, scale: int):
        self.scale = scale

    def __call__(self, v) -> int:
        if isinstance(v, bool):
            raise TypeError("expected a number")
        return int(round(float(v) * self.scale))

    def inverse(self, v: int):
        return v / self.scale


def _bool(v):
    if isinstance(v, bool):
        return v
    raise TypeError("expected true or false")


def _str(v):
    if isinstance(v, str):
        return v
    raise TypeError("expected a string")


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _rects(v):
    return tuple(Rect(*map(float, r)) for r in v)


def _points(v):
    return tuple((float(p[0]), float(p[1])) for p in v)


CONFIG_KEYS = {
    "seed": ("run", "seed", _int),
    "duration_s": ("run", "duration", _us(_S)),
    "warmup_s": ("run", "warmup", _us(_S)),
    "scenario.kind": ("scenario", "kind", _str),
    "scenario.seed": ("scenario", "seed", _int),
    "scenario.bikes": ("scenario", "bikes", _int),
    "scenario.red_s": ("scenario", "red_s", float),
    "scenario.accel_mps2": ("scenario", "accel", float),
    "scenario.cruise_mps": ("scenario", "cruise", float),
    "scenario.gap_m": ("scenario", "gap", float),
    "scenario.flow_a_per_min": ("scenario", "flow_a", float),
    "scenario.flow_b_per_min": ("scenario", "flow_b", float),
    "scenario.trace_path": ("scenario", "trace_path", _str),
    "scenario.obstacles_path": ("scenario", "obstacles_path", _str),
    "rm.mode": ("rm", "mode", Mode.parse),
    "rm.num_skip": ("rm", "num_skip", _int),
    "rm.heading_deg": ("rm", "rm_heading", float),
    "rm.speed_mps": ("rm", "rm_speed", float),
    "rm.dist_m": ("rm", "rm_dist", float),
    "rm.freshness_filter": ("rm", "freshness_filter", _bool),
    "rm.apply_num_skip_in_adapted": ("rm", "apply_num_skip_in_adapted", _bool),
    "gen.delta_heading_deg": ("thresholds", "delta_heading", float),
    "gen.delta_speed_mps": ("thresholds", "delta_speed", float),
    "gen.delta_dist_m": ("thresholds", "delta_dist", float),
    "gen.t_gen_min_ms": ("thresholds", "t_gen_min", _us(_MS)),
    "gen.t_gen_max_ms": ("thresholds", "t_gen_max", _us(_MS)),
    "channel.bitrate_bps": ("channel", "bitrate", float),
    "channel.frame_size_bytes": ("channel", "frame_size", _int),
    "channel.phy_overhead_us": ("channel", "phy_overhead", _int),
    "channel.comm_radius_m": ("channel", "comm_radius", float),
    "channel.p_loss_los": ("channel", "p_loss_los", float),
    "channel.p_loss_nlos": ("channel", "p_loss_nlos", float),
    "channel.collisions": ("channel", "collisions_enabled", _bool),
    "channel.cbr_window_ms": ("channel", "cbr_window", _us(_MS)),
    "metrics.vpr_radius_m": ("metrics", "vpr_radius", float),
    "metrics.vpr_validity_s": ("metrics", "vpr_validity", _us(_S)),
    "metrics.vpr_cadence_ms": ("metrics", "vpr_cadence", _us(_MS)),
    "metrics.rois": ("metrics", "rois", _rects),
    "metrics.observers": ("metrics", "observers", _points),
}
MATRIX_KEYS = {"seeds", "modes"}
_SECTIONS = {"scenario": ScenarioConfig, "rm": RmConfig, "thresholds": GenThresholds,
             "channel": ChannelConfig, "metrics": MetricsConfig}
_SECTION_PREFIX = {"scenario": "scenario", "rm": "rm", "thresholds": "gen", "channel": "channel",
                   "metrics": "metrics"}


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


@dataclass(frozen=True)
class ConfigFile:
    run: RunConfig
    seeds: tuple[int, ...]
    modes: tuple[Mode, ...]

    @property
    def is_matrix(self) -> bool:
        return len(self.seeds) * len(self.modes) > 1


def _plain(v):
    if isinstance(v, Mode):
        return v.value
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, Rect):
        return [v.x0, v.y0, v.x1, v.y1]
    return v


def config_echo(cfg: RunConfig) -> dict:
    """Flat-key mapping that ``config_from_mapping`` turns back into ``cfg``."""
    sections = {"run": cfg, "scenario": cfg.scenario, "rm": cfg.rm, "thresholds": cfg.thresholds,
                "channel": cfg.channel, "metrics": cfg.metrics}
    out = {}
    for key, (section, name, conv) in CONFIG_KEYS.items():
        v = getattr(sections[section], name)
        if v is None:
            continue
        out[key] = conv.inverse(v) if isinstance(conv, _us) else _plain(v)
    return out


def config_from_mapping(data: dict, base_dir=None) -> ConfigFile:
    """Build a config from flat dotted keys (nested tables are flattened first)."""
    flat = _flatten(data)
    parts: dict[str, dict] = {s: {} for s in ("run", *_SECTIONS)}
    for key, raw in flat.items():
        if key in MATRIX_KEYS:
            continue
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown configuration key")
        section, name, conv = CONFIG_KEYS[key]
        try:
            val = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"invalid value {raw!r} ({exc})") from None
        if name.endswith("_path") and base_dir is not None:
            val = str((Path(base_dir) / val).resolve()) if not Path(val).is_absolute() else val
        parts[section][name] = val
    built = {}
    for section, cls in _SECTIONS.items():
        try:
            built[section] = cls(**parts[section])
        except ValueError as exc:
            raise ConfigError(_SECTION_PREFIX[section], str(exc)) from None
    cfg = RunConfig(**parts["run"], **built)
    seeds = flat.get("seeds", [cfg.seed])
    modes = flat.get("modes", [cfg.rm.mode.value])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds", "must be a non-empty list of unsigned integers")
    if not isinstance(modes, list) or not modes:
        raise ConfigError("modes", "must be a non-empty list")
    try:
        modes = tuple(Mode.parse(m) for m in modes)
    except ValueError as exc:
        raise ConfigError("modes", str(exc)) from None
    return ConfigFile(cfg, tuple(int(s) for s in seeds), modes)


def load_config(path) -> ConfigFile:

    p = Path(path)
    try:
        with p.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {p}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("--config", f"cannot parse {p}: {exc}") from None
    return config_from_mapping(data, base_dir=p.parent)


# ---------------------------------------------------------------------------
# writing outputs
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1
OUTCOME_NAMES = np.array([o.name for o in Outcome])


def _fmt_col(a: np.ndarray) -> list[str]:
    if a.dtype.kind in "iub":
        return a.astype(np.int64).astype(str).tolist()
    if a.dtype.kind == "f":
        return [repr(float(x)) for x in a]
    return [str(x) for x in a]


def write_csv(path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    cols = [_fmt_col(np.asarray(c)) for c in columns]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(row) + "\n")


def summary_rows(out: RunOutput) -> list[tuple[str, SummaryStats]]:
    rows = []
    series = {
        "cbr": out.cbr["cbr"],
        "vpr": vpr_ratios(out.vpr["aware"], out.vpr["in_range"]),
        "ego_speed": np.array([r.ego_speed_truth for r in out.mitigation]),
        "d_pos": np.array([r.d_pos for r in out.mitigation]),
        "d_speed": np.array([r.d_speed for r in out.mitigation]),
        "d_heading": np.array([r.d_heading for r in out.mitigation]),
    }
    for name, vals in series.items():
        if len(vals):
            rows.append((name, summarize(vals)))
    return rows


SUMMARY_HEADER = ["metric", "mode", "median", "q25", "q75", "wlow", "whigh", "min", "max", "n"]


def write_output(out: RunOutput, out_dir) -> None:
    """Write the CSV set plus ``manifest.json`` into ``out_dir``."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    f = out.frames
    write_csv(d / "frames.csv", list(f.keys()), list(f.values()))
    rx = out.rx
    write_csv(d / "rx.csv", ["t_start_us", "airtime_us", "tx_id", "rx_id", "outcome"],
              [rx["t_start_us"], rx["airtime_us"], rx["tx_id"], rx["rx_id"], OUTCOME_NAMES[rx["outcome"]]])
    write_csv(d / "cbr.csv", ["t_us", "node", "cbr"], [out.cbr["t_us"], out.cbr["node"], out.cbr["cbr"]])
    v = out.vpr
    write_csv(d / "vpr.csv", ["t_us", "observer", "aware", "in_range"],
              [v["t_us"], v["observer"], v["aware"], v["in_range"]])
    m = out.mitigation
    write_csv(d / "mitigation.csv",
              ["t_us", "mode", "ego", "ref", "ego_speed", "d_pos", "d_speed", "d_heading"],
              [np.array([r.t for r in m], dtype=np.int64), np.array([r.mode for r in m], dtype=object),
               np.array([r.ego_id for r in m], dtype=np.int64), np.array([r.ref_id for r in m], dtype=np.int64),
               np.array([r.ego_speed_truth for r in m], dtype=np.float64),
               np.array([r.d_pos for r in m], dtype=np.float64),
               np.array([r.d_speed for r in m], dtype=np.float64),
               np.array([r.d_heading for r in m], dtype=np.float64)])
    srows = summary_rows(out)
    write_csv(d / "summary.csv", SUMMARY_HEADER,
              [np.array([n for n, _ in srows], dtype=object),
               np.array([out.mode.value] * len(srows), dtype=object),
               *[np.array([getattr(s, a) for _, s in srows], dtype=np.float64)
                 for a in ("median", "q25", "q75", "whisker_low", "whisker_high", "min", "max")],
               np.array([s.n for _, s in srows], dtype=np.int64)])
    ids = sorted(out.tx_counts)
    write_csv(d / "tx_counts.csv", ["node", "tx_count"],
              [np.array(ids, dtype=np.int64), np.array([out.tx_counts[i] for i in ids], dtype=np.int64)])
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "run",
        "seed": out.seed,
        "mode": out.mode.value,
        "mitigation_dropped": out.mitigation_dropped,
        "config": config_echo(out.config),
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_dir_name(index: int, out: RunOutput) -> str:
    return f"run{index:03d}_{out.mode.value}_seed{out.seed}"


def write_matrix(outputs: Sequence[RunOutput], out_dir) -> list:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for i, o in enumerate(outputs):
        name = run_dir_name(i, o)
        write_output(o, d / name)
        names.append({"dir": name, "seed": o.seed, "mode": o.mode.value})
    manifest = {"format_version": FORMAT_VERSION, "kind": "matrix", "runs": names}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return [d / n["dir"] for n in names]
