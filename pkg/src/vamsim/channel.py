"""Simplified broadcast medium: airtime, unit-disc range, binary LOS, collisions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import kernels
from .scenario import Obstacle
from .vam import Vam


class Outcome(enum.IntEnum):
    DELIVERED = 0
    LOST_RANGE = 1
    LOST_NLOS = 2
    LOST_RANDOM = 3
    LOST_COLLISION = 4


@dataclass(frozen=True)
class ChannelConfig:
    bitrate: float = 6_000_000
    frame_size: int = 300
    phy_overhead: int = 0
    comm_radius: float = 500.0
    p_loss_los: float = 0.0
    p_loss_nlos: float = 0.9
    collisions_enabled: bool = True
    cbr_window: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "bitrate", float(self.bitrate))
        if not (0.0 <= self.p_loss_los <= 1.0 and 0.0 <= self.p_loss_nlos <= 1.0):
            raise ValueError("loss probabilities must be in [0, 1]")
        if self.bitrate <= 0:
            raise ValueError("bitrate must be > 0")
        if self.cbr_window <= 0:
            raise ValueError("cbr_window must be > 0")
        if self.frame_size <= 0 or self.phy_overhead < 0 or self.comm_radius <= 0:
            raise ValueError("frame_size and comm_radius must be > 0, phy_overhead >= 0")


@dataclass(frozen=True)
class Frame:
    tx_id: int
    t_start: int
    airtime: int
    payload: Vam

    @property
    def t_end(self) -> int:
        return self.t_start + self.airtime


@dataclass(frozen=True)
class RxEvent:
    rx_id: int
    frame: Frame
    t_delivery: int
    outcome: Outcome


def airtime(size: int, cfg: ChannelConfig) -> int:
    """Payload airtime in whole microseconds (rounded up) plus PHY overhead."""
    if size <= 0:
        raise ValueError("size must be > 0")
    bits_us = size * 8 * 1_000_000
    if float(cfg.bitrate).is_integer():
        b = int(cfg.bitrate)
        payload = -(-bits_us // b)
    else:
        payload = math.ceil(bits_us / cfg.bitrate)
    return int(payload) + int(cfg.phy_overhead)


class ObstacleSet:
    """Obstacle edges packed into flat arrays for the LOS kernel."""

    def __init__(self, obstacles: Sequence[Obstacle] = ()):
        self.obstacles = tuple(obstacles)
        e0, e1, offs = [], [], [0]
        for ob in self.obstacles:
            for a, b in ob.edges():
                e0.append(a)
                e1.append(b)
            offs.append(len(e0))
        e0 = np.array(e0, dtype=np.float64).reshape(-1, 2)
        e1 = np.array(e1, dtype=np.float64).reshape(-1, 2)
        self.ex0, self.ey0 = np.ascontiguousarray(e0[:, 0]), np.ascontiguousarray(e0[:, 1])
        self.ex1, self.ey1 = np.ascontiguousarray(e1[:, 0]), np.ascontiguousarray(e1[:, 1])
        self.ring_offsets = np.array(offs, dtype=np.int64)

    def __bool__(self) -> bool:
        return bool(self.obstacles)

    def blocked(self, ax, ay, bx, by) -> np.ndarray:
        ax, ay, bx, by = (np.ascontiguousarray(v, dtype=np.float64) for v in (ax, ay, bx, by))
        if not self.obstacles:
            return np.zeros(ax.shape[0], dtype=bool)
        return kernels.segments_blocked(ax, ay, bx, by, self.ex0, self.ey0, self.ex1, self.ey1,
                                        self.ring_offsets)


def _as_set(obstacles) -> ObstacleSet:
    return obstacles if isinstance(obstacles, ObstacleSet) else ObstacleSet(obstacles or ())


def los_blocked(a, b, obstacles) -> bool:
    obs = _as_set(obstacles)
    return bool(obs.blocked([a[0]], [a[1]], [b[0]], [b[1]])[0])


def broadcast_outcomes(tx_pos, rx_x: np.ndarray, rx_y: np.ndarray, obstacles, cfg: ChannelConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """Pre-collision outcome codes for receivers given in ascending id order.

    One uniform draw is consumed per receiver whatever its outcome, so the
    stream position depends only on the receiver count.
    """
    n = rx_x.shape[0]
    u = rng.random(n)
    out = np.full(n, Outcome.DELIVERED, dtype=np.int8)
    d2 = (rx_x - tx_pos[0]) ** 2 + (rx_y - tx_pos[1]) ** 2
    in_range = d2 <= cfg.comm_radius * cfg.comm_radius
    out[~in_range] = Outcome.LOST_RANGE
    obs = _as_set(obstacles)
    blocked = np.zeros(n, dtype=bool)
    if obs and in_range.any():
        sel = np.nonzero(in_range)[0]
        blocked[sel] = obs.blocked(np.full(sel.shape[0], tx_pos[0]), np.full(sel.shape[0], tx_pos[1]),
                                   rx_x[sel], rx_y[sel])
    out[in_range & blocked & (u < cfg.p_loss_nlos)] = Outcome.LOST_NLOS
    out[in_range & ~blocked & (u < cfg.p_loss_los)] = Outcome.LOST_RANDOM
    return out


def broadcast(frame: Frame, receivers: dict[int, tuple[float, float]], obstacles,
              cfg: ChannelConfig, rng: np.random.Generator) -> list[RxEvent]:
    ids = sorted(r for r in receivers if r != frame.tx_id)
    xs = np.array([receivers[r][0] for r in ids], dtype=np.float64)
    ys = np.array([receivers[r][1] for r in ids], dtype=np.float64)
    codes = broadcast_outcomes(frame.payload.pos, xs, ys, obstacles, cfg, rng)
    t_del = frame.t_start + frame.airtime
    return [RxEvent(r, frame, t_del, Outcome(int(c))) for r, c in zip(ids, codes)]


def resolve_collisions(events: Sequence[RxEvent]) -> list[RxEvent]:
    """Mark overlapping would-be deliveries at the same receiver as collisions."""
    idx = [i for i, e in enumerate(events) if e.outcome is Outcome.DELIVERED]
    out = list(events)
    if len(idx) < 2:
        return out
    rx = np.array([events[i].rx_id for i in idx], dtype=np.int64)
    start = np.array([events[i].frame.t_start for i in idx], dtype=np.int64)
    end = np.array([events[i].frame.t_end for i in idx], dtype=np.int64)
    lost = kernels.collision_lost(rx, start, end)
    for k, i in enumerate(idx):
        if lost[k]:
            out[i] = replace(events[i], outcome=Outcome.LOST_COLLISION)
    return out


def cbr_sample(window_start: int, frames: Sequence[tuple[int, int]], cfg: ChannelConfig) -> float:
    """Busy fraction of ``[window_start, window_start + cbr_window)``.

    ``frames`` are ``(t_start, airtime)`` of every transmission the node could
    sense (its own included); overlapping frames count once.
    """
    if not frames:
        return 0.0
    start = np.array([f[0] for f in frames], dtype=np.int64)
    end = start + np.array([f[1] for f in frames], dtype=np.int64)
    node = np.zeros(start.shape[0], dtype=np.int64)
    busy = kernels.busy_per_window(node, start, end, 1, np.int64(window_start),
                                   np.int64(cfg.cbr_window), 1)
    return float(busy[0, 0]) / cfg.cbr_window
