"""VAM message model, local dynamic map and the generation-rule predicate."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .scenario import VruState


class Rule(enum.Enum):
    TIME = "time"
    HEADING = "heading"
    SPEED = "speed"
    DISTANCE = "distance"
    # reserved, never fired: trajectory interception, cluster join/leave,
    # safe distance to an approaching vehicle
    TRAJECTORY = "trajectory"
    CLUSTER = "cluster"
    SAFE_DISTANCE = "safe_distance"


@dataclass(frozen=True)
class Vam:
    station_id: int
    gen_time: int
    pos: tuple[float, float]
    speed: float
    heading: float
    size_bytes: int = 300


@dataclass(frozen=True)
class EgoRef:
    t: int
    pos: tuple[float, float]
    speed: float
    heading: float

    @classmethod
    def of(cls, state: VruState, t: int | None = None) -> "EgoRef":
        return cls(state.t if t is None else t, state.pos, state.speed, state.heading)

    @classmethod
    def from_vam(cls, vam: Vam) -> "EgoRef":
        return cls(vam.gen_time, vam.pos, vam.speed, vam.heading)


@dataclass(frozen=True)
class GenThresholds:
    delta_heading: float = 4.0
    delta_speed: float = 0.5
    delta_dist: float = 4.0
    t_gen_min: int = 100_000
    t_gen_max: int = 5_000_000

    def __post_init__(self):
        if min(self.delta_heading, self.delta_speed, self.delta_dist) <= 0:
            raise ValueError("generation thresholds must be > 0")
        if not 0 < self.t_gen_min < self.t_gen_max:
            raise ValueError("need 0 < t_gen_min < t_gen_max")


@dataclass(frozen=True)
class GenDecision:
    triggered: bool
    rules: frozenset = frozenset()


def heading_diff(a: float, b: float) -> float:
    """Absolute circular difference in [0, 180]."""
    d = abs(math.fmod(a - b, 360.0))
    return 360.0 - d if d > 180.0 else d


def distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def check_generation_rules(ego: VruState, ref: EgoRef, th: GenThresholds, now: int) -> GenDecision:
    # thresholds inclusive; callers enforce t_gen_min spacing themselves
    fired = set()
    if now - ref.t >= th.t_gen_max:
        fired.add(Rule.TIME)
    if heading_diff(ego.heading, ref.heading) >= th.delta_heading:
        fired.add(Rule.HEADING)
    if abs(ego.speed - ref.speed) >= th.delta_speed:
        fired.add(Rule.SPEED)
    if distance(ego.pos, ref.pos) >= th.delta_dist:
        fired.add(Rule.DISTANCE)
    return GenDecision(bool(fired), frozenset(fired))


def compute_t_expected(vam: Vam, rx_time: int, th: GenThresholds) -> int:
    """Latest time a follow-up VAM from the sender should have arrived.

    Assumes the sender moves no slower than its reported speed minus the speed
    threshold; at or below that speed only the maximum interval applies.
    """
    slowest = vam.speed - th.delta_speed
    if slowest <= 0:
        return rx_time + th.t_gen_max
    travel_us = math.floor(th.delta_dist / slowest * 1_000_000)
    return rx_time + min(travel_us, th.t_gen_max)


@dataclass(frozen=True)
class LdmEntry:
    vam: Vam
    rx_time: int
    t_expected: int


@dataclass
class Ldm:
    """Newest received VAM per remote station."""

    th: GenThresholds = field(default_factory=GenThresholds)
    entries: dict[int, LdmEntry] = field(default_factory=dict)

    def insert(self, vam: Vam, rx_time: int) -> bool:
        """Store ``vam`` unless an equal-or-newer one is held. True if stored."""
        cur = self.entries.get(vam.station_id)
        if cur is not None and cur.vam.gen_time >= vam.gen_time:
            return False
        self.entries[vam.station_id] = LdmEntry(vam, rx_time, compute_t_expected(vam, rx_time, self.th))
        return True

    def get(self, station_id: int) -> LdmEntry | None:
        return self.entries.get(station_id)

    def ordered(self) -> list[LdmEntry]:
        """All entries, most recent reception first (ties: lower station id)."""
        return sorted(self.entries.values(), key=lambda e: (-e.rx_time, e.vam.station_id))

    def fresh_entries(self, now: int) -> list[LdmEntry]:
        return [e for e in self.ordered() if e.t_expected >= now]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, station_id) -> bool:
        return station_id in self.entries
