"""Redundancy mitigation engines: standardized LDM scan and on-receive variant."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .scenario import VruState
from .vam import (EgoRef, GenThresholds, Ldm, Vam, check_generation_rules, distance,
                  heading_diff)


class Mode(enum.Enum):
    OFF = "off"
    STANDARD = "standard"
    ADAPTED = "adapted"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown RM mode {value!r}; expected off|standard|adapted") from None


class Decision(enum.Enum):
    TRANSMIT = "transmit"
    SILENT = "silent"


@dataclass(frozen=True)
class RmConfig:
    mode: Mode = Mode.OFF
    num_skip: int = 2
    rm_heading: float = 4.0
    rm_speed: float = 0.5
    rm_dist: float = 4.0
    freshness_filter: bool = True
    apply_num_skip_in_adapted: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if not 2 <= int(self.num_skip) <= 10:
            raise ValueError("num_skip must be in [2, 10]")
        if min(self.rm_heading, self.rm_speed, self.rm_dist) <= 0:
            raise ValueError("RM thresholds must be > 0")

    def skip_window(self, th: GenThresholds) -> int:
        return int(self.num_skip) * th.t_gen_max


@dataclass
class RmNodeState:
    last_tx_time: int | None = None
    ego_ref: EgoRef | None = None
    # station_id -> (vam, rx_time); insertion order kept for determinism
    redundant_list: dict[int, tuple[Vam, int]] = field(default_factory=dict)

    def record_transmission(self, ego: VruState, now: int) -> None:
        self.last_tx_time = now
        self.ego_ref = EgoRef.of(ego, now)
        self.redundant_list.clear()


@dataclass(frozen=True)
class MitigationEvent:
    t: int
    ego_id: int
    ref_id: int
    ego_state_truth: VruState
    ref_state_truth: VruState | None
    ref_vam: Vam
    mode: Mode

    def __post_init__(self):
        if self.ego_id == self.ref_id:
            raise ValueError("mitigation reference must be another VRU")


def kinematically_redundant(ego: VruState, vam: Vam, cfg: RmConfig) -> bool:
    """Strict RM similarity between the ego state and a VAM's contents."""
    return (heading_diff(ego.heading, vam.heading) < cfg.rm_heading
            and abs(ego.speed - vam.speed) < cfg.rm_speed
            and distance(ego.pos, vam.pos) < cfg.rm_dist)


def within_skip_window(state: RmNodeState, cfg: RmConfig, th: GenThresholds, now: int) -> bool:
    return state.last_tx_time is not None and now - state.last_tx_time <= cfg.skip_window(th)


def rm_standard_check(ego: VruState, ldm: Ldm, state: RmNodeState, cfg: RmConfig,
                      th: GenThresholds, now: int) -> Vam | None:
    """Reference VAM that makes the pending ego VAM redundant, or None to send.

    Uses the stored (possibly stale) VAM contents; with ``freshness_filter``
    entries past their t_expected are skipped.
    """
    if not within_skip_window(state, cfg, th, now):
        return None
    entries = ldm.fresh_entries(now) if cfg.freshness_filter else ldm.ordered()
    for entry in entries:
        if entry.vam.station_id != ego.vru_id and kinematically_redundant(ego, entry.vam, cfg):
            return entry.vam
    return None


def rm_adapted_on_receive(ego: VruState, rx_vam: Vam, state: RmNodeState, cfg: RmConfig,
                          th: GenThresholds, now: int) -> bool:
    """Redundancy check at reception time. True when ``rx_vam`` was taken as redundant.

    A node that has never transmitted does not treat anything as redundant.
    """
    if rx_vam.station_id == ego.vru_id or state.last_tx_time is None:
        return False
    if cfg.apply_num_skip_in_adapted and not within_skip_window(state, cfg, th, now):
        return False
    if not kinematically_redundant(ego, rx_vam, cfg):
        return False
    state.ego_ref = EgoRef.of(ego, now)
    state.redundant_list.pop(rx_vam.station_id, None)
    state.redundant_list[rx_vam.station_id] = (rx_vam, now)
    return True


def rm_adapted_on_generate(ego: VruState, state: RmNodeState, cfg: RmConfig,
                           th: GenThresholds, now: int) -> Decision:
    """Periodic generation check; updates ``state`` on TRANSMIT."""
    if state.ego_ref is None or state.last_tx_time is None:
        decision = Decision.TRANSMIT
    elif cfg.apply_num_skip_in_adapted and not within_skip_window(state, cfg, th, now):
        decision = Decision.TRANSMIT
    elif check_generation_rules(ego, state.ego_ref, th, now).triggered:
        decision = Decision.TRANSMIT
    elif not state.redundant_list:
        decision = Decision.SILENT
    else:
        for sid, (vam, _rx) in list(state.redundant_list.items()):
            if check_generation_rules(ego, EgoRef.from_vam(vam), th, now).triggered:
                del state.redundant_list[sid]
        decision = Decision.SILENT if state.redundant_list else Decision.TRANSMIT
    if decision is Decision.TRANSMIT:
        state.record_transmission(ego, now)
    return decision
