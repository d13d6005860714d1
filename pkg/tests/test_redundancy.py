import pytest
from hypothesis import given
from hypothesis import strategies as st

from vamsim.redundancy import (Decision, MitigationEvent, Mode, RmConfig, RmNodeState, rm_adapted_on_generate,
                               rm_adapted_on_receive, rm_standard_check)
from vamsim.scenario import VruState
from vamsim.vam import EgoRef, GenThresholds, Ldm, Vam

TH = GenThresholds()
S = 1_000_000


def ego(pos=(0.0, 0.0), speed=2.0, heading=90.0, t=0, vid=1):
    return VruState(vid, t, pos, speed, heading)


def vam(sid=2, pos=(2.0, 0.0), speed=2.1, heading=91.0, gen=0):
    return Vam(sid, gen, pos, speed, heading)


def state_sent_at(t, e=None):
    st_ = RmNodeState()
    st_.record_transmission(e or ego(t=t), t)
    return st_


def ldm_with(v, rx):
    ldm = Ldm(TH)
    ldm.insert(v, rx)
    return ldm


def test_mode_parse():
    assert Mode.parse("ADAPTED") is Mode.ADAPTED
    with pytest.raises(ValueError):
        Mode.parse("fast")


def test_config_validation():
    with pytest.raises(ValueError):
        RmConfig(num_skip=1)
    with pytest.raises(ValueError):
        RmConfig(num_skip=11)
    with pytest.raises(ValueError):
        RmConfig(rm_dist=0)
    assert RmConfig(num_skip=10).skip_window(TH) == 50 * S


def test_standard_suppresses_on_clear_match():
    cfg = RmConfig(Mode.STANDARD)
    now = 3 * S
    v = vam(gen=now - 100_000)
    got = rm_standard_check(ego(t=now), ldm_with(v, now - 99_600), state_sent_at(0), cfg, TH, now)
    assert got == v


def test_standard_rule_i_window():
    cfg = RmConfig(Mode.STANDARD)
    now = 10 * S + 1000
    v = vam(gen=now - 100_000)
    ldm = ldm_with(v, now - 99_600)
    assert rm_standard_check(ego(t=now), ldm, state_sent_at(1000), cfg, TH, now) is not None
    assert rm_standard_check(ego(t=now + 1000), ldm, state_sent_at(1000), cfg, TH, now + 1000) is None


def test_standard_strict_distance():
    cfg = RmConfig(Mode.STANDARD)
    v = vam(pos=(4.0, 0.0), speed=2.0, heading=90.0, gen=S)
    assert rm_standard_check(ego(t=S), ldm_with(v, S), state_sent_at(0), cfg, TH, S) is None


def test_standard_freshness_toggle():
    v = vam(speed=2.0, heading=90.0, gen=0)
    ldm = ldm_with(v, 0)  # t_expected = 2.666 s at 2 m/s
    now = 3 * S
    on = RmConfig(Mode.STANDARD)
    off = RmConfig(Mode.STANDARD, freshness_filter=False)
    assert rm_standard_check(ego(t=now), ldm, state_sent_at(S), on, TH, now) is None
    assert rm_standard_check(ego(t=now), ldm, state_sent_at(S), off, TH, now) == v


def test_standard_scan_prefers_newest_and_skips_self():
    ldm = Ldm(TH)
    older, newer = vam(sid=3, gen=1), vam(sid=4, gen=2)
    ldm.insert(older, 100)
    ldm.insert(newer, 200)
    ldm.insert(vam(sid=1, gen=3), 300)  # own id never matches
    got = rm_standard_check(ego(t=1000), ldm, state_sent_at(0), RmConfig(Mode.STANDARD), TH, 1000)
    assert got == newer


def test_adapted_receive_redundant():
    st_ = state_sent_at(0)
    now = S
    e = ego(pos=(1.0, 0.0), t=now)
    assert rm_adapted_on_receive(e, vam(pos=(2.0, 0.0), speed=2.0, heading=90.0, gen=now), st_,
                                 RmConfig(Mode.ADAPTED), TH, now)
    assert st_.ego_ref == EgoRef.of(e, now)
    assert list(st_.redundant_list) == [2]


def test_adapted_receive_far_vam_no_change():
    st_ = state_sent_at(0)
    before = (st_.ego_ref, dict(st_.redundant_list))
    assert not rm_adapted_on_receive(ego(t=S), vam(pos=(5.0, 0.0)), st_, RmConfig(Mode.ADAPTED), TH, S)
    assert (st_.ego_ref, st_.redundant_list) == before


def test_adapted_receive_dedup_newest_kept():
    st_ = state_sent_at(0)
    cfg = RmConfig(Mode.ADAPTED)
    a, b = vam(gen=S), vam(gen=2 * S)
    rm_adapted_on_receive(ego(t=S), a, st_, cfg, TH, S)
    rm_adapted_on_receive(ego(t=2 * S), b, st_, cfg, TH, 2 * S)
    assert st_.redundant_list == {2: (b, 2 * S)}


def test_adapted_receive_never_transmitted_and_window():
    cfg = RmConfig(Mode.ADAPTED)
    fresh = RmNodeState()
    assert not rm_adapted_on_receive(ego(t=S), vam(), fresh, cfg, TH, S)
    old = state_sent_at(0)
    assert not rm_adapted_on_receive(ego(t=11 * S), vam(), old, cfg, TH, 11 * S)
    no_cap = RmConfig(Mode.ADAPTED, apply_num_skip_in_adapted=False)
    assert rm_adapted_on_receive(ego(t=11 * S), vam(), old, no_cap, TH, 11 * S)


def test_adapted_generate_branches():
    cfg = RmConfig(Mode.ADAPTED)
    # (1) drifted 4.2 m from ego_ref
    st_ = state_sent_at(0)
    st_.redundant_list[2] = (vam(), 0)
    assert rm_adapted_on_generate(ego(pos=(4.2, 0.0), t=S), st_, cfg, TH, S) is Decision.TRANSMIT
    assert st_.redundant_list == {} and st_.last_tx_time == S
    # (2) nothing redundant and nothing changed
    st_ = state_sent_at(0)
    assert rm_adapted_on_generate(ego(t=S), st_, cfg, TH, S) is Decision.SILENT
    # (3) listed VAM still within thresholds
    st_ = state_sent_at(0)
    st_.redundant_list[2] = (vam(pos=(1.0, 0.0), speed=2.0, heading=90.0, gen=S), S)
    assert rm_adapted_on_generate(ego(t=S + 100_000), st_, cfg, TH, S + 100_000) is Decision.SILENT
    assert 2 in st_.redundant_list
    # (3) listed VAM 4.1 m away -> removed -> transmit
    st_ = state_sent_at(0)
    st_.redundant_list[2] = (vam(pos=(4.1, 0.0), speed=2.0, heading=90.0, gen=S), S)
    assert rm_adapted_on_generate(ego(t=S + 100_000), st_, cfg, TH, S + 100_000) is Decision.TRANSMIT
    assert st_.redundant_list == {}


def test_adapted_generate_time_rule_uses_listed_gen_time():
    cfg = RmConfig(Mode.ADAPTED)
    st_ = state_sent_at(0)
    listed = vam(pos=(0.0, 0.0), speed=2.0, heading=90.0, gen=S)
    st_.redundant_list[2] = (listed, 2 * S)
    st_.ego_ref = EgoRef.of(ego(t=5 * S), 5 * S)
    # 5 s after the listed VAM's gen_time the entry fails TIME, even though rx was later
    assert rm_adapted_on_generate(ego(t=6 * S), st_, cfg, TH, 6 * S) is Decision.TRANSMIT


def test_adapted_generate_first_and_cap():
    cfg = RmConfig(Mode.ADAPTED)
    assert rm_adapted_on_generate(ego(), RmNodeState(), cfg, TH, 0) is Decision.TRANSMIT
    st_ = state_sent_at(0)
    st_.redundant_list[2] = (vam(gen=9 * S), 9 * S)
    st_.ego_ref = EgoRef.of(ego(t=9 * S), 9 * S)
    assert rm_adapted_on_generate(ego(t=10 * S), st_, cfg, TH, 10 * S) is Decision.SILENT
    assert rm_adapted_on_generate(ego(t=10 * S + 1), st_, cfg, TH, 10 * S + 1) is Decision.TRANSMIT


def test_mitigation_event_rejects_self_reference():
    e = ego()
    with pytest.raises(ValueError):
        MitigationEvent(0, 1, 1, e, e, vam(sid=1), Mode.STANDARD)


kin = st.tuples(st.floats(-6, 6), st.floats(-6, 6), st.floats(0, 6), st.floats(0, 360))


@given(st.lists(st.tuples(st.sampled_from(["rx", "gen"]), kin, st.integers(2, 5)), max_size=40))
def test_adapted_state_machine_invariants(steps):
    cfg = RmConfig(Mode.ADAPTED)
    st_ = RmNodeState()
    now = 0
    for kind, (x, y, v, h), sid in steps:
        now += 100_000
        e = ego(pos=(x, y), speed=v, heading=h, t=now)
        if kind == "rx":
            rm_adapted_on_receive(e, Vam(sid, now, (x * 0.9, y), v, h), st_, cfg, TH, now)
        else:
            d = rm_adapted_on_generate(e, st_, cfg, TH, now)
            if d is Decision.TRANSMIT:
                assert st_.redundant_list == {} and st_.last_tx_time == now
        assert len(st_.redundant_list) == len(set(st_.redundant_list))
        if st_.last_tx_time is not None and st_.redundant_list:
            assert now - st_.last_tx_time <= cfg.skip_window(TH)
