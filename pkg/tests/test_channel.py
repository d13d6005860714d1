import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vamsim.channel import (ChannelConfig, Frame, ObstacleSet, Outcome, RxEvent, airtime, broadcast,
                            broadcast_outcomes, cbr_sample, los_blocked, resolve_collisions)
from vamsim.scenario import Obstacle
from vamsim.vam import Vam

CFG = ChannelConfig()
SQUARE = Obstacle(((0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)))


@pytest.mark.parametrize("size,overhead,want", [(300, 0, 400), (300, 68, 468), (1, 0, 2), (3, 0, 4)])
def test_airtime(size, overhead, want):
    assert airtime(size, ChannelConfig(phy_overhead=overhead)) == want


def test_airtime_rejects_empty_frame():
    with pytest.raises(ValueError):
        airtime(0, CFG)


def test_los_examples():
    assert not los_blocked((-5, 5), (15, 5), [])
    assert los_blocked((-5, 5), (15, 5), [SQUARE])
    assert los_blocked((-5, -5), (0, 0), [SQUARE])  # touches a vertex only
    assert not los_blocked((-5, -5), (-1, 20), [SQUARE])
    assert los_blocked((2, 2), (3, 3), [SQUARE])  # fully inside


# dyadic grid: orientation products are exact, so touching/collinear cases stay decidable
coord = st.integers(-240, 240).map(lambda k: k / 8)
size = st.integers(8, 160).map(lambda k: k / 8)


@settings(max_examples=500)
@given(coord, coord, coord, coord, size, size, coord, coord)
def test_los_matches_shapely(ax, ay, bx, by, w, h, ox, oy):
    shapely = pytest.importorskip("shapely.geometry")
    ob = Obstacle(((ox, oy), (ox + w, oy), (ox + w * 0.5, oy + h), (ox - w * 0.25, oy + h * 0.5)))
    poly = shapely.Polygon(ob.polygon)
    seg = shapely.LineString([(ax, ay), (bx, by)]) if (ax, ay) != (bx, by) else shapely.Point(ax, ay)
    assert los_blocked((ax, ay), (bx, by), [ob]) == seg.intersects(poly)


def vam(sid=1, pos=(0.0, 0.0)):
    return Vam(sid, 0, pos, 0.0, 0.0)


def test_broadcast_examples():
    rng = np.random.default_rng(0)
    fr = Frame(1, 0, 400, vam())
    out = broadcast(fr, {1: (0, 0), 2: (10, 0), 3: (501, 0), 4: (500, 0)}, [], CFG, rng)
    assert [(e.rx_id, e.outcome) for e in out] == [(2, Outcome.DELIVERED), (3, Outcome.LOST_RANGE),
                                                   (4, Outcome.DELIVERED)]
    assert all(e.t_delivery == 400 for e in out)
    bld = Obstacle(((5, -5), (6, -5), (6, 5), (5, 5)))
    forced = broadcast(fr, {2: (10, 0)}, [bld], ChannelConfig(p_loss_nlos=1.0), rng)
    assert forced[0].outcome is Outcome.LOST_NLOS


def test_one_draw_per_receiver():
    a = np.random.default_rng(5)
    b = np.random.default_rng(5)
    broadcast_outcomes((0, 0), np.array([1.0, 900.0, 3.0]), np.zeros(3), ObstacleSet(), CFG, a)
    b.random(3)
    assert a.random() == b.random()


def test_random_loss_rate():
    rng = np.random.default_rng(1)
    codes = broadcast_outcomes((0, 0), np.ones(20000), np.zeros(20000), ObstacleSet(),
                               ChannelConfig(p_loss_los=0.25), rng)
    assert np.mean(codes == Outcome.LOST_RANDOM) == pytest.approx(0.25, abs=0.01)


def ev(rx, start, air=400, outcome=Outcome.DELIVERED, tx=9):
    return RxEvent(rx, Frame(tx, start, air, vam(tx)), start + air, outcome)


def test_collision_examples():
    assert [e.outcome for e in resolve_collisions([ev(1, 0), ev(1, 400)])] == [Outcome.DELIVERED] * 2
    assert [e.outcome for e in resolve_collisions([ev(1, 0), ev(1, 399)])] == [Outcome.LOST_COLLISION] * 2
    three = resolve_collisions([ev(1, 0), ev(1, 100), ev(1, 200)])
    assert all(e.outcome is Outcome.LOST_COLLISION for e in three)
    other_rx = resolve_collisions([ev(1, 0), ev(2, 100)])
    assert all(e.outcome is Outcome.DELIVERED for e in other_rx)
    lost_first = resolve_collisions([ev(1, 0, outcome=Outcome.LOST_NLOS), ev(1, 100)])
    assert [e.outcome for e in lost_first] == [Outcome.LOST_NLOS, Outcome.DELIVERED]


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5000), st.integers(1, 800),
                          st.booleans()), max_size=25))
def test_collisions_match_pairwise_oracle(rows):
    events = [ev(r, s, a, Outcome.DELIVERED if ok else Outcome.LOST_RANDOM) for r, s, a, ok in rows]
    got = resolve_collisions(events)
    for i, e in enumerate(events):
        if e.outcome is not Outcome.DELIVERED:
            assert got[i].outcome is e.outcome
            continue
        hit = any(j != i and f.outcome is Outcome.DELIVERED and f.rx_id == e.rx_id
                  and f.frame.t_start < e.frame.t_end and e.frame.t_start < f.frame.t_end
                  for j, f in enumerate(events))
        assert got[i].outcome is (Outcome.LOST_COLLISION if hit else Outcome.DELIVERED)


def test_cbr_examples():
    assert cbr_sample(0, [], CFG) == 0.0
    assert cbr_sample(0, [(1000, 400), (30_000, 400), (70_000, 400)], CFG) == 0.012
    assert cbr_sample(0, [(5000, 400), (5000, 400)], CFG) == 0.004
    assert cbr_sample(0, [(99_800, 400), (-200, 400)], CFG) == 0.004  # clipped at both edges


def union_oracle(frames, w0, w1):
    busy = np.zeros(w1 - w0, dtype=bool)
    for s, a in frames:
        lo, hi = max(s, w0), min(s + a, w1)
        if hi > lo:
            busy[lo - w0:hi - w0] = True
    return busy.sum() / (w1 - w0)


def test_cbr_union_oracle_1000_sets():
    rng = np.random.default_rng(2024)
    cfg = ChannelConfig(cbr_window=10_000)
    for _ in range(1000):
        n = int(rng.integers(0, 30))
        frames = list(zip(rng.integers(-1000, 11_000, n).tolist(), rng.integers(1, 2000, n).tolist()))
        assert cbr_sample(0, frames, cfg) == union_oracle(frames, 0, 10_000)


@given(st.lists(st.tuples(st.integers(-500, 100_500), st.integers(1, 3000)), max_size=40),
       st.tuples(st.integers(-500, 100_500), st.integers(1, 3000)))
def test_cbr_bounded_and_monotone(frames, extra):
    a = cbr_sample(0, frames, CFG)
    b = cbr_sample(0, frames + [extra], CFG)
    assert 0.0 <= a <= b <= 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(p_loss_nlos=1.5)
    with pytest.raises(ValueError):
        ChannelConfig(bitrate=0)
    with pytest.raises(ValueError):
        ChannelConfig(cbr_window=0)
