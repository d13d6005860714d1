"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
lists all criteria at the end.
"""

from __future__ import annotations

import hashlib
import time

import numpy as np
import pytest

from vamsim.channel import ChannelConfig, airtime, cbr_sample
from vamsim.cli import compare_outputs
from vamsim.engine import MetricsConfig, RunConfig, ScenarioConfig, run, write_output
from vamsim.metrics import VprSample, vpr_aggregate
from vamsim.scenario import MobilityTrace
from vamsim.vam import GenThresholds, Vam, compute_t_expected

S = 1_000_000
SEEDS = [0, 1, 2, 3]
MODES = ["off", "standard", "adapted"]
CHECK = 100_000
CAP = 10 * S


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # load/compile the numba kernels before anything is timed
    run(RunConfig(duration=2 * S, warmup=S, scenario=ScenarioConfig(bikes=3)).with_(mode="adapted"))


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def silences(out) -> np.ndarray:
    """Post-warmup silent intervals per node, trailing silence included."""
    cfg = out.config
    gaps = []
    lifespans = out_lifespans(out)
    tx = out.tx_times()
    for vid, (spawn, despawn) in lifespans.items():
        lo = max(spawn, cfg.warmup)
        hi = min(despawn, cfg.duration)
        if hi - lo <= 0:
            continue
        ts = tx.get(vid, np.zeros(0, dtype=np.int64))
        edges = np.concatenate([[lo], ts, [hi]])
        gaps.append(np.diff(edges))
    return np.concatenate(gaps) if gaps else np.zeros(0)


_LIFESPANS: dict[int, dict[int, tuple[int, int]]] = {}


def out_lifespans(out):
    return _LIFESPANS[id(out)]


def remember(outs, traces):
    for o, tr in zip(outs, traces):
        _LIFESPANS[id(o)] = {v: tr.lifespan(v) for v in tr.vru_ids}


def run_with_trace(cfg: RunConfig):
    from vamsim.engine import build_scenario

    trace, obstacles = build_scenario(cfg)
    out = run(cfg, trace=trace, obstacles=obstacles)
    remember([out], [trace])
    return out


def matrix(base: RunConfig, modes):
    return [run_with_trace(base.with_(seed=s, mode=m)) for s in SEEDS for m in modes]


def csv_digest(out, path) -> str:
    write_output(out, path)
    h = hashlib.sha256()
    for f in sorted(path.glob("*.csv")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# shared acceptance runs
# ---------------------------------------------------------------------------

CFG1 = RunConfig(seed=0, duration=60 * S, scenario=ScenarioConfig(bikes=30)).with_(mode="off")
CFG4 = RunConfig(scenario=ScenarioConfig(bikes=50, gap=1.5))
CFG5 = RunConfig(scenario=ScenarioConfig(kind="crossing"), channel=ChannelConfig(p_loss_nlos=0.9))
CFG6 = RunConfig(scenario=ScenarioConfig(bikes=80))
CFG12 = RunConfig(seed=0, duration=200 * S, warmup=20 * S)


@pytest.fixture(scope="module")
def runs1():
    return timed(lambda: run_with_trace(CFG1))


@pytest.fixture(scope="module")
def runs4():
    return timed(lambda: matrix(CFG4, ["adapted"]))


@pytest.fixture(scope="module")
def runs5():
    return timed(lambda: matrix(CFG5, ["standard"]))


@pytest.fixture(scope="module")
def runs6():
    return timed(lambda: matrix(CFG6, MODES))


def colocated(n: int, duration: int) -> MobilityTrace:
    return MobilityTrace({i + 1: [(0, 0.0, 0.0, 0.0, 90.0), (duration, 0.0, 0.0, 0.0, 90.0)]
                          for i in range(n)})


@pytest.fixture(scope="module")
def runs12():
    single_tr, pair_tr = colocated(1, CFG12.duration), colocated(2, CFG12.duration)
    single = run(CFG12.with_(mode="off"), trace=single_tr)
    pair = run(CFG12.with_(mode="adapted"), trace=pair_tr)
    remember([single, pair], [single_tr, pair_tr])
    return single, pair


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_criterion_01_baseline_cadence(gate, runs1):
    out, secs = runs1
    gaps = np.concatenate([np.diff(t) for t in out.tx_times().values() if len(t) > 1])
    ok = gaps.size > 0 and gaps.min() >= 100_000 and gaps.max() <= 5 * S + CHECK and secs < 5.0
    gate.record(1, ok, f"RM off tx gaps in [{gaps.min() / 1e3:.1f}, {gaps.max() / 1e3:.1f}] ms "
                       f"(bound [100, 5100]); runtime {secs:.2f} s (< 5 s)")
    assert ok


def test_criterion_02_t_expected(gate):
    th = GenThresholds()
    got = [compute_t_expected(Vam(1, 0, (0, 0), 2.5, 0), 10 * S, th),
           compute_t_expected(Vam(1, 0, (0, 0), 0.3, 0), 10 * S, th),
           compute_t_expected(Vam(1, 0, (0, 0), 1.3, 0), 0, th)]
    want = [12 * S, 15 * S, 5 * S]
    ok = got == want
    gate.record(2, ok, f"t_expected offsets {[g / S for g in got]} s (want [12.0, 15.0, 5.0])")
    assert ok


def test_criterion_03_airtime_and_cbr(gate):
    cfg = ChannelConfig()
    air = airtime(300, cfg)
    three = cbr_sample(0, [(1_000, 400), (40_000, 400), (80_000, 400)], cfg)
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(0, 40))
        frames = list(zip(rng.integers(-2_000, 100_000, n).tolist(), rng.integers(1, 3_000, n).tolist()))
        busy = np.zeros(100_000, dtype=bool)
        for s, a in frames:
            busy[max(s, 0):max(min(s + a, 100_000), 0)] = True
        mismatches += cbr_sample(0, frames, cfg) != busy.sum() / 100_000
    ok = air == 400 and three == 0.012 and mismatches == 0
    gate.record(3, ok, f"airtime {air} us, three-frame CBR {three}, union-oracle mismatches {mismatches}/1000")
    assert ok


def test_criterion_04_adapted_similarity_bound(gate, runs4):
    outs, secs = runs4
    recs = [r for o in outs for r in o.mitigation]
    bad = [r for r in recs if not (r.d_pos < 4.01 and r.d_speed < 0.51 and r.d_heading < 4.01)]
    ok = bool(recs) and not bad and secs < 30.0
    gate.record(4, ok, f"{len(recs)} adapted records, {len(bad)} violations; max d_pos "
                       f"{max(r.d_pos for r in recs):.4f} m; runtime {secs:.2f} s (< 30 s)")
    assert ok


def test_criterion_05_standard_staleness(gate, runs5):
    outs, secs = runs5
    d = np.array([r.d_pos for o in outs for r in o.mitigation])
    frac = float(np.mean(d > 4.0)) if d.size else 0.0
    mx = float(d.max()) if d.size else 0.0
    ok = frac >= 0.05 and mx > 5.0 and secs < 60.0
    gate.record(5, ok, f"{d.size} standard records, {frac:.1%} with d_pos > 4 m (>= 5%), max {mx:.2f} m "
                       f"(> 5 m); runtime {secs:.2f} s (< 60 s)")
    assert ok


def _by_mode(outs):
    return {m: [o for o in outs if o.mode.value == m] for m in MODES}


def test_criterion_06_cbr_ordering(gate, runs6):
    outs, secs = runs6
    mx = {m: max(float(o.cbr["cbr"].max()) for o in g) for m, g in _by_mode(outs).items()}
    report = compare_outputs(outs)
    order = mx["off"] >= mx["standard"] >= mx["adapted"]
    gain_a, gain_s = mx["off"] - mx["adapted"], mx["off"] - mx["standard"]
    margin = gain_a >= 2 * gain_s or gain_a >= 0.002
    ok = order and margin and secs < 60.0 and report.max_cbr.holds == order
    gate.record(6, ok, f"max CBR off {mx['off']:.4f} / standard {mx['standard']:.4f} / adapted "
                       f"{mx['adapted']:.4f}; off-adapted {gain_a:.4f}; runtime {secs:.2f} s (< 60 s)")
    assert ok


def test_criterion_07_vpr_ordering(gate, runs6):
    outs, _ = runs6
    report = compare_outputs(outs)
    med = {m: report.stats["vpr"][m].median for m in MODES}
    ok = med["off"] >= med["adapted"] >= med["standard"]
    gate.record(7, ok, f"median VPR off {med['off']:.4f} / adapted {med['adapted']:.4f} / standard "
                       f"{med['standard']:.4f} (want off >= adapted >= standard)")
    assert ok


def test_criterion_08_ego_speed_ordering(gate, runs6):
    outs, _ = runs6
    g = _by_mode(outs)
    speeds = {m: np.array([r.ego_speed_truth for o in g[m] for r in o.mitigation]) for m in ("standard", "adapted")}
    ok = all(v.size for v in speeds.values()) and np.median(speeds["adapted"]) <= np.median(speeds["standard"])
    gate.record(8, ok, f"median ego speed at mitigation adapted {np.median(speeds['adapted']):.3f} m/s <= "
                       f"standard {np.median(speeds['standard']):.3f} m/s")
    assert ok


def test_criterion_09_silence_cap(gate, runs1, runs4, runs5, runs6, runs12):
    outs = [runs1[0], *runs4[0], *runs5[0], *runs6[0], *runs12]
    longest = max(float(silences(o).max()) for o in outs if silences(o).size)
    ok = longest <= CAP + CHECK
    gate.record(9, ok, f"longest silence over {len(outs)} acceptance runs {longest / 1e6:.3f} s "
                       f"(bound 10.100 s)")
    assert ok


def test_criterion_10_vpr_oracle(gate):
    starts = [(0.0, 0.0), (10.0, 0.0), (-20.0, 5.0), (45.0, -10.0), (5.0, 60.0)]
    vel = [(0.0, 0.0), (1.3, 0.0), (0.0, 0.77), (-1.1, 0.2), (0.0, 0.0)]
    dur = 40
    trace = MobilityTrace({
        i + 1: [(0, x, y, float(np.hypot(vx, vy)), float(np.degrees(np.arctan2(vx, vy)) % 360)),
                (dur * S, x + vx * dur, y + vy * dur, float(np.hypot(vx, vy)),
                 float(np.degrees(np.arctan2(vx, vy)) % 360))]
        for i, ((x, y), (vx, vy)) in enumerate(zip(starts, vel))})
    results = []
    for validity in (1 * S, 5 * S, 10 * S):
        cfg = RunConfig(seed=4, duration=dur * S, warmup=0, channel=ChannelConfig(p_loss_los=0.3),
                        metrics=MetricsConfig(vpr_validity=validity))
        out = run(cfg, trace=trace)
        got = vpr_aggregate([VprSample(int(t), int(o), int(a), int(n)) for t, o, a, n in
                             zip(out.vpr["t_us"], out.vpr["observer"], out.vpr["aware"], out.vpr["in_range"])])
        rx = out.rx
        ok_rows = rx["outcome"] == 0
        deliveries: dict[tuple[int, int], np.ndarray] = {}
        for i in range(1, 6):
            for j in range(1, 6):
                sel = ok_rows & (rx["rx_id"] == i) & (rx["tx_id"] == j)
                deliveries[(i, j)] = np.sort(rx["t_start_us"][sel] + rx["airtime_us"][sel])
        aware = total = 0
        for t in range(0, dur * S, 100_000):
            pos = [(x + vx * t / S, y + vy * t / S) for (x, y), (vx, vy) in zip(starts, vel)]
            for i in range(5):
                for j in range(5):
                    if i == j or np.hypot(pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]) > 50.0:
                        continue
                    total += 1
                    d = deliveries[(i + 1, j + 1)]
                    # a tick sees deliveries strictly before it
                    prior = d[d < t]
                    aware += bool(prior.size and t - prior[-1] <= validity)
        results.append((validity, got, aware / total, int(out.vpr["aware"].sum()) == aware,
                        int(out.vpr["in_range"].sum()) == total))
    ok = all(g == b and ea and et for _, g, b, ea, et in results) and len({r[1] for r in results}) == 3
    gate.record(10, ok, "; ".join(f"validity {v / S:.0f} s: engine {g:.4f} oracle {b:.4f}"
                                  for v, g, b, _, _ in results))
    assert ok


def test_criterion_11_determinism(gate, tmp_path, runs1, runs5, runs6):
    pairs = [(runs1[0], CFG1), (runs5[0][0], runs5[0][0].config), (runs6[0][2], runs6[0][2].config)]
    same = []
    for k, (first, cfg) in enumerate(pairs):
        again = run_with_trace(cfg)
        same.append(csv_digest(first, tmp_path / f"a{k}") == csv_digest(again, tmp_path / f"b{k}"))
    ok = all(same)
    gate.record(11, ok, f"{sum(same)}/{len(same)} repeated acceptance runs byte-identical")
    assert ok


def test_criterion_12_two_node_adapted(gate, runs12):
    single, pair = runs12
    span = (CFG12.duration - CFG12.warmup) / S
    r1 = len(single.frames["tx_id"]) / span
    r2 = len(pair.frames["tx_id"]) / span
    ratio = r2 / r1
    talkers = sorted({int(v) for v in pair.frames["tx_id"]})
    ok = 1.0 <= ratio <= 1.3 and talkers == [1, 2]
    gate.record(12, ok, f"co-located adapted pair {r2:.3f} tx/s vs single off {r1:.3f} tx/s: "
                        f"ratio {ratio:.3f} (want 1.0-1.3); transmitters {talkers}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
