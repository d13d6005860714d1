"""Command-line front end: ``gen-scenario``, ``run`` and ``compare``.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import (FORMAT_VERSION, ConfigError, RunOutput, config_echo, load_config, run,
                     run_matrix, write_matrix, write_output)
from .metrics import SummaryStats, summarize, vpr_ratios
from .redundancy import Mode
from .scenario import (default_building, gen_crossing_scenario, gen_platoon_scenario, write_obstacles,
                       write_trace)

log = logging.getLogger("vamsim")

METRICS = ("cbr", "vpr", "ego_speed", "d_pos", "d_speed", "d_heading")
MODE_ORDER = (Mode.OFF, Mode.STANDARD, Mode.ADAPTED)
# expected orderings, highest first
CBR_EXPECTED = (Mode.OFF, Mode.STANDARD, Mode.ADAPTED)
VPR_EXPECTED = (Mode.OFF, Mode.ADAPTED, Mode.STANDARD)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSeries:
    """Plot-ready series of one run, as read back from disk or memory."""

    mode: Mode
    seed: int
    signature: str
    values: dict[str, np.ndarray]

    @classmethod
    def from_output(cls, out: RunOutput) -> "RunSeries":
        m = out.mitigation
        vals = {
            "cbr": np.asarray(out.cbr["cbr"], dtype=np.float64),
            "vpr": vpr_ratios(out.vpr["aware"], out.vpr["in_range"]),
            "ego_speed": np.array([r.ego_speed_truth for r in m], dtype=np.float64),
            "d_pos": np.array([r.d_pos for r in m], dtype=np.float64),
            "d_speed": np.array([r.d_speed for r in m], dtype=np.float64),
            "d_heading": np.array([r.d_heading for r in m], dtype=np.float64),
        }
        return cls(out.mode, out.seed, _signature(config_echo(out.config)), vals)

    @classmethod
    def from_dir(cls, path: Path) -> "RunSeries":
        man = json.loads((path / "manifest.json").read_text())
        if man.get("format_version") != FORMAT_VERSION:
            raise UsageError(f"{path}: unsupported format_version {man.get('format_version')!r}")
        cbr = _read_columns(path / "cbr.csv", ["cbr"])
        vpr = _read_columns(path / "vpr.csv", ["aware", "in_range"])
        mit = _read_columns(path / "mitigation.csv", ["ego_speed", "d_pos", "d_speed", "d_heading"])
        vals = {"cbr": cbr["cbr"], "vpr": vpr_ratios(vpr["aware"], vpr["in_range"]), **mit}
        return cls(Mode.parse(man["mode"]), int(man["seed"]), _signature(man["config"]), vals)


def _signature(echo: dict) -> str:
    rest = {k: v for k, v in echo.items() if k not in ("seed", "rm.mode")}
    return json.dumps(rest, sort_keys=True)


def _read_columns(path: Path, names: Sequence[str]) -> dict[str, np.ndarray]:
    cols: dict[str, list[float]] = {n: [] for n in names}
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            for n in names:
                cols[n].append(float(row[n]))
    return {n: np.array(v, dtype=np.float64) for n, v in cols.items()}


@dataclass(frozen=True)
class OrderingVerdict:
    statistic: str
    expected: tuple[str, ...]
    observed: tuple[str, ...]
    values: dict[str, float]
    holds: bool


@dataclass(frozen=True)
class ComparisonReport:
    modes: tuple[str, ...]
    seeds: tuple[int, ...]
    stats: dict[str, dict[str, SummaryStats | None]]
    max_cbr: OrderingVerdict
    median_vpr: OrderingVerdict

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "modes": list(self.modes),
            "seeds": list(self.seeds),
            "stats": {m: {k: (asdict(s) if s else None) for k, s in d.items()} for m, d in self.stats.items()},
            "verdicts": {"max_cbr": asdict(self.max_cbr), "median_vpr": asdict(self.median_vpr)},
        }

    def to_text(self) -> str:
        lines = []
        head = ["mode", "median", "q25", "q75", "wlow", "whigh", "min", "max", "n"]
        for metric in METRICS:
            lines.append(f"[{metric}]")
            lines.append(" ".join(f"{h:>10}" for h in head))
            for mode in self.modes:
                s = self.stats[metric][mode]
                if s is None:
                    lines.append(f"{mode:>10} " + " ".join(f"{'-':>10}" for _ in head[1:]))
                    continue
                nums = (s.median, s.q25, s.q75, s.whisker_low, s.whisker_high, s.min, s.max)
                lines.append(f"{mode:>10} " + " ".join(f"{x:>10.3f}" for x in nums) + f" {s.n:>10d}")
            lines.append("")
        for v in (self.max_cbr, self.median_vpr):
            vals = ", ".join(f"{m}={v.values[m]:.3f}" for m in v.observed)
            verdict = "holds" if v.holds else "violated"
            lines.append(f"{v.statistic}: expected {' >= '.join(v.expected)}; got {vals}; {verdict}")
        return "\n".join(lines) + "\n"


def _verdict(name: str, expected: Sequence[Mode], values: dict[str, float]) -> OrderingVerdict:
    exp = tuple(m.value for m in expected if m.value in values)
    observed = tuple(sorted(values, key=lambda m: (-values[m], exp.index(m))))
    holds = all(values[a] >= values[b] for a, b in zip(exp, exp[1:]))
    return OrderingVerdict(name, exp, observed, dict(values), holds)


def build_report(runs: Sequence[RunSeries]) -> ComparisonReport:
    """Pool runs per mode and derive SummaryStats and ordering verdicts."""
    modes = [m for m in MODE_ORDER if any(r.mode is m for r in runs)]
    if len(modes) < 2:
        raise UsageError("compare needs runs of at least two different modes")
    sigs = {r.signature for r in runs}
    if len(sigs) > 1:
        raise UsageError("runs differ in scenario or parameters (only seed and mode may differ)")
    seeds = {m: sorted(r.seed for r in runs if r.mode is m) for m in modes}
    first = seeds[modes[0]]
    for m in modes[1:]:
        if seeds[m] != first:
            raise UsageError(f"seed sets differ: {modes[0].value}={first} vs {m.value}={seeds[m]}")
    stats: dict[str, dict[str, SummaryStats | None]] = {}
    for metric in METRICS:
        stats[metric] = {}
        for m in modes:
            vals = np.concatenate([r.values[metric] for r in runs if r.mode is m])
            stats[metric][m.value] = summarize(vals) if vals.size else None
    mx = {m.value: stats["cbr"][m.value].max for m in modes if stats["cbr"][m.value]}
    med = {m.value: stats["vpr"][m.value].median for m in modes if stats["vpr"][m.value]}
    return ComparisonReport(tuple(m.value for m in modes), tuple(first), stats,
                            _verdict("max_cbr", CBR_EXPECTED, mx), _verdict("median_vpr", VPR_EXPECTED, med))


def compare_outputs(outputs: Sequence[RunOutput]) -> ComparisonReport:
    return build_report([RunSeries.from_output(o) for o in outputs])


def _expand_dirs(paths: Sequence[str]) -> list[Path]:
    out = []
    for p in map(Path, paths):
        man_path = p / "manifest.json"
        if not man_path.is_file():
            raise UsageError(f"{p}: no manifest.json (not a run output directory)")
        man = json.loads(man_path.read_text())
        if man.get("kind") == "matrix":
            out.extend(p / r["dir"] for r in man["runs"])
        else:
            out.append(p)
    return out


def compare_dirs(paths: Sequence[str]) -> ComparisonReport:
    return build_report([RunSeries.from_dir(p) for p in _expand_dirs(paths)])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def cmd_gen_scenario(args) -> int:
    out = Path(args.out or ".")
    duration = args.duration_s
    if args.generator == "platoon":
        trace = gen_platoon_scenario(args.bikes, args.red_s, args.accel, args.cruise, args.gap, duration,
                                     args.seed or 0)
        obstacles = []
    else:
        building = default_building()
        trace = gen_crossing_scenario(args.flow_a, args.flow_b, building, duration, args.seed or 0, args.cruise)
        obstacles = [building]
    out.mkdir(parents=True, exist_ok=True)
    write_trace(trace, out / "trace.csv")
    write_obstacles(obstacles, out / "obstacles.csv")
    print(f"{len(trace)} VRUs, lifespan [{trace.t_start / 1e6:.3f}, {trace.t_end / 1e6:.3f}] s -> {out}")
    return 0


def _load_with_overrides(args):
    if not args.config:
        raise UsageError("--config is required")
    cf = load_config(args.config)
    cfg, seeds, modes = cf.run, cf.seeds, cf.modes
    if args.seed is not None:
        cfg, seeds = cfg.with_(seed=args.seed), (args.seed,)
    if args.mode is not None:
        modes = (Mode.parse(args.mode),)
    if len(seeds) == 1 and len(modes) == 1:
        cfg = cfg.with_(seed=seeds[0], mode=modes[0])
    return cfg, seeds, modes


def cmd_run(args) -> int:
    if not args.out:
        raise UsageError("--out is required")
    cfg, seeds, modes = _load_with_overrides(args)
    if len(seeds) == 1 and len(modes) == 1:
        write_output(run(cfg), args.out)
        print(f"wrote run (seed={cfg.seed}, mode={cfg.rm.mode.value}) -> {args.out}")
    else:
        outs = run_matrix(cfg, seeds, modes, workers=args.workers)
        write_matrix(outs, args.out)
        print(f"wrote {len(outs)} runs -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    if args.config:
        cfg, seeds, modes = _load_with_overrides(args)
        if len(modes) < 2:
            raise UsageError("compare needs at least two modes in the config")
        outs = run_matrix(cfg, seeds, modes, workers=args.workers)
        if args.out:
            write_matrix(outs, Path(args.out) / "runs")
        report = compare_outputs(outs)
    elif args.dirs:
        report = compare_dirs(args.dirs)
    else:
        raise UsageError("give output directories or --config")
    text = report.to_text()
    blob = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    sys.stdout.write(text)
    if args.json:
        sys.stdout.write(blob + "\n")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        (out / "report.json").write_text(blob + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=_u64, help="override the master seed")
    common.add_argument("--mode", choices=[m.value for m in Mode], help="override the RM mode")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vamsim", description="VAM redundancy-mitigation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenario", parents=[common], help="write a synthetic trace and obstacle file")
    g.add_argument("generator", choices=["platoon", "crossing"])
    g.add_argument("--bikes", type=int, default=30)
    g.add_argument("--red-s", type=float, default=20.0)
    g.add_argument("--accel", type=float, default=1.0)
    g.add_argument("--cruise", type=float, default=5.0)
    g.add_argument("--gap", type=float, default=2.0)
    g.add_argument("--flow-a", type=float, default=60.0, help="bikes/min on road A")
    g.add_argument("--flow-b", type=float, default=60.0, help="bikes/min on road B")
    g.add_argument("--duration-s", type=float, default=50.0)
    g.set_defaults(func=cmd_gen_scenario)

    r = sub.add_parser("run", parents=[common], help="execute a run or seed x mode matrix")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", parents=[common], help="compare modes across output directories")
    c.add_argument("dirs", nargs="*")
    c.add_argument("--json", action="store_true", help="also print the JSON report")
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"vamsim: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # parameter validation in generators and config dataclasses
        if args.command == "gen-scenario":
            print(f"vamsim: error: {exc}", file=sys.stderr)
            return 2
        print(f"vamsim: runtime error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"vamsim: runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
