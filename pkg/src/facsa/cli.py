"""Command-line front end.  Every command writes CSV (header + rows) to
``--out`` or stdout."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .core import Boundary, RandomStream, SystemConfig, Variant, parse_degree_distribution
from .de import DEConfig, ThresholdQuery, find_threshold, fs_threshold
from .error_floor import EFQuery, ef_plr, sc_ef_plr
from .sim import SimStats, collect_stats, run_simulation, wilson_interval
from .stopping_sets import enumerate_catalog, format_catalog, read_catalog, write_catalog

TABLE1_DISTS = ["x3", "x4", "x5", "x6", "x7", "x8", "0.86x3+0.14x8"]
# achievability bound row, quoted for reference only
TABLE1_BOUND = [0.940, 0.980, 0.993, 0.997, 0.999, 1.000, 0.973]
TABLE1_ROWS = [
    ("fa-f", "on"),
    ("fa-u", "on"),
    ("fa-f", "off"),
    ("fa-u", "off"),
    ("fs", "off"),
]


@dataclass
class ResultRow:
    variant: str
    boundary: str
    n: int
    g: float
    plr: float | None = None
    plr_ci_low: float | None = None
    plr_ci_high: float | None = None
    users_observed: int | None = None
    mean_delay: float | None = None
    p90_delay: float | None = None
    max_delay: float | None = None
    analytic_ef: float | None = None
    g_star: float | None = None


RESULT_COLUMNS = [f.name for f in fields(ResultRow)]
THRESHOLD_COLUMNS = ["variant", "boundary", "dist", "g_star", "tolerance", "iterations_used", "source"]

COLUMN_HELP = """\
result columns (simulate, error-floor, compare-sc):
  variant, boundary, n, g   system parameters of the row
  plr                       packet loss rate (delay-constrained if --delay-max)
  plr_ci_low, plr_ci_high   Wilson 95% interval of plr
  users_observed            users tallied after warmup and tail censoring
  mean_delay, p90_delay     mean and 90th percentile delay of resolved users (slots)
  max_delay                 largest observed delay (slots)
  analytic_ef               stopping-set error-floor prediction
  g_star                    threshold (threshold-type commands only)
threshold columns (threshold, table1):
  variant, boundary, dist, g_star, tolerance, iterations_used, source
"""


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(value).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return f"{float(value):.6g}"
    return str(value)


def write_csv(rows, path=None, columns=None) -> str:
    """Write ``rows`` (dataclasses or dicts) as CSV; returns the text."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    if columns is None:
        columns = RESULT_COLUMNS
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        get = row.get if isinstance(row, dict) else (lambda k, r=row: getattr(r, k))
        writer.writerow([_fmt(get(c)) for c in columns])
    text = buf.getvalue()
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")
    return text


# -- sweeps ---------------------------------------------------------------------


def parse_sweep(text: str) -> list[float]:
    try:
        start, step, stop = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"sweep must look like start:step:stop, got {text!r}") from None
    if not (0 < start <= stop and step > 0):
        raise argparse.ArgumentTypeError("sweep needs 0 < start <= stop and step > 0")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(count)]


def _trial(args):
    config, slots, warmup, seed, stream_id = args
    return run_simulation(config, slots, warmup, RandomStream(seed, stream_id))


def simulate_point(config: SystemConfig, slots: int, trials: int, seed: int, first_stream: int = 0,
                   warmup: int | None = None, workers: int = 1) -> SimStats:
    jobs = [(config, slots, warmup, seed, first_stream + k) for k in range(trials)]
    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_trial, jobs))
    else:
        parts = [_trial(j) for j in jobs]
    total = parts[0]
    for part in parts[1:]:
        total = total.merge(part)
    return total


def _row_from_stats(config: SystemConfig, stats: SimStats, delay_max=None) -> ResultRow:
    s = collect_stats(stats, delay_max)
    plr, lo, hi = s.plr, s.plr_ci_low, s.plr_ci_high
    if delay_max is not None:
        plr = s.delay_plr
        lo, hi = wilson_interval(round(plr * s.users_observed), s.users_observed)
    return ResultRow(
        config.variant.value,
        config.boundary.value,
        config.n,
        config.g,
        plr,
        lo,
        hi,
        s.users_observed,
        s.mean_delay,
        s.p90_delay,
        s.max_delay,
    )


def run_sweep(base: SystemConfig, g_values, slots: int, trials: int, seed: int, warmup=None, workers: int = 1,
              delay_max=None, catalog=None) -> list[ResultRow]:
    rows = []
    for idx, g in enumerate(sorted(g_values)):
        config = base.replace(g=g)
        stats = simulate_point(config, slots, trials, seed, idx * trials, warmup, workers)
        row = _row_from_stats(config, stats, delay_max)
        if catalog is not None and g > 0:
            row.analytic_ef = _analytic(config, catalog)
        rows.append(row)
    return rows


def _analytic(config: SystemConfig, catalog) -> float:
    if config.variant is Variant.SC:
        return sc_ef_plr(config.sc_repetition, config.n, config.g)
    return ef_plr(EFQuery(config.variant, config.n, config.g, config.dist, catalog))


# -- commands ------------------------------------------------------------------------


def _g_values(args) -> list[float]:
    if args.g_sweep is not None:
        return args.g_sweep
    if args.g is None:
        raise SystemExit("error: one of --g or --g-sweep is required")
    return [args.g]


def _config(args, g=None) -> SystemConfig:
    return SystemConfig(
        args.variant,
        args.n,
        args.g if g is None else g,
        parse_degree_distribution(args.dist),
        boundary=args.boundary,
        rx_memory=args.rx_mem,
        max_sic_iters=args.max_sic_iters,
        delay_max=args.delay_max,
    )


def _load_catalog(args):
    if args.catalog is None:
        return enumerate_catalog(args.max_cns)
    path = Path(args.catalog)
    if not path.exists():
        raise SystemExit(f"error: catalog file {path} not found")
    return read_catalog(path).restrict(args.max_cns)


def cmd_simulate(args) -> list[ResultRow]:
    g_values = _g_values(args)
    base = _config(args, g=g_values[0])
    catalog = _load_catalog(args) if args.with_ef else None
    return run_sweep(base, g_values, args.slots, args.trials, args.seed, args.warmup, args.workers,
                     args.delay_max, catalog)


def cmd_error_floor(args) -> list[ResultRow]:
    catalog = None if args.variant == "sc" else _load_catalog(args)
    rows = []
    for g in sorted(_g_values(args)):
        config = _config(args, g=g)
        rows.append(ResultRow(config.variant.value, config.boundary.value, config.n, g,
                              analytic_ef=_analytic(config, catalog)))
    return rows


def _threshold_row(variant: str, boundary: str, dist: str, tolerance: float, de_config: DEConfig) -> dict:
    d = parse_degree_distribution(dist)
    if variant == "fs":
        g_star, iters = fs_threshold(d, tolerance), 0
        boundary = "off"
    else:
        g_star, iters = find_threshold(ThresholdQuery(d, variant, boundary, de_config, tolerance))
    return {"variant": variant, "boundary": boundary, "dist": dist, "g_star": g_star,
            "tolerance": tolerance, "iterations_used": iters, "source": "computed"}


def cmd_threshold(args) -> list[dict]:
    if args.variant == "sc":
        raise SystemExit("error: no density-evolution threshold for sc")
    cfg = DEConfig(n=args.n, chain_multiplier=args.chain_multiplier)
    return [_threshold_row(args.variant, args.boundary, args.dist, args.tolerance, cfg)]


def _table1_job(job):
    return _threshold_row(*job)


def cmd_table1(args) -> list[dict]:
    cfg = DEConfig(n=args.n, chain_multiplier=args.chain_multiplier)
    jobs = [(v, b, d, args.tolerance, cfg) for v, b in TABLE1_ROWS for d in TABLE1_DISTS]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_table1_job, jobs))
    else:
        rows = [_table1_job(j) for j in jobs]
    rows += [
        {"variant": "bound", "boundary": "", "dist": d, "g_star": v, "tolerance": "",
         "iterations_used": "", "source": "paper"}
        for d, v in zip(TABLE1_DISTS, TABLE1_BOUND)
    ]
    return rows


def cmd_compare_sc(args) -> list[ResultRow]:
    dist = parse_degree_distribution(args.dist)
    if not dist.is_regular:
        raise SystemExit("error: compare-sc needs a regular distribution x^l")
    catalog = _load_catalog(args)
    rows = []
    for idx, (variant, boundary) in enumerate([("fa-f", "on"), ("sc", "off"), ("fs", "off")]):
        base = SystemConfig(variant, args.n, 1.0, dist, boundary=boundary, rx_memory=args.rx_mem,
                            max_sic_iters=args.max_sic_iters)
        first = idx * 1000
        for g in sorted(_g_values(args)):
            config = base.replace(g=g)
            stats = simulate_point(config, args.slots, args.trials, args.seed, first, args.warmup, args.workers)
            first += args.trials
            row = _row_from_stats(config, stats)
            row.analytic_ef = _analytic(config, catalog)
            rows.append(row)
    return rows


# -- parser ----------------------------------------------------------------------------


def _count(text: str) -> int:
    value = float(text)
    if value != int(value) or value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(value)


def _system_flags(p, need_dist=True):
    p.add_argument("--variant", choices=[v.value for v in Variant], default="fa-f")
    p.add_argument("--boundary", choices=[b.value for b in Boundary], default="off")
    p.add_argument("--n", type=int, default=200, help="frame length in slots")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--g", type=float, help="load in users per slot")
    group.add_argument("--g-sweep", type=parse_sweep, metavar="A:S:B", help="loads start:step:stop")
    p.add_argument("--dist", default="0.86x3+0.14x8", help="degree distribution, e.g. 0.86x3+0.14x8")
    p.add_argument("--rx-mem", type=int, default=None, help="receiver memory in slots (default 5n)")
    p.add_argument("--max-sic-iters", type=int, default=None, help="SIC rounds per slot (default unlimited)")
    p.add_argument("--delay-max", type=int, default=None, help="delay constraint in slots")


def _sim_flags(p):
    p.add_argument("--slots", type=_count, default=1_000_000, help="slots per trial")
    p.add_argument("--trials", type=_count, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=int, default=None, help="warmup slots (default 5n)")
    p.add_argument("--workers", type=_count, default=1)


def _catalog_flags(p):
    p.add_argument("--catalog", default=None, help="stopping-set catalog file (default: enumerate)")
    p.add_argument("--max-cns", type=int, default=4, help="largest stopping-set span in slots")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facsa",
        description="Coded slotted ALOHA: simulation, density evolution and error-floor analysis.",
        epilog=COLUMN_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, epilog=COLUMN_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", default=None, help="YAML file with flag values (flags win)")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        return p

    p = add("simulate", "Monte Carlo PLR and delay")
    _system_flags(p)
    _sim_flags(p)
    _catalog_flags(p)
    p.add_argument("--with-ef", action="store_true", help="also fill analytic_ef")
    p.set_defaults(func=cmd_simulate, columns=RESULT_COLUMNS)

    p = add("threshold", "density-evolution threshold")
    _system_flags(p)
    p.set_defaults(n=100)
    p.add_argument("--tolerance", type=float, default=5e-4)
    p.add_argument("--chain-multiplier", type=int, default=20)
    p.set_defaults(func=cmd_threshold, columns=THRESHOLD_COLUMNS)

    p = add("error-floor", "analytic error-floor prediction")
    _system_flags(p)
    _catalog_flags(p)
    p.set_defaults(func=cmd_error_floor, columns=RESULT_COLUMNS)

    p = add("stopping-sets", "enumerate minimal stopping sets")
    _catalog_flags(p)
    p.add_argument("--min-degree", type=int, choices=[1, 2], default=1)
    p.set_defaults(func=None, columns=None)

    p = add("table1", "all threshold cells for x3..x8 and 0.86x3+0.14x8")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=5e-4)
    p.add_argument("--chain-multiplier", type=int, default=20)
    p.add_argument("--workers", type=_count, default=1)
    p.set_defaults(func=cmd_table1, columns=THRESHOLD_COLUMNS)

    p = add("compare-sc", "FA-F with boundary vs SC vs FS at matched n and l")
    _system_flags(p)
    _sim_flags(p)
    _catalog_flags(p)
    p.set_defaults(n=120, dist="x3", func=cmd_compare_sc, columns=RESULT_COLUMNS)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    data = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise SystemExit("error: config file must hold key: value pairs")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in data.items():
        dest = str(key).replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise SystemExit(f"error: unknown config key {key!r}")
        action = known[dest]
        if action.type is not None and isinstance(value, (str, int, float)) and not isinstance(value, bool):
            value = action.type(str(value))
        if action.choices is not None and value not in action.choices:
            raise SystemExit(f"error: invalid value {value!r} for {key!r}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    try:
        if args.command == "stopping-sets":
            catalog = enumerate_catalog(args.max_cns, args.min_degree)
            if args.out is None:
                sys.stdout.write(format_catalog(catalog))
            else:
                write_catalog(catalog, args.out)
            return 0
        rows = args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_csv(rows, args.out, args.columns)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
