"""Command-line pipeline: generate, trace, bench, hotspot, route.

File formats owned here:
  snapshot CSV    JSON header line, then "user_id,lat,lon,snapshot" rows
  snapshot binary magic PXTB1, length-prefixed JSON header, raw int64/f64 columns
  contacts CSV    JSON header line, then "user_a,user_b,interval,lat,lon" rows
  graph CSV       header "city_a,city_b,km", one edge per line
  hotspot list    one city name per line
Every file written starts with a header embedding the config hash so results
can be audited back to their parameters.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import statistics
import struct
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .contact_store import ContactLog, InfectionRegistry
from .geo import Axis, AxisConfig, GeoPoint, RecordBatch, Region, RegionBoundsError
from .hotspot import HotspotQuery, detect, export_markers
from .routing import (
    HotspotEndpointError,
    UnknownCityError,
    baseline_route,
    india_city_graph,
    load_graph_file,
    load_hotspot_file,
    safe_route,
)
from .simgen import RNG_ALGORITHM, ScenarioSpec, ScenarioSpecError, build_scenario
from .tracing import (
    ContactEvent,
    ContactPair,
    TraceConfig,
    brute_force_contacts,
    combine_axes,
    detect_interval,
    dynamic_contacts,
    static_contacts,
)
from .tree import SnapshotTree, TreeConfig, build_snapshot

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_PATH = 3

BINARY_MAGIC = b"PXTB1\n"


@dataclass(frozen=True)
class RunConfig:
    """Pipeline parameters: cadence, distances, tree geometry, and region."""

    t_minutes: float = 5.0
    d_lat: float = 3.0
    d_lon: float = 4.0
    speed_mps: float = 1.4
    meters_per_arcsecond: float = 30.0
    lat_partitions: int | None = None
    lon_partitions: int | None = None
    lat_min: float = 7.0
    lat_max: float = 37.0
    lon_min: float = 68.0
    lon_max: float = 97.0
    retention_days: int = 14
    threads: int = 1

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            data = json.load(fh)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def region(self) -> Region:
        return Region(self.lat_min, self.lat_max, self.lon_min, self.lon_max)

    def trace_config(self) -> TraceConfig:
        return TraceConfig(
            contact_duration_t=self.t_minutes,
            lat_axis=AxisConfig(Axis.LATITUDE, self.meters_per_arcsecond, self.d_lat),
            lon_axis=AxisConfig(Axis.LONGITUDE, self.meters_per_arcsecond, self.d_lon),
            pedestrian_speed=self.speed_mps,
        )

    def tree_configs(self) -> tuple[TreeConfig, TreeConfig]:
        cfg = self.trace_config()
        region = self.region()
        return (
            TreeConfig.for_axis(cfg.lat_axis, region, self.lat_partitions),
            TreeConfig.for_axis(cfg.lon_axis, region, self.lon_partitions),
        )


# ---------------------------------------------------------------------------
# snapshot / contact file I/O


def write_snapshot_csv(path: str | Path, batch: RecordBatch, header: dict) -> None:
    frame = pd.DataFrame(
        {
            "user_id": batch.user_ids,
            "lat": batch.lats,
            "lon": batch.lons,
            "snapshot": batch.snapshot_id,
        }
    )
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": "proxtrace-snapshot", **header}) + "\n")
        frame.to_csv(fh, index=False)


def write_snapshot_binary(path: str | Path, batch: RecordBatch, header: dict) -> None:
    meta = json.dumps(
        {"format": "proxtrace-snapshot", "n": len(batch), **header}
    ).encode()
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(batch.user_ids.tobytes())
        fh.write(batch.lats.tobytes())
        fh.write(batch.lons.tobytes())


def read_snapshot_file(path: str | Path) -> tuple[RecordBatch, dict]:
    """Read a snapshot file, CSV or binary, sniffing the magic prefix."""
    with open(path, "rb") as fh:
        magic = fh.read(len(BINARY_MAGIC))
        if magic == BINARY_MAGIC:
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen))
            n = header["n"]
            ids = np.frombuffer(fh.read(8 * n), dtype=np.int64)
            lats = np.frombuffer(fh.read(8 * n), dtype=np.float64)
            lons = np.frombuffer(fh.read(8 * n), dtype=np.float64)
            return RecordBatch(header["snapshot"], ids, lats, lons), header
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("{"):
            raise ValueError(f"{path}: missing JSON header line")
        header = json.loads(first)
        # the default pandas float parser can be off by one ulp; exact
        # round-tripping matters because detection compares raw coordinates
        frame = pd.read_csv(fh, float_precision="round_trip")
    snap = int(header.get("snapshot", frame["snapshot"].iloc[0] if len(frame) else 0))
    return (
        RecordBatch(
            snap,
            frame["user_id"].to_numpy(np.int64),
            frame["lat"].to_numpy(np.float64),
            frame["lon"].to_numpy(np.float64),
        ),
        header,
    )


def write_contacts_csv(path: str | Path, events: list[ContactEvent], header: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": "proxtrace-contacts", **header}) + "\n")
        fh.write("user_a,user_b,interval,lat,lon\n")
        for ev in events:
            fh.write(
                f"{ev.pair.user_a},{ev.pair.user_b},{ev.snapshot_from},"
                f"{ev.location.latitude!r},{ev.location.longitude!r}\n"
            )


# ---------------------------------------------------------------------------
# timing helpers: monotonic clock, warm-up discarded, median of reps


def _timed(fn):
    t0 = time.monotonic()
    out = fn()
    return out, time.monotonic() - t0


def median_time(fn, reps: int = 3, warmup: int = 1) -> tuple[object, float]:
    result = None
    for _ in range(warmup):
        result = fn()
    times = []
    for _ in range(reps):
        result, elapsed = _timed(fn)
        times.append(elapsed)
    return result, statistics.median(times)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    try:
        with open(args.spec) as fh:
            data = json.load(fh)
        if args.seed is not None:
            data["seed"] = args.seed
        spec = ScenarioSpec.from_dict(data)
    except (OSError, json.JSONDecodeError, ScenarioSpecError) as exc:
        print(f"error: bad scenario spec: {exc}", file=sys.stderr)
        return EXIT_ERROR
    config = _load_config(args)
    scenario = build_scenario(spec, config.trace_config())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "config_hash": config.config_hash(),
        "seed": spec.seed,
        "rng": RNG_ALGORITHM,
        "spec": spec.to_dict(),
    }
    ext = "bin" if args.format == "binary" else "csv"
    writer = write_snapshot_binary if args.format == "binary" else write_snapshot_csv
    for batch in scenario.batches:
        path = out_dir / f"snapshot_{batch.snapshot_id:04d}.{ext}"
        writer(path, batch, {**header, "snapshot": batch.snapshot_id})
        print(f"wrote {path} ({path.stat().st_size} bytes, {len(batch)} users)")
    if scenario.planted_pairs:
        truth = out_dir / "planted_pairs.csv"
        with open(truth, "w") as fh:
            fh.write(json.dumps({"format": "proxtrace-planted", **header}) + "\n")
            fh.write("user_a,user_b\n")
            for pair in sorted(scenario.planted_pairs):
                fh.write(f"{pair.user_a},{pair.user_b}\n")
        print(f"wrote {truth} ({len(scenario.planted_pairs)} planted pairs)")
    return EXIT_OK


def _axis_pairs(tree_t, tree_t1, cfg: TraceConfig, mode: str, threads: int):
    if mode == "static":
        return static_contacts(tree_t, tree_t1, threads=threads)
    if mode == "dynamic":
        return dynamic_contacts(tree_t, tree_t1, cfg, threads=threads)
    return static_contacts(tree_t, tree_t1, threads=threads) | dynamic_contacts(
        tree_t, tree_t1, cfg, threads=threads
    )


def cmd_trace(args) -> int:
    config = _load_config(args)
    cfg = config.trace_config()
    lat_cfg, lon_cfg = config.tree_configs()
    batches = []
    for path in args.batches:
        batch, _header = read_snapshot_file(path)
        batches.append(batch)
    batches.sort(key=lambda b: b.snapshot_id)

    events: list[ContactEvent] = []
    intervals_report = []
    for prev, cur in zip(batches[:-1], batches[1:]):
        if cur.snapshot_id != prev.snapshot_id + 1:
            log.warning(
                "snapshot gap: %d -> %d, interval skipped", prev.snapshot_id, cur.snapshot_id
            )
            continue
        lat_t, t_lat_before = _timed(lambda: build_snapshot(prev, lat_cfg))
        lon_t, t_lon_before = _timed(lambda: build_snapshot(prev, lon_cfg))
        lat_t1, t_lat_after = _timed(lambda: build_snapshot(cur, lat_cfg))
        lon_t1, t_lon_after = _timed(lambda: build_snapshot(cur, lon_cfg))

        lat_pairs, t_lat_inter = _timed(
            lambda: _axis_pairs(lat_t, lat_t1, cfg, args.mode, threads=1)
        )
        lon_pairs, t_lon_inter = _timed(
            lambda: _axis_pairs(lon_t, lon_t1, cfg, args.mode, threads=1)
        )
        parallel_times = None
        if config.threads > 1:
            _, t_lat_par = _timed(
                lambda: _axis_pairs(lat_t, lat_t1, cfg, args.mode, config.threads)
            )
            _, t_lon_par = _timed(
                lambda: _axis_pairs(lon_t, lon_t1, cfg, args.mode, config.threads)
            )
            parallel_times = {"latitude": t_lat_par, "longitude": t_lon_par}

        pairs = combine_axes(lat_pairs, lon_pairs)
        for pair in sorted(pairs):
            events.append(
                ContactEvent(
                    pair, prev.snapshot_id, cur.snapshot_id, cur.position_of(pair.user_a)
                )
            )
        intervals_report.append(
            {
                "from": prev.snapshot_id,
                "to": cur.snapshot_id,
                "pairs": len(pairs),
                "map_time_s": {
                    "before": {"latitude": t_lat_before, "longitude": t_lon_before},
                    "after": {"latitude": t_lat_after, "longitude": t_lon_after},
                },
                "intersection_time_s": {
                    "serial": {"latitude": t_lat_inter, "longitude": t_lon_inter},
                    "parallel": parallel_times,
                    "threads": config.threads,
                },
            }
        )
        print(
            f"interval {prev.snapshot_id}->{cur.snapshot_id}: {len(pairs)} contact pairs"
        )

    header = {"config_hash": config.config_hash(), "mode": args.mode}
    write_contacts_csv(args.out, events, header)
    print(f"wrote {args.out} ({len(events)} events)")
    if args.timing:
        with open(args.timing, "w") as fh:
            json.dump({**header, "intervals": intervals_report}, fh, indent=2)
        print(f"wrote {args.timing}")
    if args.log_out:
        store = ContactLog(interval_minutes=cfg.snapshot_interval)
        store.record_events(events)
        store.save(args.log_out)
        print(f"wrote {args.log_out}")
    return EXIT_OK


def bench_pipeline(
    config: RunConfig,
    sizes: list[int],
    baseline_max: int,
    mode: str = "static",
    reps: int = 3,
    warmup: int = 1,
    seed: int = 7,
    density: str = "fixed",
) -> list[dict]:
    """Tree pipeline vs naive all-pairs baseline at each population size.

    With ``density="fixed"`` (the default) the region's longitude span scales
    with n, holding users-per-bucket constant: that is the regime where the
    per-leaf population bound holds and the pipeline's linear trend is
    measurable. ``density="growing"`` keeps the full region at every size, so
    occupancy (and with it the pairwise leaf work) grows with n.

    Returns one row per size with median build+intersect seconds for the tree
    path, the baseline seconds (or skipped marker above the cap), and whether
    both methods produced the same pair set.
    """
    if density not in ("fixed", "growing"):
        raise ValueError(f"unknown density mode {density!r}")
    cfg = config.trace_config()
    full = config.region()
    n_ref = max(sizes)
    rows = []
    for n in sizes:
        if density == "fixed" and n != n_ref:
            span = (full.lon_max - full.lon_min) * (n / n_ref)
            region = Region(full.lat_min, full.lat_max, full.lon_min, full.lon_min + span)
        else:
            region = full
        lat_cfg = TreeConfig.for_axis(cfg.lat_axis, region, config.lat_partitions)
        lon_cfg = TreeConfig.for_axis(cfg.lon_axis, region, config.lon_partitions)
        spec = ScenarioSpec(n_users=n, seed=seed, box=region, snapshot_count=2)
        scenario = build_scenario(spec, cfg)
        b0, b1 = scenario.batches[0], scenario.batches[1]

        def tree_run():
            lat_t = build_snapshot(b0, lat_cfg)
            lon_t = build_snapshot(b0, lon_cfg)
            lat_t1 = build_snapshot(b1, lat_cfg)
            lon_t1 = build_snapshot(b1, lon_cfg)
            return detect_interval(
                lat_t, lon_t, lat_t1, lon_t1, cfg, mode, config.threads
            )

        tree_pairs, tree_s = median_time(tree_run, reps, warmup)
        row = {
            "n": n,
            "tree_s": tree_s,
            "mode": mode,
            "lon_span_deg": region.lon_max - region.lon_min,
        }
        if n <= baseline_max:
            naive_pairs, naive_s = median_time(
                lambda: brute_force_contacts(b0, b1, cfg), reps, warmup
            )
            row["naive_s"] = naive_s
            row["naive_skipped"] = False
            row["pairs_equal"] = naive_pairs == tree_pairs
            row["speedup"] = naive_s / tree_s if tree_s > 0 else float("inf")
        else:
            row["naive_s"] = None
            row["naive_skipped"] = True
            row["pairs_equal"] = None
            row["speedup"] = None
        rows.append(row)
    return rows


def cmd_bench(args) -> int:
    config = _load_config(args)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    rows = bench_pipeline(
        config,
        sizes,
        args.baseline_max,
        args.mode,
        args.reps,
        seed=args.seed or 7,
        density=args.density,
    )
    table = {"config_hash": config.config_hash(), "rows": rows}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2)
        print(f"wrote {args.out}")
    print(f"{'n':>10} {'tree_s':>10} {'naive_s':>12} {'speedup':>10} {'equal':>6}")
    for row in rows:
        naive = "skipped" if row["naive_skipped"] else f"{row['naive_s']:.3f}"
        speedup = "-" if row["speedup"] is None else f"{row['speedup']:.1f}x"
        equal = "-" if row["pairs_equal"] is None else str(row["pairs_equal"])
        print(f"{row['n']:>10} {row['tree_s']:>10.3f} {naive:>12} {speedup:>10} {equal:>6}")
    return EXIT_OK


def cmd_hotspot(args) -> int:
    config = _load_config(args)
    cfg = config.trace_config()
    lat_cfg, _ = config.tree_configs()
    batch, _header = read_snapshot_file(args.snapshot)
    tree = build_snapshot(batch, lat_cfg)
    store = ContactLog.load(args.log, interval_minutes=cfg.snapshot_interval)
    registry = InfectionRegistry.load(args.registry)
    query = HotspotQuery(
        reference=GeoPoint(args.ref_lat, args.ref_lon),
        radius_km=args.radius_km,
        positive_threshold=args.threshold,
        mode=args.mode,
    )
    try:
        report = detect(query, tree, store, registry, config.region())
    except RegionBoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    payload = {"config_hash": config.config_hash(), **report.to_dict()}
    with open(args.report, "w") as fh:
        json.dump(payload, fh, indent=2)
    with open(args.geojson, "w") as fh:
        json.dump(export_markers(report), fh, indent=2)
    print(
        f"users={len(report.users_in_area)} positives={len(report.positives_in_area)} "
        f"susceptible={sorted(report.susceptibles_in_area)} "
        f"hotspot={report.is_potential_hotspot}"
    )
    print(f"wrote {args.report} and {args.geojson}")
    return EXIT_OK


def cmd_route(args) -> int:
    try:
        graph = load_graph_file(args.graph) if args.graph else india_city_graph()
        if args.hotspots:
            for city in load_hotspot_file(args.hotspots):
                graph.mark_hotspot(city)
        base = baseline_route(graph, args.source, args.dest)
        safe = safe_route(graph, args.source, args.dest)
    except (UnknownCityError, HotspotEndpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if base.found:
        print(f"baseline: {' -> '.join(base.path)}  ({base.total_cost:g} km)")
    else:
        print("baseline: No Path")
    if safe.found:
        print(f"safe:     {' -> '.join(safe.path)}  ({safe.total_cost:g} km)")
        return EXIT_OK
    print("safe:     No Path")
    return EXIT_NO_PATH


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for field_name, arg_name in (
        ("d_lat", "d_lat"),
        ("d_lon", "d_lon"),
        ("t_minutes", "t_minutes"),
        ("threads", "threads"),
    ):
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[field_name] = value
    return replace(config, **overrides) if overrides else config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proxtrace",
        description="Proximity contact detection, hotspot reports, and safe routing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate snapshot batches from a scenario spec")
    p.add_argument("--spec", required=True, help="scenario spec JSON file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--format", choices=["csv", "binary"], default="csv")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("trace", help="detect contacts over consecutive snapshot files")
    p.add_argument("batches", nargs="+", help="snapshot files (csv or binary)")
    p.add_argument("--out", required=True, help="contacts CSV output")
    p.add_argument("--timing", default=None, help="timing report JSON output")
    p.add_argument("--log-out", default=None, help="contact log checkpoint output")
    p.add_argument("--mode", choices=["static", "dynamic", "both"], default="both")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--d-lat", dest="d_lat", type=float, default=None)
    p.add_argument("--d-lon", dest="d_lon", type=float, default=None)
    p.add_argument("--t-minutes", dest="t_minutes", type=float, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("bench", help="tree pipeline vs naive baseline timings")
    p.add_argument("--sizes", required=True, help="comma-separated population sizes")
    p.add_argument("--baseline-max", type=int, default=60_000)
    p.add_argument("--mode", choices=["static", "dynamic", "both"], default="static")
    p.add_argument(
        "--density",
        choices=["fixed", "growing"],
        default="fixed",
        help="fixed: region scales with n (constant users per bucket); growing: full region at every size",
    )
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="machine-readable JSON output")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("hotspot", help="potential-hotspot report around a reference point")
    p.add_argument("--snapshot", required=True, help="snapshot file for the current instant")
    p.add_argument("--log", required=True, help="contact log checkpoint")
    p.add_argument("--registry", required=True, help="positive-status registry CSV")
    p.add_argument("--ref-lat", type=float, required=True)
    p.add_argument("--ref-lon", type=float, required=True)
    p.add_argument("--radius-km", dest="radius_km", type=float, default=10.0)
    p.add_argument("--threshold", type=int, default=1)
    p.add_argument("--mode", choices=["threshold", "any_positive"], default="threshold")
    p.add_argument("--report", required=True, help="report JSON output")
    p.add_argument("--geojson", required=True, help="GeoJSON marker output")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_hotspot)

    p = sub.add_parser("route", help="safe route vs baseline on a city graph")
    p.add_argument("--graph", default=None, help="graph CSV (default: packaged India fixture)")
    p.add_argument("--hotspots", default=None, help="hotspot list file")
    p.add_argument("--source", required=True)
    p.add_argument("--dest", required=True)
    p.set_defaults(func=cmd_route)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
