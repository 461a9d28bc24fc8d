"""Synthetic populations and trajectories with planted ground truth.

Uniform national-scale generation exercises throughput; correctness scenarios
use a small default box (0.1 x 0.1 degrees) so contacts actually occur, with
planted stationary groups and co-walking pairs providing known-true contact
sets. All randomness flows from numpy's seeded PCG64 generator, so batches
are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geo import GeoPoint, RecordBatch, Region
from .tracing import ContactPair, TraceConfig

RNG_ALGORITHM = "numpy-pcg64"

#: Default box for correctness scenarios: dense enough for collisions, placed
#: mid-region so the axis rectangle stays inside the 5 m circle (plus slack).
CORRECTNESS_BOX = Region(22.0, 22.1, 77.0, 77.1)

# planted users sit within this fraction of d from their anchor, keeping
# planted pairs comfortably inside the detection predicate on each axis
_JITTER_FRACTION = 0.4


class ScenarioSpecError(ValueError):
    """A scenario specification field is missing or invalid."""


@dataclass(frozen=True)
class ScenarioSpec:
    n_users: int
    seed: int = 0
    box: Region = CORRECTNESS_BOX
    snapshot_count: int = 2
    snapshot_interval_minutes: float = 2.5
    static_groups: int = 0
    static_group_size: int = 2
    walker_pairs: int = 0
    walker_speed_mps: float = 1.4

    def __post_init__(self):
        if self.n_users < 0:
            raise ScenarioSpecError("n_users must be >= 0")
        if self.snapshot_count < 1:
            raise ScenarioSpecError("snapshot_count must be >= 1")
        if self.snapshot_interval_minutes <= 0:
            raise ScenarioSpecError("snapshot_interval_minutes must be positive")
        if self.static_groups < 0 or self.walker_pairs < 0:
            raise ScenarioSpecError("planted counts must be >= 0")
        if self.static_groups and self.static_group_size < 2:
            raise ScenarioSpecError("static_group_size must be >= 2")
        if self.walker_speed_mps < 0:
            raise ScenarioSpecError("walker_speed_mps must be >= 0")
        if self.planted_users > self.n_users:
            raise ScenarioSpecError(
                f"planted users ({self.planted_users}) exceed n_users ({self.n_users})"
            )

    @property
    def planted_users(self) -> int:
        return self.static_groups * self.static_group_size + 2 * self.walker_pairs

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "seed": self.seed,
            "box": [self.box.lat_min, self.box.lat_max, self.box.lon_min, self.box.lon_max],
            "snapshot_count": self.snapshot_count,
            "snapshot_interval_minutes": self.snapshot_interval_minutes,
            "static_groups": self.static_groups,
            "static_group_size": self.static_group_size,
            "walker_pairs": self.walker_pairs,
            "walker_speed_mps": self.walker_speed_mps,
            "rng": RNG_ALGORITHM,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        if "n_users" not in data:
            raise ScenarioSpecError("missing required field: n_users")
        kwargs = dict(data)
        kwargs.pop("rng", None)
        box = kwargs.pop("box", None)
        if box is not None:
            if not (isinstance(box, (list, tuple)) and len(box) == 4):
                raise ScenarioSpecError("field box must be [lat_min, lat_max, lon_min, lon_max]")
            kwargs["box"] = Region(*[float(v) for v in box])
        known = {f for f in cls.__dataclass_fields__}
        for key in kwargs:
            if key not in known:
                raise ScenarioSpecError(f"unknown field: {key}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ScenarioSpecError(str(exc)) from exc


@dataclass
class Scenario:
    spec: ScenarioSpec
    batches: list[RecordBatch]
    planted_pairs: set[ContactPair]


def gen_uniform(spec: ScenarioSpec) -> list[RecordBatch]:
    """Uniform stationary population: one batch per snapshot, same positions."""
    rng = np.random.default_rng([spec.seed, 0])
    ids = np.arange(spec.n_users, dtype=np.int64)
    lats = rng.uniform(spec.box.lat_min, spec.box.lat_max, spec.n_users)
    lons = rng.uniform(spec.box.lon_min, spec.box.lon_max, spec.n_users)
    return [
        RecordBatch(k, ids, lats, lons) for k in range(spec.snapshot_count)
    ]


def _meters_to_deg(meters: float, axis_scale: float) -> float:
    return meters / (3600.0 * axis_scale)


def plant_static_group(
    batches: Sequence[RecordBatch],
    members: Sequence[int],
    anchor: GeoPoint,
    cfg: TraceConfig,
    rng: np.random.Generator,
) -> tuple[list[RecordBatch], set[ContactPair]]:
    """Pin a group of users near an anchor at every snapshot.

    Each member lands within +/-40% of the per-axis contact distance from the
    anchor, so every pair in the group satisfies the axis predicate with
    margin. Returns the updated batches and the group's pair set.
    """
    members = list(members)
    if len(members) < 2:
        raise ValueError("a static group needs at least 2 members")
    jlat = _JITTER_FRACTION * cfg.d_lat
    jlon = _JITTER_FRACTION * cfg.d_lon
    lats = anchor.latitude + _meters_to_deg(
        rng.uniform(-jlat, jlat, len(members)), cfg.lat_axis.meters_per_arcsecond
    )
    lons = anchor.longitude + _meters_to_deg(
        rng.uniform(-jlon, jlon, len(members)), cfg.lon_axis.meters_per_arcsecond
    )
    ids = np.asarray(members, dtype=np.int64)
    out = [b.with_positions(ids, lats, lons) for b in batches]
    pairs = {
        ContactPair.of(u, v)
        for i, u in enumerate(members)
        for v in members[i + 1 :]
    }
    return out, pairs


def plant_walkers(
    batches: Sequence[RecordBatch],
    pairs: Sequence[tuple[int, int]],
    speed: float,
    cfg: TraceConfig,
    rng: np.random.Generator,
    box: Region = CORRECTNESS_BOX,
    interval_minutes: float | None = None,
    max_tries: int = 1000,
) -> tuple[list[RecordBatch], set[ContactPair]]:
    """Move each pair along a shared heading at the given speed.

    The two members keep a fixed offset within the axis predicate, so the
    pair stays in contact at every snapshot while both displace by
    speed x interval per step (1.4 m/s over 150 s = 210 m = 7 arcseconds at
    the coarse scale). A trajectory that would leave the box is regenerated
    with a fresh start and heading.
    """
    if interval_minutes is None:
        interval_minutes = cfg.snapshot_interval
    step_m = speed * interval_minutes * 60.0
    n_snap = len(batches)
    lat_scale = cfg.lat_axis.meters_per_arcsecond
    lon_scale = cfg.lon_axis.meters_per_arcsecond
    jlat = _meters_to_deg(_JITTER_FRACTION * cfg.d_lat, lat_scale)
    jlon = _meters_to_deg(_JITTER_FRACTION * cfg.d_lon, lon_scale)

    out = [b for b in batches]
    truth: set[ContactPair] = set()
    for u, v in pairs:
        for attempt in range(max_tries):
            start = GeoPoint(
                rng.uniform(box.lat_min, box.lat_max),
                rng.uniform(box.lon_min, box.lon_max),
            )
            heading = rng.uniform(0.0, 2.0 * math.pi)
            dlat_step = _meters_to_deg(step_m * math.sin(heading), lat_scale)
            dlon_step = _meters_to_deg(step_m * math.cos(heading), lon_scale)
            off_lat = rng.uniform(-jlat, jlat)
            off_lon = rng.uniform(-jlon, jlon)
            lat_u = start.latitude + dlat_step * np.arange(n_snap)
            lon_u = start.longitude + dlon_step * np.arange(n_snap)
            lat_v = lat_u + off_lat
            lon_v = lon_u + off_lon
            all_lat = np.concatenate([lat_u, lat_v])
            all_lon = np.concatenate([lon_u, lon_v])
            if (
                all_lat.min() >= box.lat_min
                and all_lat.max() < box.lat_max
                and all_lon.min() >= box.lon_min
                and all_lon.max() < box.lon_max
            ):
                break
        else:
            raise ValueError(
                f"could not fit walker pair ({u},{v}) inside the box after {max_tries} tries"
            )
        ids = np.asarray([u, v], dtype=np.int64)
        out = [
            b.with_positions(ids, [lat_u[k], lat_v[k]], [lon_u[k], lon_v[k]])
            for k, b in enumerate(out)
        ]
        truth.add(ContactPair.of(u, v))
    return out, truth


def build_scenario(spec: ScenarioSpec, cfg: TraceConfig | None = None) -> Scenario:
    """Generate the full scenario: uniform background plus planted truth.

    Planted users take the low ids: static groups first, then walker pairs;
    the remainder stay uniform and stationary.
    """
    if cfg is None:
        cfg = TraceConfig(contact_duration_t=2 * spec.snapshot_interval_minutes)
    batches = gen_uniform(spec)
    rng = np.random.default_rng([spec.seed, 1])
    truth: set[ContactPair] = set()

    # keep anchors far enough from the box edge that jitter stays inside
    margin_lat = _meters_to_deg(
        _JITTER_FRACTION * cfg.d_lat, cfg.lat_axis.meters_per_arcsecond
    ) * 2
    margin_lon = _meters_to_deg(
        _JITTER_FRACTION * cfg.d_lon, cfg.lon_axis.meters_per_arcsecond
    ) * 2

    next_id = 0
    for _ in range(spec.static_groups):
        members = list(range(next_id, next_id + spec.static_group_size))
        next_id += spec.static_group_size
        anchor = GeoPoint(
            rng.uniform(spec.box.lat_min + margin_lat, spec.box.lat_max - margin_lat),
            rng.uniform(spec.box.lon_min + margin_lon, spec.box.lon_max - margin_lon),
        )
        batches, pairs = plant_static_group(batches, members, anchor, cfg, rng)
        truth |= pairs

    walker_ids = [
        (next_id + 2 * k, next_id + 2 * k + 1) for k in range(spec.walker_pairs)
    ]
    if walker_ids:
        batches, pairs = plant_walkers(
            batches,
            walker_ids,
            spec.walker_speed_mps,
            cfg,
            rng,
            spec.box,
            spec.snapshot_interval_minutes,
        )
        truth |= pairs
    return Scenario(spec, batches, truth)
