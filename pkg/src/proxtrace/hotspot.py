"""Potential-hotspot detection around a reference point.

Candidate users are gathered from the bucket tree by scanning leaves within
an arcminute window of the reference (wide enough to over-cover the search
radius on each axis), then kept only if their exact great-circle distance is
within the radius. Positives come from the registry; susceptible contacts of
in-area positives are cross-tallied against the search area, with those who
have since left reported separately rather than dropped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .contact_store import ContactLog, InfectionRegistry, RetentionPolicy, susceptible_of
from .geo import (
    Axis,
    GeoPoint,
    INDIA,
    REFINED_METERS_PER_ARCSECOND,
    Region,
    haversine_m,
)
from .tree import SnapshotTree


@dataclass(frozen=True)
class HotspotQuery:
    reference: GeoPoint
    radius_km: float = 10.0
    positive_threshold: int = 1
    mode: str = "threshold"  # "threshold" | "any_positive"

    def __post_init__(self):
        if self.radius_km <= 0:
            raise ValueError("radius_km must be positive")
        if self.positive_threshold < 1:
            raise ValueError("positive_threshold must be >= 1")
        if self.mode not in ("threshold", "any_positive"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class HotspotReport:
    query: HotspotQuery
    users_in_area: dict[int, GeoPoint]
    positives_in_area: set[int]
    susceptibles_in_area: set[int]
    susceptibles_departed: set[int]
    is_potential_hotspot: bool

    def to_dict(self) -> dict:
        return {
            "reference": list(self.query.reference),
            "radius_km": self.query.radius_km,
            "mode": self.query.mode,
            "positive_threshold": self.query.positive_threshold,
            "user_count": len(self.users_in_area),
            "positives_in_area": sorted(self.positives_in_area),
            "susceptibles_in_area": sorted(self.susceptibles_in_area),
            "susceptibles_departed": sorted(self.susceptibles_departed),
            "is_potential_hotspot": self.is_potential_hotspot,
        }


def arcminute_window(radius_km: float) -> float:
    """Arcminutes of latitude that cover a ground radius (10 km -> ~5.4')."""
    if radius_km <= 0:
        raise ValueError("radius_km must be positive")
    return radius_km * 1000.0 / (60.0 * REFINED_METERS_PER_ARCSECOND)


def users_within_radius(
    tree: SnapshotTree, reference: GeoPoint, radius_km: float
) -> dict[int, GeoPoint]:
    """Exact in-radius users, pre-filtered by the arcminute leaf window.

    The tree must be a latitude-axis tree; stored longitudes handle the other
    axis. The window uses the refined arc scale (smaller than the sphere's
    true meters-per-arcsecond), so it never excludes a true in-radius user;
    the final keep decision is a plain haversine comparison.
    """
    if tree.config.axis is not Axis.LATITUDE:
        raise ValueError("users_within_radius expects a latitude-axis tree")
    window_deg = arcminute_window(radius_km) / 60.0
    lon_window_deg = window_deg / math.cos(math.radians(reference.latitude))

    cfg = tree.config
    lat_lo = reference.latitude - window_deg
    lat_hi = reference.latitude + window_deg
    # leaf addresses of the window ends, clamped to the region, padded a leaf
    lo_idx = int(
        math.floor((lat_lo - cfg.min_degree) * 3600 * cfg.partitions_per_second) - 1
    )
    hi_idx = int(
        math.ceil((lat_hi - cfg.min_degree) * 3600 * cfg.partitions_per_second) + 1
    )
    lo_idx = max(lo_idx, 0)
    hi_idx = min(hi_idx, cfg.leaf_space - 1)
    if lo_idx > hi_idx:
        return {}

    cols = tree.columns()
    a = np.searchsorted(cols.leaf_sorted, lo_idx, side="left")
    b = np.searchsorted(cols.leaf_sorted, hi_idx, side="right")
    if a == b:
        return {}
    users = cols.users_sorted[a:b]
    lats = cols.lats_sorted[a:b]
    lons = cols.lons_sorted[a:b]
    near = np.abs(lons - reference.longitude) <= lon_window_deg
    radius_m = radius_km * 1000.0
    out: dict[int, GeoPoint] = {}
    for uid, lat, lon in zip(users[near].tolist(), lats[near].tolist(), lons[near].tolist()):
        p = GeoPoint(lat, lon)
        if haversine_m(p, reference) <= radius_m:
            out[uid] = p
    return out


def detect(
    query: HotspotQuery,
    tree: SnapshotTree,
    log: ContactLog,
    registry: InfectionRegistry,
    region: Region = INDIA,
    policy: RetentionPolicy | None = None,
    now: datetime | None = None,
) -> HotspotReport:
    """Gather the area, join positives and susceptibles, apply the flag rule."""
    region.require(query.reference)
    users = users_within_radius(tree, query.reference, query.radius_km)
    positives_in_area = {u for u in users if registry.is_positive(u)}
    suspects = susceptible_of(
        log, registry, policy=policy, now=now, positives=positives_in_area
    )
    susceptibles_in_area = suspects & set(users)
    susceptibles_departed = suspects - set(users)
    if query.mode == "threshold":
        flagged = len(positives_in_area) >= query.positive_threshold
    else:
        flagged = bool(positives_in_area or susceptibles_in_area)
    return HotspotReport(
        query=query,
        users_in_area=users,
        positives_in_area=positives_in_area,
        susceptibles_in_area=susceptibles_in_area,
        susceptibles_departed=susceptibles_departed,
        is_potential_hotspot=flagged,
    )


def export_markers(report: HotspotReport) -> dict:
    """GeoJSON FeatureCollection with one point per in-area user.

    Status is "positive", "susceptible", or "normal"; features are ordered by
    user id so output is deterministic.
    """
    features = []
    for uid in sorted(report.users_in_area):
        p = report.users_in_area[uid]
        if uid in report.positives_in_area:
            status = "positive"
        elif uid in report.susceptibles_in_area:
            status = "susceptible"
        else:
            status = "normal"
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [p.longitude, p.latitude],
                },
                "properties": {"user_id": uid, "status": status},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def export_markers_json(report: HotspotReport, indent: int | None = None) -> str:
    return json.dumps(export_markers(report), indent=indent)
