"""Coordinate types, DMS conversion, and distances on the sphere and along axes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, NamedTuple, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# One arcsecond of arc, in meters. The coarse value treats every second of
# latitude or longitude as 30 m, which is what the bucket widths are defined
# against; the refined value is the true meridian arc length per second, with
# a cos(latitude) correction applied for longitude.
PAPER_METERS_PER_ARCSECOND = 30.0
REFINED_METERS_PER_ARCSECOND = 30.866


class RegionBoundsError(ValueError):
    """A coordinate fell outside the configured region."""


class Axis(str, Enum):
    LATITUDE = "latitude"
    LONGITUDE = "longitude"


class GeoPoint(NamedTuple):
    latitude: float
    longitude: float


class DmsCoordinate(NamedTuple):
    """An angle split into degree / minute / second / fractional-second parts."""

    degrees: int
    minutes: int
    seconds_whole: int
    seconds_frac: float


class GeoRecord(NamedTuple):
    """One user's position at one snapshot instant."""

    user_id: int
    latitude: float
    longitude: float
    snapshot: int

    @property
    def point(self) -> GeoPoint:
        return GeoPoint(self.latitude, self.longitude)


@dataclass(frozen=True)
class Region:
    """Axis-aligned coordinate region, half-open on both axes: [min, max)."""

    lat_min: float = 7.0
    lat_max: float = 37.0
    lon_min: float = 68.0
    lon_max: float = 97.0

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("region bounds must satisfy min < max on both axes")
        if self.lat_min < 0 or self.lon_min < 0:
            raise ValueError("negative coordinates are not supported")

    def bounds(self, axis: Axis) -> tuple[float, float]:
        if axis is Axis.LATITUDE:
            return (self.lat_min, self.lat_max)
        return (self.lon_min, self.lon_max)

    def contains(self, p: GeoPoint) -> bool:
        return (
            self.lat_min <= p.latitude < self.lat_max
            and self.lon_min <= p.longitude < self.lon_max
        )

    def require(self, p: GeoPoint) -> None:
        if not (math.isfinite(p.latitude) and math.isfinite(p.longitude)):
            raise RegionBoundsError(f"non-finite coordinate: {p}")
        if not self.contains(p):
            raise RegionBoundsError(f"point {p} outside region {self}")

    def center(self) -> GeoPoint:
        return GeoPoint(
            (self.lat_min + self.lat_max) / 2.0, (self.lon_min + self.lon_max) / 2.0
        )


#: Default deployment region (India-sized box).
INDIA = Region()


@dataclass(frozen=True)
class AxisConfig:
    """Scale and contact distance for one coordinate axis.

    ``meters_per_arcsecond`` fixes how bucket widths and axis distances map to
    meters. The default 30.0 matches the coarse approximation the bucket
    arithmetic is built on; :meth:`refined` applies the true per-arcsecond arc
    length (with cos-latitude scaling for longitude) instead.
    """

    axis: Axis
    meters_per_arcsecond: float = PAPER_METERS_PER_ARCSECOND
    contact_distance_d: float = 3.0

    def __post_init__(self):
        if self.meters_per_arcsecond <= 0:
            raise ValueError("meters_per_arcsecond must be positive")
        if self.contact_distance_d <= 0:
            raise ValueError("contact_distance_d must be positive")
        if self.contact_distance_d > self.meters_per_arcsecond:
            raise ValueError("contact_distance_d must not exceed meters_per_arcsecond")

    @classmethod
    def paper_scale(cls, axis: Axis, contact_distance_d: float | None = None) -> "AxisConfig":
        """Coarse 30 m/arcsecond scale on both axes; d defaults to 3 m lat / 4 m lon."""
        if contact_distance_d is None:
            contact_distance_d = 3.0 if axis is Axis.LATITUDE else 4.0
        return cls(axis, PAPER_METERS_PER_ARCSECOND, contact_distance_d)

    @classmethod
    def refined(
        cls,
        axis: Axis,
        contact_distance_d: float | None = None,
        reference_latitude: float = 22.0,
    ) -> "AxisConfig":
        """True arc-length scale: 30.866 m/arcsec, times cos(lat) for longitude."""
        if contact_distance_d is None:
            contact_distance_d = 3.0 if axis is Axis.LATITUDE else 4.0
        scale = REFINED_METERS_PER_ARCSECOND
        if axis is Axis.LONGITUDE:
            scale *= math.cos(math.radians(reference_latitude))
        return cls(axis, scale, contact_distance_d)


def to_dms(value: float, bounds: tuple[float, float] | None = None) -> DmsCoordinate:
    """Split a non-negative decimal-degree value into DMS parts.

    ``bounds``, when given, is the half-open in-region interval for the axis
    the value belongs to; out-of-bounds values raise :class:`RegionBoundsError`.
    The fractional second keeps full double precision, so
    ``from_dms(to_dms(v))`` reproduces ``v`` to well under 1e-9 degrees.
    """
    if not math.isfinite(value) or value < 0:
        raise RegionBoundsError(f"coordinate must be finite and non-negative, got {value}")
    if bounds is not None and not (bounds[0] <= value < bounds[1]):
        raise RegionBoundsError(f"coordinate {value} outside bounds {bounds}")
    degrees = int(value)
    rem_min = (value - degrees) * 60.0
    minutes = int(rem_min)
    rem_sec = (rem_min - minutes) * 60.0
    seconds_whole = int(rem_sec)
    seconds_frac = rem_sec - seconds_whole
    return DmsCoordinate(degrees, minutes, seconds_whole, seconds_frac)


def from_dms(c: DmsCoordinate) -> float:
    """Reconstruct decimal degrees: degrees + minutes/60 + seconds/3600."""
    if not (0 <= c.minutes <= 59 and 0 <= c.seconds_whole <= 59):
        raise ValueError(f"minutes/seconds out of range: {c}")
    if not (0.0 <= c.seconds_frac < 1.0):
        raise ValueError(f"seconds_frac must lie in [0, 1): {c}")
    if c.degrees < 0:
        raise ValueError(f"negative degrees not supported: {c}")
    return c.degrees + c.minutes / 60.0 + (c.seconds_whole + c.seconds_frac) / 3600.0


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371,000 m."""
    phi1 = math.radians(a.latitude)
    phi2 = math.radians(b.latitude)
    dphi = math.radians(b.latitude - a.latitude)
    dlam = math.radians(b.longitude - a.longitude)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def axis_value(p: GeoPoint, axis: Axis) -> float:
    return p.latitude if axis is Axis.LATITUDE else p.longitude


def axis_distance_m(a: GeoPoint, b: GeoPoint, cfg: AxisConfig) -> float:
    """Separation along one axis: |difference in arcseconds| x meters-per-arcsecond."""
    arcsec = abs(axis_value(a, cfg.axis) - axis_value(b, cfg.axis)) * 3600.0
    return arcsec * cfg.meters_per_arcsecond


class RecordBatch:
    """Columnar batch of :class:`GeoRecord` for one snapshot instant.

    Stores user ids and coordinates as parallel numpy arrays so bulk indexing
    and generation stay vectorized; iteration yields ``GeoRecord`` views.
    """

    def __init__(self, snapshot_id: int, user_ids, lats, lons):
        self.snapshot_id = int(snapshot_id)
        self.user_ids = np.ascontiguousarray(user_ids, dtype=np.int64)
        self.lats = np.ascontiguousarray(lats, dtype=np.float64)
        self.lons = np.ascontiguousarray(lons, dtype=np.float64)
        if not (len(self.user_ids) == len(self.lats) == len(self.lons)):
            raise ValueError("user_ids, lats, lons must have equal length")
        self._id_order: np.ndarray | None = None

    @classmethod
    def from_records(cls, records: Sequence[GeoRecord], snapshot_id: int | None = None) -> "RecordBatch":
        records = list(records)
        if snapshot_id is None:
            if not records:
                raise ValueError("snapshot_id required for an empty batch")
            snapshot_id = records[0].snapshot
        for r in records:
            if r.snapshot != snapshot_id:
                raise ValueError(f"record {r} does not belong to snapshot {snapshot_id}")
        return cls(
            snapshot_id,
            [r.user_id for r in records],
            [r.latitude for r in records],
            [r.longitude for r in records],
        )

    def __len__(self) -> int:
        return len(self.user_ids)

    def __iter__(self) -> Iterator[GeoRecord]:
        for uid, lat, lon in zip(self.user_ids, self.lats, self.lons):
            yield GeoRecord(int(uid), float(lat), float(lon), self.snapshot_id)

    def _ensure_id_order(self) -> np.ndarray:
        if self._id_order is None:
            self._id_order = np.argsort(self.user_ids, kind="stable")
        return self._id_order

    def position_of(self, user_id: int) -> GeoPoint:
        order = self._ensure_id_order()
        ids = self.user_ids[order]
        k = np.searchsorted(ids, user_id)
        if k >= len(ids) or ids[k] != user_id:
            raise KeyError(f"user {user_id} not in snapshot {self.snapshot_id}")
        pos = order[k]
        return GeoPoint(float(self.lats[pos]), float(self.lons[pos]))

    def with_positions(self, user_ids, lats, lons) -> "RecordBatch":
        """Copy of this batch with the given users' coordinates overridden."""
        user_ids = np.asarray(user_ids, dtype=np.int64)
        if len(self) == 0 and len(user_ids):
            raise KeyError("unknown user id in position override")
        new_lats = self.lats.copy()
        new_lons = self.lons.copy()
        order = self._ensure_id_order()
        sorted_ids = self.user_ids[order]
        k = np.minimum(np.searchsorted(sorted_ids, user_ids), len(sorted_ids) - 1)
        pos = order[k]
        if not np.array_equal(self.user_ids[pos], user_ids):
            raise KeyError("unknown user id in position override")
        new_lats[pos] = lats
        new_lons[pos] = lons
        return RecordBatch(self.snapshot_id, self.user_ids.copy(), new_lats, new_lons)
