"""Multi-level DMS bucket index.

A coordinate maps to a leaf through four lookup levels (degree, minute,
second, and a 1/m slice of the fractional second), so insertion is constant
time: there is no comparison search. Leaves are addressed by a single linear
index that increments across second/minute/degree boundaries, which makes
neighbor scans plain integer ranges.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .geo import (
    Axis,
    AxisConfig,
    GeoPoint,
    GeoRecord,
    INDIA,
    RecordBatch,
    Region,
    RegionBoundsError,
    axis_value,
    to_dms,
)

log = logging.getLogger(__name__)

# user ids must fit in 31 bits so an unordered pair packs into one int64
MAX_USER_ID = 2**31 - 1


class DuplicateUserError(ValueError):
    """A user id was inserted twice into the same snapshot tree."""


class BucketPath(NamedTuple):
    degree: int
    minute: int
    second: int
    partition: int


@dataclass(frozen=True)
class TreeConfig:
    """Geometry of one axis tree: scale, partition count, and degree span."""

    axis_config: AxisConfig
    partitions_per_second: int
    region: Region = INDIA
    max_leaf_population: int = 100

    def __post_init__(self):
        if self.partitions_per_second < 1:
            raise ValueError("partitions_per_second must be >= 1")
        if self.max_leaf_population < 1:
            raise ValueError("max_leaf_population must be >= 1")
        if self.leaf_space > 2**31 - 1:
            raise ValueError("leaf space exceeds 31-bit addressing; coarsen partitions")

    @classmethod
    def for_axis(
        cls,
        axis_config: AxisConfig,
        region: Region = INDIA,
        partitions_per_second: int | None = None,
        max_leaf_population: int = 100,
    ) -> "TreeConfig":
        """Derive the partition count as ceil(meters_per_arcsecond / d).

        This keeps the bucket width at or below the contact distance, so
        same-bucket pairs are within d by construction; non-integer ratios
        (e.g. 30/4) round up and the neighbor window absorbs the remainder.
        """
        if partitions_per_second is None:
            partitions_per_second = math.ceil(
                axis_config.meters_per_arcsecond / axis_config.contact_distance_d
            )
        return cls(axis_config, partitions_per_second, region, max_leaf_population)

    @property
    def axis(self) -> Axis:
        return self.axis_config.axis

    @property
    def min_degree(self) -> int:
        return int(math.floor(self.region.bounds(self.axis)[0]))

    @property
    def max_degree(self) -> int:
        return int(math.ceil(self.region.bounds(self.axis)[1]))

    @property
    def degree_span(self) -> int:
        return self.max_degree - self.min_degree

    @property
    def bucket_width_m(self) -> float:
        return self.axis_config.meters_per_arcsecond / self.partitions_per_second

    @property
    def neighbor_window_buckets(self) -> int:
        """Buckets to scan on each side so cross-bucket pairs within d are seen."""
        return math.ceil(self.axis_config.contact_distance_d / self.bucket_width_m)

    @property
    def leaf_space(self) -> int:
        """Number of addressable leaves over the configured degree span."""
        return self.degree_span * 3600 * self.partitions_per_second


def bucket_path(p: GeoPoint, cfg: TreeConfig) -> BucketPath:
    """Map a point to its four-level bucket path (constant-time lookup).

    Partition intervals are lower-inclusive: partition k covers fractional
    seconds in [k/m, (k+1)/m).
    """
    value = axis_value(p, cfg.axis)
    cfg.region.require(p)
    d, mi, s, frac = to_dms(value, cfg.region.bounds(cfg.axis))
    partition = int(frac * cfg.partitions_per_second)
    return BucketPath(d, mi, s, partition)


def leaf_index(path: BucketPath, cfg: TreeConfig) -> int:
    """Linear leaf address; adjacent leaves differ by 1 across all carries."""
    off = path.degree - cfg.min_degree
    if not (0 <= off < cfg.degree_span):
        raise RegionBoundsError(f"degree {path.degree} outside tree region")
    return (
        ((off * 60 + path.minute) * 60 + path.second) * cfg.partitions_per_second
        + path.partition
    )


def path_from_index(index: int, cfg: TreeConfig) -> BucketPath:
    if not (0 <= index < cfg.leaf_space):
        raise ValueError(f"leaf index {index} outside [0, {cfg.leaf_space})")
    m = cfg.partitions_per_second
    index, partition = divmod(index, m)
    index, second = divmod(index, 60)
    degree_off, minute = divmod(index, 60)
    return BucketPath(degree_off + cfg.min_degree, minute, second, partition)


def leaf_indices(values: np.ndarray, cfg: TreeConfig) -> np.ndarray:
    """Vectorized leaf addressing for an array of axis values.

    Performs the same floor chain as :func:`bucket_path` (degree, minute,
    second, fractional partition) so scalar and bulk paths agree bit for bit.
    """
    lo, hi = cfg.region.bounds(cfg.axis)
    if values.size and (values.min() < lo or values.max() >= hi):
        bad = values[(values < lo) | (values >= hi)][0]
        raise RegionBoundsError(f"coordinate {bad} outside bounds {(lo, hi)}")
    deg = np.floor(values)
    rem = (values - deg) * 60.0
    minute = np.floor(rem)
    rem2 = (rem - minute) * 60.0
    sec = np.floor(rem2)
    frac = rem2 - sec
    part = np.floor(frac * cfg.partitions_per_second)
    m = cfg.partitions_per_second
    idx = (((deg - cfg.min_degree) * 60 + minute) * 60 + sec) * m + part
    return idx.astype(np.int32)


class _TreeColumns:
    """Leaf-sorted column view of a tree, cached for pair detection.

    Eagerly gathers the indexed axis's values; the off-axis coordinate column
    is materialized on first use (only area queries and entry listings read
    it).
    """

    def __init__(self, users, lats, lons, leafs, axis: Axis):
        self._axis = axis
        order = np.argsort(leafs)
        self.leaf_sorted = leafs[order]
        self.users_sorted = users[order]
        own = lats if axis is Axis.LATITUDE else lons
        self._own_sorted = own[order]
        self._other = lons if axis is Axis.LATITUDE else lats
        self._order = order
        self._other_sorted: np.ndarray | None = None
        n = len(self.leaf_sorted)
        if n:
            # run boundaries of the already-sorted leaf column
            change = np.empty(n, dtype=bool)
            change[0] = True
            np.not_equal(self.leaf_sorted[1:], self.leaf_sorted[:-1], out=change[1:])
            self.starts = np.nonzero(change)[0]
            self.uniq_leaves = self.leaf_sorted[self.starts]
            self.counts = np.diff(np.append(self.starts, n))
        else:
            self.starts = np.empty(0, dtype=np.int64)
            self.uniq_leaves = np.empty(0, dtype=np.int64)
            self.counts = np.empty(0, dtype=np.int64)
        if n and np.all(users[1:] > users[:-1]):
            # ids arrive pre-sorted from the generators; skip the argsort
            self.ids_by_id = users
            self.leafs_by_id = leafs
        else:
            id_order = np.argsort(users, kind="stable")
            self.ids_by_id = users[id_order]
            self.leafs_by_id = leafs[id_order]

    def _off_axis(self) -> np.ndarray:
        if self._other_sorted is None:
            self._other_sorted = self._other[self._order]
        return self._other_sorted

    @property
    def lats_sorted(self) -> np.ndarray:
        return self._own_sorted if self._axis is Axis.LATITUDE else self._off_axis()

    @property
    def lons_sorted(self) -> np.ndarray:
        return self._own_sorted if self._axis is Axis.LONGITUDE else self._off_axis()

    def vals_sorted(self, axis: Axis) -> np.ndarray:
        return self.lats_sorted if axis is Axis.LATITUDE else self.lons_sorted


class SnapshotTree:
    """Bucket index over one snapshot instant for one axis.

    Entries are (user id, full coordinate) pairs; a user id may appear at
    most once. The tree can be grown one entry at a time with :meth:`insert`
    or filled in bulk with :meth:`bulk_load`; after building it is treated as
    immutable by the detectors, which read a cached leaf-sorted column view.
    """

    def __init__(self, config: TreeConfig, snapshot_id: int = 0):
        self.config = config
        self.snapshot_id = snapshot_id
        self._users: list[int] = []
        self._lats: list[float] = []
        self._lons: list[float] = []
        self._leafs: list[int] = []
        self._user_leaf: dict[int, int] = {}
        self._arrays: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None
        self._columns: _TreeColumns | None = None

    def __len__(self) -> int:
        if self._arrays is not None:
            return len(self._arrays[0])
        return len(self._users)

    def __contains__(self, user_id: int) -> bool:
        self._ensure_user_map()
        return user_id in self._user_leaf

    @property
    def user_count(self) -> int:
        return len(self)

    def insert(self, user_id: int, p: GeoPoint) -> int:
        """Append one entry; returns the leaf index it landed in."""
        if not (0 <= user_id <= MAX_USER_ID):
            raise ValueError(f"user id {user_id} outside [0, {MAX_USER_ID}]")
        self._demote_arrays()
        self._ensure_user_map()
        if user_id in self._user_leaf:
            raise DuplicateUserError(f"user {user_id} already in snapshot {self.snapshot_id}")
        leaf = leaf_index(bucket_path(p, self.config), self.config)
        self._users.append(user_id)
        self._lats.append(p.latitude)
        self._lons.append(p.longitude)
        self._leafs.append(leaf)
        self._user_leaf[user_id] = leaf
        self._columns = None
        return leaf

    def bulk_load(self, user_ids, lats, lons) -> None:
        """Vectorized fill from parallel arrays (empty tree only)."""
        if len(self):
            raise ValueError("bulk_load requires an empty tree")
        users = np.ascontiguousarray(user_ids, dtype=np.int64)
        lats = np.ascontiguousarray(lats, dtype=np.float64)
        lons = np.ascontiguousarray(lons, dtype=np.float64)
        if users.size and (users.min() < 0 or users.max() > MAX_USER_ID):
            raise ValueError(f"user ids must lie in [0, {MAX_USER_ID}]")
        if users.size:
            if np.all(users[1:] > users[:-1]):
                pass  # strictly increasing, trivially unique
            elif np.unique(users).size != users.size:
                raise DuplicateUserError("duplicate user ids in bulk load")
        lat_lo, lat_hi = self.config.region.bounds(Axis.LATITUDE)
        lon_lo, lon_hi = self.config.region.bounds(Axis.LONGITUDE)
        if users.size:
            if lats.min() < lat_lo or lats.max() >= lat_hi:
                raise RegionBoundsError("latitude outside region in bulk load")
            if lons.min() < lon_lo or lons.max() >= lon_hi:
                raise RegionBoundsError("longitude outside region in bulk load")
        vals = lats if self.config.axis is Axis.LATITUDE else lons
        leafs = leaf_indices(vals, self.config)
        self._arrays = (users, lats, lons, leafs)
        self._user_leaf = {}
        self._columns = None

    def _demote_arrays(self) -> None:
        if self._arrays is None:
            return
        users, lats, lons, leafs = self._arrays
        self._users = users.tolist()
        self._lats = lats.tolist()
        self._lons = lons.tolist()
        self._leafs = leafs.tolist()
        self._user_leaf = dict(zip(self._users, self._leafs))
        self._arrays = None

    def _ensure_user_map(self) -> None:
        if self._arrays is not None and not self._user_leaf:
            users, _, _, leafs = self._arrays
            if len(users):
                self._user_leaf = dict(zip(users.tolist(), leafs.tolist()))

    def raw_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Insertion-order (users, lats, lons, leaf indices) arrays."""
        if self._arrays is None:
            self._arrays = (
                np.asarray(self._users, dtype=np.int64),
                np.asarray(self._lats, dtype=np.float64),
                np.asarray(self._lons, dtype=np.float64),
                np.asarray(self._leafs, dtype=np.int32),
            )
        return self._arrays

    def columns(self) -> _TreeColumns:
        if self._columns is None:
            self._columns = _TreeColumns(*self.raw_arrays(), self.config.axis)
        return self._columns

    def leaf_of(self, user_id: int) -> int:
        self._ensure_user_map()
        return self._user_leaf[user_id]

    def occupied_leaves(self) -> list[int]:
        return self.columns().uniq_leaves.tolist()

    def leaf_population(self, leaf: int) -> int:
        cols = self.columns()
        k = np.searchsorted(cols.uniq_leaves, leaf)
        if k >= len(cols.uniq_leaves) or cols.uniq_leaves[k] != leaf:
            return 0
        return int(cols.counts[k])

    def leaf_entries(self, leaf: int) -> list[tuple[int, GeoPoint]]:
        cols = self.columns()
        k = np.searchsorted(cols.uniq_leaves, leaf)
        if k >= len(cols.uniq_leaves) or cols.uniq_leaves[k] != leaf:
            return []
        s, c = int(cols.starts[k]), int(cols.counts[k])
        return [
            (int(u), GeoPoint(float(la), float(lo)))
            for u, la, lo in zip(
                cols.users_sorted[s : s + c],
                cols.lats_sorted[s : s + c],
                cols.lons_sorted[s : s + c],
            )
        ]

    def check_leaf_populations(self) -> int:
        """Warn (not fail) when any leaf exceeds the configured population bound."""
        cols = self.columns()
        if not len(cols.counts):
            return 0
        peak = int(cols.counts.max())
        if peak > self.config.max_leaf_population:
            log.warning(
                "snapshot %d: leaf population %d exceeds bound %d",
                self.snapshot_id,
                peak,
                self.config.max_leaf_population,
            )
        return peak


def build_snapshot(
    records: Sequence[GeoRecord] | RecordBatch,
    cfg: TreeConfig,
    snapshot_id: int | None = None,
) -> SnapshotTree:
    """Build one axis tree from a snapshot's records (linear in n)."""
    if isinstance(records, RecordBatch):
        batch = records
        if snapshot_id is not None and batch.snapshot_id != snapshot_id:
            raise ValueError(
                f"batch is snapshot {batch.snapshot_id}, expected {snapshot_id}"
            )
        tree = SnapshotTree(cfg, batch.snapshot_id)
        tree.bulk_load(batch.user_ids, batch.lats, batch.lons)
    else:
        records = list(records)
        if snapshot_id is None:
            snapshot_id = records[0].snapshot if records else 0
        for r in records:
            if r.snapshot != snapshot_id:
                raise ValueError(f"record {r} does not belong to snapshot {snapshot_id}")
        tree = SnapshotTree(cfg, snapshot_id)
        tree.bulk_load(
            [r.user_id for r in records],
            [r.latitude for r in records],
            [r.longitude for r in records],
        )
    tree.check_leaf_populations()
    return tree


def neighbor_leaves(tree: SnapshotTree, leaf: int, window_buckets: int) -> list[int]:
    """Occupied leaves with linear index in [leaf - window, leaf + window].

    The linear address space already carries across second/minute/degree
    boundaries, so the scan is a plain integer range clipped to the region.
    """
    if window_buckets < 0:
        raise ValueError("window_buckets must be >= 0")
    lo = max(leaf - window_buckets, 0)
    hi = min(leaf + window_buckets, tree.config.leaf_space - 1)
    uniq = tree.columns().uniq_leaves
    a = np.searchsorted(uniq, lo, side="left")
    b = np.searchsorted(uniq, hi, side="right")
    return uniq[a:b].tolist()


@dataclass(frozen=True)
class CapacityReport:
    """Dense slot arithmetic for one axis tree.

    Counts every addressable slot at all four levels (degrees, minutes,
    seconds, and leaf partitions -- leaves included) over the configured
    degree span, and prices each slot at 8 bytes. This reproduces the dense
    allocation budget; the in-memory tree itself stores occupied leaves only.
    """

    degree_slots: int
    minute_slots: int
    second_slots: int
    leaf_slots: int
    bytes_per_slot: int = 8

    @property
    def total_slots(self) -> int:
        return self.degree_slots + self.minute_slots + self.second_slots + self.leaf_slots

    @property
    def bytes_estimate(self) -> int:
        return self.total_slots * self.bytes_per_slot


def capacity_report(cfg: TreeConfig) -> CapacityReport:
    d = cfg.degree_span
    return CapacityReport(
        degree_slots=d,
        minute_slots=d * 60,
        second_slots=d * 3600,
        leaf_slots=d * 3600 * cfg.partitions_per_second,
    )
