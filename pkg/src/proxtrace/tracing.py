"""Contact detection over pairs of snapshot trees.

A contact pair is two users within the per-axis contact distance at two
consecutive snapshot instants. Detection runs per axis on the bucket trees
(same-bucket pairs are free, cross-bucket candidates get verified against an
explicit axis distance), the two instants are combined by pair-set
intersection, and finally the latitude and longitude pair sets are
intersected. ``brute_force_contacts`` is the quadratic ground truth the tree
detectors are tested against.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
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
)
from .tree import SnapshotTree, TreeConfig, build_snapshot

log = logging.getLogger(__name__)

_ID_MASK = (1 << 32) - 1


class ConfigMismatchError(ValueError):
    """Two snapshot trees with different configurations were combined."""


class ContactPair(NamedTuple):
    """Unordered user pair in canonical (smaller id first) form."""

    user_a: int
    user_b: int

    @classmethod
    def of(cls, u: int, v: int) -> "ContactPair":
        if u == v:
            raise ValueError(f"self-pair for user {u}")
        return cls(u, v) if u < v else cls(v, u)


class ContactEvent(NamedTuple):
    """A detected contact over one snapshot interval.

    ``location`` is user_a's position at the closing snapshot, kept so a later
    diagnosis can answer where the exposure happened.
    """

    pair: ContactPair
    snapshot_from: int
    snapshot_to: int
    location: GeoPoint


@dataclass(frozen=True)
class TraceConfig:
    """Cadence, per-axis contact distances, and the co-movement window.

    Snapshots are sampled every t/2 minutes so that any pair together for at
    least t minutes is seen at two consecutive instants. The dynamic window is
    how far (in arcseconds) a user may drift between instants and still be
    tracked: at walking speed, speed * t seconds of travel, converted at the
    latitude scale (1.4 m/s over 5 min = 420 m = 14 arcseconds).
    """

    contact_duration_t: float = 5.0  # minutes
    lat_axis: AxisConfig = field(
        default_factory=lambda: AxisConfig.paper_scale(Axis.LATITUDE)
    )
    lon_axis: AxisConfig = field(
        default_factory=lambda: AxisConfig.paper_scale(Axis.LONGITUDE)
    )
    pedestrian_speed: float = 1.4  # m/s
    dynamic_window_seconds: int | None = None  # arcseconds; None derives from speed

    def __post_init__(self):
        if self.contact_duration_t <= 0:
            raise ValueError("contact_duration_t must be positive")
        if self.pedestrian_speed < 0:
            raise ValueError("pedestrian_speed must be >= 0")
        if self.lat_axis.axis is not Axis.LATITUDE or self.lon_axis.axis is not Axis.LONGITUDE:
            raise ValueError("lat_axis/lon_axis have swapped or wrong axes")
        if self.dynamic_window_seconds is None:
            derived = math.ceil(
                self.pedestrian_speed
                * self.contact_duration_t
                * 60.0
                / self.lat_axis.meters_per_arcsecond
            )
            object.__setattr__(self, "dynamic_window_seconds", derived)
        if self.dynamic_window_seconds < 0:
            raise ValueError("dynamic_window_seconds must be >= 0")

    @property
    def snapshot_interval(self) -> float:
        """Minutes between snapshots: half the contact duration."""
        return self.contact_duration_t / 2.0

    @property
    def d_lat(self) -> float:
        return self.lat_axis.contact_distance_d

    @property
    def d_lon(self) -> float:
        return self.lon_axis.contact_distance_d

    def axis_config(self, axis: Axis) -> AxisConfig:
        return self.lat_axis if axis is Axis.LATITUDE else self.lon_axis


def _encode(users_i: np.ndarray, users_j: np.ndarray) -> np.ndarray:
    a = np.minimum(users_i, users_j)
    b = np.maximum(users_i, users_j)
    return (a << 32) | b


def _close_codes(
    tree: SnapshotTree,
    d_axis: float,
    window_buckets: int,
    leaf_range: tuple[int, int] | None = None,
) -> np.ndarray:
    """Pair codes for users within d_axis of each other in one tree.

    Works over the leaf-sorted entry order: entry i is paired with entry
    i+delta for growing delta while their leaves are at most the neighbor
    window apart. Same-bucket pairs (leaf gap 0) are admitted without
    re-measurement when the bucket width is within d_axis; every cross-bucket
    candidate is verified against the explicit axis distance. Because the
    leaf gap is non-decreasing in delta, entries drop out of the scan
    permanently once their window is exhausted, so total work is linear in
    the number of entries plus candidates.

    ``leaf_range`` restricts the left-hand side of pair generation to a slice
    of the occupied-leaf list; right-hand partners may come from anywhere, so
    sharding the range over workers partitions the work without losing or
    duplicating pairs.
    """
    cols = tree.columns()
    uniq, starts = cols.uniq_leaves, cols.starts
    if len(uniq) == 0:
        return np.empty(0, dtype=np.int64)
    leaf = cols.leaf_sorted
    vals = cols.vals_sorted(tree.config.axis)
    users = cols.users_sorted
    n = len(leaf)
    mpas = tree.config.axis_config.meters_per_arcsecond
    same_bucket_free = tree.config.bucket_width_m <= d_axis

    u_lo, u_hi = leaf_range if leaf_range is not None else (0, len(uniq))
    if u_lo >= u_hi:
        return np.empty(0, dtype=np.int64)
    lo = int(starts[u_lo])
    hi = int(starts[u_hi]) if u_hi < len(uniq) else n

    parts: list[np.ndarray] = []
    active = np.arange(lo, hi, dtype=np.int32)
    delta = 1
    while len(active):
        active = active[active + delta < n]
        if not len(active):
            break
        j = active + delta
        gap = leaf[j] - leaf[active]
        within = gap <= window_buckets
        active = active[within]
        if len(active):
            i = active
            j = i + delta
            dist = np.abs(vals[i] - vals[j]) * 3600.0 * mpas
            keep = dist <= d_axis
            if same_bucket_free:
                keep |= gap[within] == 0
            if keep.any():
                parts.append(_encode(users[i[keep]], users[j[keep]]))
        delta += 1

    if not parts:
        return np.empty(0, dtype=np.int64)
    # a user pair appears at exactly one delta, so no pair is generated twice
    # and plain sorting yields a unique sorted code array
    return np.sort(np.concatenate(parts))


def _close_codes_threaded(
    tree: SnapshotTree, d_axis: float, window_buckets: int, threads: int
) -> np.ndarray:
    uniq = tree.columns().uniq_leaves
    if threads <= 1 or len(uniq) < 2 * threads:
        return _close_codes(tree, d_axis, window_buckets)
    bounds = np.linspace(0, len(uniq), threads + 1).astype(int)
    ranges = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if a < b]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        chunks = list(
            pool.map(lambda r: _close_codes(tree, d_axis, window_buckets, r), ranges)
        )
    chunks = [c for c in chunks if len(c)]
    if not chunks:
        return np.empty(0, dtype=np.int64)
    # shards cover disjoint left-leaf ranges, so codes stay duplicate-free
    return np.sort(np.concatenate(chunks))


def _decode(codes: np.ndarray) -> set[ContactPair]:
    a = (codes >> 32).tolist()
    b = (codes & _ID_MASK).tolist()
    return {ContactPair(x, y) for x, y in zip(a, b)}


def _default_window(tree: SnapshotTree, d_axis: float) -> int:
    return math.ceil(d_axis / tree.config.bucket_width_m)


def axis_close_pairs(
    tree: SnapshotTree,
    d_axis: float | None = None,
    window_buckets: int | None = None,
    threads: int = 1,
) -> set[ContactPair]:
    """All pairs whose separation along this tree's axis is <= d_axis."""
    if d_axis is None:
        d_axis = tree.config.axis_config.contact_distance_d
    if window_buckets is None:
        window_buckets = _default_window(tree, d_axis)
    return _decode(_close_codes_threaded(tree, d_axis, window_buckets, threads))


def _require_same_config(tree_t: SnapshotTree, tree_t1: SnapshotTree) -> None:
    if tree_t.config != tree_t1.config:
        raise ConfigMismatchError(
            f"tree configs differ: {tree_t.config} vs {tree_t1.config}"
        )


def _member_sorted(values: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Membership of ``values`` in a sorted unique ``table``."""
    if not len(table):
        return np.zeros(len(values), dtype=bool)
    pos = np.searchsorted(table, values)
    pos[pos == len(table)] = len(table) - 1
    return table[pos] == values


def _intersect_sorted(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Intersection of two sorted unique arrays without re-sorting."""
    if len(a) > len(b):
        a, b = b, a
    if not len(a):
        return a
    return a[_member_sorted(a, b)]


def _displacement_ok_ids(
    tree_t: SnapshotTree, tree_t1: SnapshotTree, max_buckets: int
) -> np.ndarray:
    ct, ct1 = tree_t.columns(), tree_t1.columns()
    a_ids, b_ids = ct.ids_by_id, ct1.ids_by_id
    if not len(a_ids) or not len(b_ids):
        return np.empty(0, dtype=np.int64)
    pos = np.searchsorted(b_ids, a_ids)
    pos_c = np.minimum(pos, len(b_ids) - 1)
    match = b_ids[pos_c] == a_ids
    moved = np.abs(ct.leafs_by_id[match] - ct1.leafs_by_id[pos_c[match]])
    return a_ids[match][moved <= max_buckets]


def _filter_codes_by_ids(codes: np.ndarray, ok_ids: np.ndarray) -> np.ndarray:
    if not len(codes):
        return codes
    a = codes >> 32
    b = codes & _ID_MASK
    keep = _member_sorted(a, ok_ids) & _member_sorted(b, ok_ids)
    return codes[keep]


def _windowed_contacts_codes(
    tree_t: SnapshotTree,
    tree_t1: SnapshotTree,
    d_axis: float,
    neighbor_window: int,
    displacement_window: int,
    threads: int = 1,
) -> np.ndarray:
    codes_t = _close_codes_threaded(tree_t, d_axis, neighbor_window, threads)
    codes_t1 = _close_codes_threaded(tree_t1, d_axis, neighbor_window, threads)
    both = _intersect_sorted(codes_t, codes_t1)
    if not len(both):
        return both
    ok = _displacement_ok_ids(tree_t, tree_t1, displacement_window)
    return _filter_codes_by_ids(both, ok)


def static_contacts(
    tree_t: SnapshotTree,
    tree_t1: SnapshotTree,
    d_axis: float | None = None,
    window_buckets: int | None = None,
    threads: int = 1,
) -> set[ContactPair]:
    """Pairs within d_axis at both instants, for users that stayed put.

    The two instants are combined by intersecting their close-pair sets
    leafwise; users are allowed to drift at most the neighbor window (the
    end-case allowance), so genuinely moving pairs belong to
    :func:`dynamic_contacts` instead.
    """
    _require_same_config(tree_t, tree_t1)
    if d_axis is None:
        d_axis = tree_t.config.axis_config.contact_distance_d
    if window_buckets is None:
        window_buckets = _default_window(tree_t, d_axis)
    codes = _windowed_contacts_codes(
        tree_t, tree_t1, d_axis, window_buckets, window_buckets, threads
    )
    return _decode(codes)


def dynamic_contacts(
    tree_t: SnapshotTree,
    tree_t1: SnapshotTree,
    cfg: TraceConfig,
    threads: int = 1,
) -> set[ContactPair]:
    """Pairs within d_axis at both instants while co-moving within the window.

    A user may move up to ``cfg.dynamic_window_seconds`` arcseconds between
    the two instants (q buckets-per-arcsecond times m leaves each side); pairs
    whose members drift farther are outside the pedestrian assumption and are
    dropped.
    """
    _require_same_config(tree_t, tree_t1)
    d_axis = cfg.axis_config(tree_t.config.axis).contact_distance_d
    neighbor = _default_window(tree_t, d_axis)
    displacement = cfg.dynamic_window_seconds * tree_t.config.partitions_per_second
    codes = _windowed_contacts_codes(
        tree_t, tree_t1, d_axis, neighbor, displacement, threads
    )
    return _decode(codes)


def combine_axes(
    lat_pairs: set[ContactPair], lon_pairs: set[ContactPair]
) -> set[ContactPair]:
    """Final contact list: pairs close on latitude AND on longitude."""
    return lat_pairs & lon_pairs


def _as_batch(records, snapshot_id=None) -> RecordBatch:
    if isinstance(records, RecordBatch):
        return records
    return RecordBatch.from_records(list(records), snapshot_id)


def brute_force_contacts(
    records_t,
    records_t1,
    cfg: TraceConfig,
    block: int = 512,
) -> set[ContactPair]:
    """Ground-truth quadratic scan of the axis predicate.

    A pair qualifies iff at BOTH snapshots |dlat| <= d_lat and |dlon| <= d_lon
    (axis distances, not the Euclidean diagonal). Runs all-pairs with no
    spatial index; this is the oracle the tree detectors must reproduce.
    """
    bt = _as_batch(records_t)
    bt1 = _as_batch(records_t1)
    order_t = np.argsort(bt.user_ids, kind="stable")
    order_t1 = np.argsort(bt1.user_ids, kind="stable")
    common, ia, ib = np.intersect1d(
        bt.user_ids[order_t], bt1.user_ids[order_t1], return_indices=True
    )
    n = len(common)
    if n < 2:
        return set()
    lat_t = bt.lats[order_t][ia]
    lon_t = bt.lons[order_t][ia]
    lat_t1 = bt1.lats[order_t1][ib]
    lon_t1 = bt1.lons[order_t1][ib]
    s_lat = cfg.lat_axis.meters_per_arcsecond
    s_lon = cfg.lon_axis.meters_per_arcsecond

    pairs: set[ContactPair] = set()
    for s in range(0, n, block):
        e = min(s + block, n)
        close = (
            (np.abs(lat_t[s:e, None] - lat_t[None, s:]) * 3600.0 * s_lat <= cfg.d_lat)
            & (np.abs(lon_t[s:e, None] - lon_t[None, s:]) * 3600.0 * s_lon <= cfg.d_lon)
            & (np.abs(lat_t1[s:e, None] - lat_t1[None, s:]) * 3600.0 * s_lat <= cfg.d_lat)
            & (np.abs(lon_t1[s:e, None] - lon_t1[None, s:]) * 3600.0 * s_lon <= cfg.d_lon)
        )
        ii, jj = np.nonzero(close)
        jj = jj + s
        ii = ii + s
        keep = jj > ii
        for i, j in zip(ii[keep].tolist(), jj[keep].tolist()):
            pairs.add(ContactPair(int(common[i]), int(common[j])))
    return pairs


def build_axis_trees(
    batch, cfg: TraceConfig, region: Region = INDIA
) -> tuple[SnapshotTree, SnapshotTree]:
    """Build the latitude and longitude trees for one snapshot batch."""
    lat_cfg = TreeConfig.for_axis(cfg.lat_axis, region)
    lon_cfg = TreeConfig.for_axis(cfg.lon_axis, region)
    b = _as_batch(batch)
    return build_snapshot(b, lat_cfg), build_snapshot(b, lon_cfg)


def _detector_codes(
    tree_t: SnapshotTree,
    tree_t1: SnapshotTree,
    cfg: TraceConfig,
    kind: str,
    threads: int,
) -> np.ndarray:
    _require_same_config(tree_t, tree_t1)
    d_axis = cfg.axis_config(tree_t.config.axis).contact_distance_d
    neighbor = _default_window(tree_t, d_axis)
    if kind == "static":
        displacement = neighbor
    else:
        displacement = cfg.dynamic_window_seconds * tree_t.config.partitions_per_second
    return _windowed_contacts_codes(
        tree_t, tree_t1, d_axis, neighbor, displacement, threads
    )


def detect_interval(
    lat_t: SnapshotTree,
    lon_t: SnapshotTree,
    lat_t1: SnapshotTree,
    lon_t1: SnapshotTree,
    cfg: TraceConfig,
    mode: str = "both",
    threads: int = 1,
) -> set[ContactPair]:
    """Run the configured detector over prebuilt axis trees for one interval.

    The per-axis pair sets stay as packed code arrays until after the axis
    intersection, so only the final (small) contact list is materialized.
    """
    if mode not in ("static", "dynamic", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    kinds = {"static": ("static",), "dynamic": ("dynamic",), "both": ("static", "dynamic")}
    out = np.empty(0, dtype=np.int64)
    for kind in kinds[mode]:
        lat_codes = _detector_codes(lat_t, lat_t1, cfg, kind, threads)
        lon_codes = _detector_codes(lon_t, lon_t1, cfg, kind, threads)
        both = _intersect_sorted(lat_codes, lon_codes)
        out = np.union1d(out, both)
    return _decode(out)


def interval_contacts(
    batch_t,
    batch_t1,
    cfg: TraceConfig,
    region: Region = INDIA,
    mode: str = "both",
    threads: int = 1,
) -> set[ContactPair]:
    """Full per-interval pipeline: build four trees, detect, combine axes."""
    lat_t, lon_t = build_axis_trees(batch_t, cfg, region)
    lat_t1, lon_t1 = build_axis_trees(batch_t1, cfg, region)
    return detect_interval(lat_t, lon_t, lat_t1, lon_t1, cfg, mode, threads)


def trace_stream(
    snapshots: Sequence,
    cfg: TraceConfig,
    region: Region = INDIA,
    mode: str = "both",
    threads: int = 1,
) -> list[ContactEvent]:
    """Detect contacts over every consecutive snapshot pair.

    Batches must be ordered by snapshot index and spaced t/2 apart; a gap in
    the numbering skips that interval with a warning. A pair that stays in
    contact across k consecutive intervals shows up as k chained events,
    certifying a duration of at least k*(t/2) minutes.
    """
    batches = [_as_batch(b) for b in snapshots]
    events: list[ContactEvent] = []
    for prev, cur in zip(batches[:-1], batches[1:]):
        if cur.snapshot_id != prev.snapshot_id + 1:
            log.warning(
                "snapshot gap: %d -> %d, interval skipped",
                prev.snapshot_id,
                cur.snapshot_id,
            )
            continue
        pairs = interval_contacts(prev, cur, cfg, region, mode, threads)
        for pair in sorted(pairs):
            events.append(
                ContactEvent(
                    pair,
                    prev.snapshot_id,
                    cur.snapshot_id,
                    cur.position_of(pair.user_a),
                )
            )
    return events


def chain_durations(
    events: Iterable[ContactEvent], cfg: TraceConfig
) -> dict[ContactPair, float]:
    """Certified contact minutes per pair: longest chain of consecutive
    intervals times the snapshot interval."""
    intervals: dict[ContactPair, set[int]] = {}
    for ev in events:
        intervals.setdefault(ev.pair, set()).add(ev.snapshot_from)
    certified: dict[ContactPair, float] = {}
    for pair, starts in intervals.items():
        run = best = 0
        prev = None
        for k in sorted(starts):
            run = run + 1 if prev is not None and k == prev + 1 else 1
            best = max(best, run)
            prev = k
        certified[pair] = best * cfg.snapshot_interval
    return certified
