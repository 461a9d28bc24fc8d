"""Proximity contact detection on a DMS bucket tree.

User GPS snapshots are indexed into per-axis degree/minute/second/partition
bucket trees; pairs co-located at consecutive snapshot instants form contact
events. On top of the contact log sit potential-hotspot detection and
hotspot-avoiding route recommendation.
"""

from .geo import (
    Axis,
    AxisConfig,
    DmsCoordinate,
    EARTH_RADIUS_M,
    GeoPoint,
    GeoRecord,
    INDIA,
    RecordBatch,
    Region,
    RegionBoundsError,
    axis_distance_m,
    from_dms,
    haversine_m,
    to_dms,
)
from .tree import (
    BucketPath,
    CapacityReport,
    DuplicateUserError,
    SnapshotTree,
    TreeConfig,
    bucket_path,
    build_snapshot,
    capacity_report,
    leaf_index,
    neighbor_leaves,
    path_from_index,
)
from .tracing import (
    ConfigMismatchError,
    ContactEvent,
    ContactPair,
    TraceConfig,
    axis_close_pairs,
    brute_force_contacts,
    chain_durations,
    combine_axes,
    dynamic_contacts,
    interval_contacts,
    static_contacts,
    trace_stream,
)
from .contact_store import (
    ContactLog,
    InfectionRegistry,
    RetentionPolicy,
    susceptible_of,
)
from .hotspot import HotspotQuery, HotspotReport, arcminute_window, detect, export_markers
from .routing import (
    CityGraph,
    HotspotEndpointError,
    RouteResult,
    UnknownCityError,
    baseline_route,
    india_city_graph,
    safe_route,
)
from .simgen import (
    CORRECTNESS_BOX,
    Scenario,
    ScenarioSpec,
    ScenarioSpecError,
    build_scenario,
    gen_uniform,
    plant_static_group,
    plant_walkers,
)

__version__ = "0.1.0"
