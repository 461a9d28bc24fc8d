from datetime import datetime

import numpy as np
import pytest

from proxtrace.contact_store import ContactLog, InfectionRegistry
from proxtrace.geo import Axis, AxisConfig, GeoPoint, RecordBatch, Region
from proxtrace.tracing import ContactEvent, ContactPair, TraceConfig
from proxtrace.tree import TreeConfig, build_snapshot

# correctness box used throughout: dense enough for collisions, mid-latitude
BOX = Region(22.0, 22.1, 77.0, 77.1)


@pytest.fixture
def trace_cfg():
    return TraceConfig()


@pytest.fixture
def lat_tree_cfg():
    return TreeConfig.for_axis(AxisConfig.paper_scale(Axis.LATITUDE), BOX)


@pytest.fixture
def lon_tree_cfg():
    return TreeConfig.for_axis(AxisConfig.paper_scale(Axis.LONGITUDE), BOX)


def make_batch(snapshot_id, positions):
    """Batch from {user_id: (lat, lon)}."""
    ids = sorted(positions)
    return RecordBatch(
        snapshot_id,
        np.array(ids, dtype=np.int64),
        np.array([positions[u][0] for u in ids]),
        np.array([positions[u][1] for u in ids]),
    )


def fig_hot_fixture():
    """The 20-user map scenario: positives {1, 3, 9, 14}, contact (6, 9).

    Users sit within ~2 km of the reference point; user 6 shares a logged
    contact with positive user 9 at interval 0.
    """
    reference = GeoPoint(22.05, 77.05)
    rng = np.random.default_rng(42)
    positions = {}
    for uid in range(1, 21):
        positions[uid] = (
            reference.latitude + rng.uniform(-0.015, 0.015),
            reference.longitude + rng.uniform(-0.015, 0.015),
        )
    batch = make_batch(0, positions)

    registry = InfectionRegistry()
    for uid in (1, 3, 9, 14):
        registry.mark_positive(uid, datetime(2020, 3, 1))

    log = ContactLog()
    loc = GeoPoint(*positions[6])
    log.record_events([ContactEvent(ContactPair.of(6, 9), 0, 1, loc)])
    return reference, batch, registry, log


@pytest.fixture
def fig_hot():
    return fig_hot_fixture()
