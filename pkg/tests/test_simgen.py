import math

import numpy as np
import pytest

from proxtrace.geo import Axis, AxisConfig, GeoPoint, Region
from proxtrace.simgen import (
    CORRECTNESS_BOX,
    ScenarioSpec,
    ScenarioSpecError,
    build_scenario,
    gen_uniform,
    plant_static_group,
    plant_walkers,
)
from proxtrace.tracing import ContactPair, TraceConfig, brute_force_contacts, interval_contacts
from proxtrace.tree import TreeConfig, build_snapshot

from conftest import BOX


def batches_equal(a, b):
    return all(
        x.snapshot_id == y.snapshot_id
        and np.array_equal(x.user_ids, y.user_ids)
        and x.lats.tobytes() == y.lats.tobytes()
        and x.lons.tobytes() == y.lons.tobytes()
        for x, y in zip(a, b)
    )


class TestScenarioSpec:
    def test_defaults(self):
        spec = ScenarioSpec(n_users=10)
        assert spec.box == CORRECTNESS_BOX
        assert spec.snapshot_count == 2
        assert spec.planted_users == 0

    def test_planted_exceeds_population(self):
        with pytest.raises(ScenarioSpecError):
            ScenarioSpec(n_users=3, static_groups=2, static_group_size=2)

    def test_from_dict_unknown_field(self):
        with pytest.raises(ScenarioSpecError, match="bogus"):
            ScenarioSpec.from_dict({"n_users": 5, "bogus": 1})

    def test_from_dict_missing_n_users(self):
        with pytest.raises(ScenarioSpecError, match="n_users"):
            ScenarioSpec.from_dict({"seed": 1})

    def test_from_dict_box(self):
        spec = ScenarioSpec.from_dict({"n_users": 5, "box": [10, 11, 70, 71]})
        assert spec.box == Region(10.0, 11.0, 70.0, 71.0)

    def test_roundtrip_dict(self):
        spec = ScenarioSpec(n_users=7, seed=3, walker_pairs=2)
        again = ScenarioSpec.from_dict(spec.to_dict())
        assert again == spec


class TestGenUniform:
    def test_empty(self):
        batches = gen_uniform(ScenarioSpec(n_users=0, snapshot_count=3))
        assert len(batches) == 3
        assert all(len(b) == 0 for b in batches)

    def test_deterministic_under_seed(self):
        spec = ScenarioSpec(n_users=5000, seed=9)
        assert batches_equal(gen_uniform(spec), gen_uniform(spec))

    def test_different_seed_differs(self):
        a = gen_uniform(ScenarioSpec(n_users=100, seed=1))
        b = gen_uniform(ScenarioSpec(n_users=100, seed=2))
        assert not batches_equal(a, b)

    def test_stationary_across_snapshots(self):
        batches = gen_uniform(ScenarioSpec(n_users=50, seed=4, snapshot_count=4))
        for later in batches[1:]:
            assert np.array_equal(batches[0].lats, later.lats)
            assert np.array_equal(batches[0].lons, later.lons)

    def test_all_points_in_region_map_to_buckets(self):
        spec = ScenarioSpec(n_users=5000, seed=5, box=Region(7.0, 37.0, 68.0, 97.0))
        batches = gen_uniform(spec)
        for axis in (Axis.LATITUDE, Axis.LONGITUDE):
            cfg = TreeConfig.for_axis(AxisConfig.paper_scale(axis), spec.box)
            build_snapshot(batches[0], cfg)  # raises on any out-of-region point


class TestPlantStaticGroup:
    def test_pair_count(self):
        spec = ScenarioSpec(n_users=10, seed=6)
        batches = gen_uniform(spec)
        rng = np.random.default_rng(0)
        anchor = GeoPoint(22.05, 77.05)
        _, pairs2 = plant_static_group(batches, [0, 1], anchor, TraceConfig(), rng)
        assert pairs2 == {ContactPair(0, 1)}
        _, pairs3 = plant_static_group(batches, [0, 1, 2], anchor, TraceConfig(), rng)
        assert len(pairs3) == 3  # C(3, 2)

    def test_members_within_predicate_every_snapshot(self):
        cfg = TraceConfig()
        spec = ScenarioSpec(n_users=10, seed=7, snapshot_count=4)
        batches = gen_uniform(spec)
        rng = np.random.default_rng(1)
        batches, pairs = plant_static_group(batches, [0, 1, 2, 3], GeoPoint(22.05, 77.05), cfg, rng)
        for batch in batches:
            for pair in pairs:
                a = batch.position_of(pair.user_a)
                b = batch.position_of(pair.user_b)
                assert abs(a.latitude - b.latitude) * 3600 * 30 <= cfg.d_lat
                assert abs(a.longitude - b.longitude) * 3600 * 30 <= cfg.d_lon

    def test_recall_through_detector(self):
        spec = ScenarioSpec(n_users=2000, seed=8, static_groups=50, static_group_size=2)
        sc = build_scenario(spec)
        assert len(sc.planted_pairs) == 50
        got = interval_contacts(sc.batches[0], sc.batches[1], TraceConfig(), mode="static")
        assert sc.planted_pairs <= got


class TestPlantWalkers:
    def test_speed_zero_is_static(self):
        spec = ScenarioSpec(n_users=4, seed=9, snapshot_count=3)
        batches = gen_uniform(spec)
        rng = np.random.default_rng(2)
        batches, _ = plant_walkers(batches, [(0, 1)], 0.0, TraceConfig(), rng, spec.box)
        p0 = [batches[k].position_of(0) for k in range(3)]
        assert p0[0] == p0[1] == p0[2]

    def test_pedestrian_displacement_seven_arcseconds(self):
        # 1.4 m/s for 150 s = 210 m = 7 arcseconds at 30 m per arcsecond
        cfg = TraceConfig()
        spec = ScenarioSpec(n_users=2, seed=10, snapshot_count=2)
        batches = gen_uniform(spec)
        rng = np.random.default_rng(3)
        batches, _ = plant_walkers(batches, [(0, 1)], 1.4, cfg, rng, spec.box)
        a0 = batches[0].position_of(0)
        a1 = batches[1].position_of(0)
        dlat_m = (a1.latitude - a0.latitude) * 3600 * 30
        dlon_m = (a1.longitude - a0.longitude) * 3600 * 30
        displacement = math.hypot(dlat_m, dlon_m)
        assert displacement == pytest.approx(210.0, rel=1e-9)
        assert displacement / 30.0 <= cfg.dynamic_window_seconds  # 7" within 14"

    def test_pairs_within_predicate_throughout(self):
        cfg = TraceConfig()
        spec = ScenarioSpec(n_users=20, seed=11, snapshot_count=5)
        batches = gen_uniform(spec)
        rng = np.random.default_rng(4)
        batches, truth = plant_walkers(
            batches, [(0, 1), (2, 3), (4, 5)], 1.4, cfg, rng, spec.box
        )
        for batch in batches:
            for pair in truth:
                a = batch.position_of(pair.user_a)
                b = batch.position_of(pair.user_b)
                assert abs(a.latitude - b.latitude) * 3600 * 30 <= cfg.d_lat
                assert abs(a.longitude - b.longitude) * 3600 * 30 <= cfg.d_lon

    def test_fast_comoving_pair_is_negative_control(self):
        # 3 m/s due north: 450 m = 15 arcseconds per interval, one second
        # beyond the pedestrian window, so the oracle sees the pair but the
        # dynamic detector lets it go
        cfg = TraceConfig()
        step = 450.0 / 30.0 / 3600.0
        sep = 1.5 / 30.0 / 3600.0
        from conftest import make_batch

        b0 = make_batch(0, {1: (22.01, 77.05), 2: (22.01 + sep, 77.05)})
        b1 = make_batch(1, {1: (22.01 + step, 77.05), 2: (22.01 + step + sep, 77.05)})
        assert brute_force_contacts(b0, b1, cfg) == {ContactPair(1, 2)}
        assert interval_contacts(b0, b1, cfg, region=BOX, mode="dynamic") == set()

    def test_trajectory_regeneration_failure_raises(self):
        # displacement far larger than the box cannot fit with any heading
        tiny = Region(22.0, 22.0001, 77.0, 77.0001)
        spec = ScenarioSpec(n_users=2, seed=12, box=tiny, snapshot_count=3)
        batches = gen_uniform(spec)
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError, match="walker pair"):
            plant_walkers(batches, [(0, 1)], 50.0, TraceConfig(), rng, tiny, max_tries=50)


class TestBuildScenario:
    def test_deterministic(self):
        spec = ScenarioSpec(n_users=500, seed=13, static_groups=5, walker_pairs=5)
        a = build_scenario(spec)
        b = build_scenario(spec)
        assert batches_equal(a.batches, b.batches)
        assert a.planted_pairs == b.planted_pairs

    def test_planted_ids_disjoint(self):
        spec = ScenarioSpec(
            n_users=100, seed=14, static_groups=3, static_group_size=3, walker_pairs=4
        )
        sc = build_scenario(spec)
        planted_ids = {u for p in sc.planted_pairs for u in p}
        assert planted_ids <= set(range(spec.planted_users))
        assert len(sc.planted_pairs) == 3 * 3 + 4

    def test_planted_pairs_satisfy_oracle(self):
        spec = ScenarioSpec(n_users=300, seed=15, static_groups=4, walker_pairs=6)
        sc = build_scenario(spec)
        oracle = brute_force_contacts(sc.batches[0], sc.batches[1], TraceConfig())
        assert sc.planted_pairs <= oracle

    def test_national_density_has_no_incidental_contacts(self):
        # uniform users over the full region essentially never collide
        spec = ScenarioSpec(n_users=10_000, seed=16, box=Region(7.0, 37.0, 68.0, 97.0))
        sc = build_scenario(spec)
        oracle = brute_force_contacts(sc.batches[0], sc.batches[1], TraceConfig())
        assert len(oracle) == 0
