import json
from datetime import datetime

import numpy as np
import pytest

from proxtrace.cli import (
    EXIT_NO_PATH,
    EXIT_OK,
    RunConfig,
    bench_pipeline,
    main,
    read_snapshot_file,
    write_snapshot_binary,
    write_snapshot_csv,
)
from proxtrace.contact_store import ContactLog, InfectionRegistry
from proxtrace.geo import GeoPoint, RecordBatch
from proxtrace.tracing import ContactEvent, ContactPair

from conftest import fig_hot_fixture, make_batch

BOX_SPEC = {
    "n_users": 40,
    "seed": 5,
    "box": [22.0, 22.1, 77.0, 77.1],
    "snapshot_count": 2,
    "static_groups": 1,
    "static_group_size": 2,
}


def write_spec(tmp_path, spec=BOX_SPEC, name="spec.json"):
    path = tmp_path / name
    path.write_text(json.dumps(spec))
    return path


class TestRunConfig:
    def test_hash_stable_and_sensitive(self):
        a, b = RunConfig(), RunConfig()
        assert a.config_hash() == b.config_hash()
        assert RunConfig(d_lat=2.5).config_hash() != a.config_hash()

    def test_from_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"d_lat": 2.0, "threads": 2}))
        cfg = RunConfig.from_file(path)
        assert cfg.d_lat == 2.0
        assert cfg.threads == 2

    def test_from_file_unknown_field(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"nope": 1}))
        with pytest.raises(ValueError, match="nope"):
            RunConfig.from_file(path)

    def test_tree_configs_partitions(self):
        lat_cfg, lon_cfg = RunConfig().tree_configs()
        assert lat_cfg.partitions_per_second == 10
        assert lon_cfg.partitions_per_second == 8


class TestSnapshotFiles:
    def test_csv_roundtrip(self, tmp_path):
        batch = make_batch(2, {1: (22.01, 77.02), 5: (22.03, 77.04)})
        path = tmp_path / "snap.csv"
        write_snapshot_csv(path, batch, {"snapshot": 2, "config_hash": "abc"})
        loaded, header = read_snapshot_file(path)
        assert header["config_hash"] == "abc"
        assert loaded.snapshot_id == 2
        assert np.array_equal(loaded.user_ids, batch.user_ids)
        assert np.array_equal(loaded.lats, batch.lats)

    def test_binary_roundtrip_matches_csv(self, tmp_path):
        rng = np.random.default_rng(0)
        batch = RecordBatch(1, np.arange(200), rng.uniform(22, 22.1, 200), rng.uniform(77, 77.1, 200))
        csv_path = tmp_path / "s.csv"
        bin_path = tmp_path / "s.bin"
        write_snapshot_csv(csv_path, batch, {"snapshot": 1})
        write_snapshot_binary(bin_path, batch, {"snapshot": 1})
        from_csv, _ = read_snapshot_file(csv_path)
        from_bin, _ = read_snapshot_file(bin_path)
        assert np.array_equal(from_csv.user_ids, from_bin.user_ids)
        assert from_csv.lats.tobytes() == from_bin.lats.tobytes()
        assert from_csv.lons.tobytes() == from_bin.lons.tobytes()

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("user_id,lat,lon,snapshot\n1,22.0,77.0,0\n")
        with pytest.raises(ValueError, match="header"):
            read_snapshot_file(path)


class TestGenerate:
    def test_minimal_spec(self, tmp_path, capsys):
        spec = write_spec(tmp_path, {"n_users": 10, "snapshot_count": 2, "box": [22.0, 22.1, 77.0, 77.1]})
        out = tmp_path / "out"
        assert main(["generate", "--spec", str(spec), "--out-dir", str(out)]) == EXIT_OK
        files = sorted(out.glob("snapshot_*.csv"))
        assert len(files) == 2
        for path in files:
            batch, header = read_snapshot_file(path)
            assert len(batch) == 10
            assert "config_hash" in header

    def test_malformed_spec_names_field(self, tmp_path, capsys):
        spec = write_spec(tmp_path, {"n_users": 5, "wrong_field": 3})
        out = tmp_path / "out"
        assert main(["generate", "--spec", str(spec), "--out-dir", str(out)]) == 1
        assert "wrong_field" in capsys.readouterr().err

    def test_seed_override_changes_output(self, tmp_path):
        spec = write_spec(tmp_path)
        out_a, out_b, out_c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        main(["generate", "--spec", str(spec), "--out-dir", str(out_a)])
        main(["generate", "--spec", str(spec), "--out-dir", str(out_b)])
        main(["generate", "--spec", str(spec), "--out-dir", str(out_c), "--seed", "99"])
        same = (out_a / "snapshot_0000.csv").read_bytes()
        assert same == (out_b / "snapshot_0000.csv").read_bytes()
        assert same != (out_c / "snapshot_0000.csv").read_bytes()

    def test_planted_pairs_file(self, tmp_path):
        spec = write_spec(tmp_path)
        out = tmp_path / "out"
        main(["generate", "--spec", str(spec), "--out-dir", str(out)])
        lines = (out / "planted_pairs.csv").read_text().splitlines()
        assert lines[1] == "user_a,user_b"
        assert lines[2] == "0,1"

    def test_binary_format(self, tmp_path):
        spec = write_spec(tmp_path)
        out = tmp_path / "out"
        main(["generate", "--spec", str(spec), "--out-dir", str(out), "--format", "binary"])
        batch, _ = read_snapshot_file(out / "snapshot_0000.bin")
        assert len(batch) == 40


class TestTrace:
    def run_trace(self, tmp_path, extra=()):
        spec = write_spec(tmp_path)
        gen_dir = tmp_path / "snaps"
        main(["generate", "--spec", str(spec), "--out-dir", str(gen_dir)])
        contacts = tmp_path / "contacts.csv"
        timing = tmp_path / "timing.json"
        code = main(
            [
                "trace",
                str(gen_dir / "snapshot_0000.csv"),
                str(gen_dir / "snapshot_0001.csv"),
                "--out",
                str(contacts),
                "--timing",
                str(timing),
                *extra,
            ]
        )
        return code, contacts, timing

    def test_planted_pair_detected(self, tmp_path):
        code, contacts, timing = self.run_trace(tmp_path)
        assert code == EXIT_OK
        lines = contacts.read_text().splitlines()
        header = json.loads(lines[0])
        assert "config_hash" in header
        assert lines[1] == "user_a,user_b,interval,lat,lon"
        rows = [line.split(",")[:3] for line in lines[2:]]
        assert ["0", "1", "0"] in rows

    def test_timing_report_shape(self, tmp_path):
        _, _, timing = self.run_trace(tmp_path)
        report = json.loads(timing.read_text())
        assert len(report["intervals"]) == 1
        interval = report["intervals"][0]
        assert set(interval["map_time_s"]) == {"before", "after"}
        assert set(interval["map_time_s"]["before"]) == {"latitude", "longitude"}
        assert set(interval["intersection_time_s"]["serial"]) == {"latitude", "longitude"}

    def test_deterministic_contacts(self, tmp_path):
        _, contacts_a, _ = self.run_trace(tmp_path)
        body_a = contacts_a.read_text()
        contacts_a.unlink()
        _, contacts_b, _ = self.run_trace(tmp_path)
        assert body_a == contacts_b.read_text()

    def test_log_out_checkpoint(self, tmp_path):
        spec = write_spec(tmp_path)
        gen_dir = tmp_path / "snaps"
        main(["generate", "--spec", str(spec), "--out-dir", str(gen_dir)])
        log_path = tmp_path / "log.csv"
        main(
            [
                "trace",
                str(gen_dir / "snapshot_0000.csv"),
                str(gen_dir / "snapshot_0001.csv"),
                "--out",
                str(tmp_path / "c.csv"),
                "--log-out",
                str(log_path),
            ]
        )
        log = ContactLog.load(log_path)
        assert 0 in log.users() and 1 in log.users()

    def test_gap_skipped(self, tmp_path, caplog):
        spec = write_spec(tmp_path, {**BOX_SPEC, "snapshot_count": 4})
        gen_dir = tmp_path / "snaps"
        main(["generate", "--spec", str(spec), "--out-dir", str(gen_dir)])
        (gen_dir / "snapshot_0002.csv").unlink()
        contacts = tmp_path / "contacts.csv"
        code = main(
            [
                "trace",
                str(gen_dir / "snapshot_0000.csv"),
                str(gen_dir / "snapshot_0001.csv"),
                str(gen_dir / "snapshot_0003.csv"),
                "--out",
                str(contacts),
            ]
        )
        assert code == EXIT_OK
        intervals = {line.split(",")[2] for line in contacts.read_text().splitlines()[2:]}
        assert intervals <= {"0"}


class TestBench:
    def test_rows_and_agreement(self, tmp_path):
        config = RunConfig(lat_min=22.0, lat_max=22.1, lon_min=77.0, lon_max=77.1)
        rows = bench_pipeline(config, [300, 600], baseline_max=500, reps=1, warmup=0)
        assert rows[0]["pairs_equal"] is True
        assert rows[0]["naive_skipped"] is False
        assert rows[1]["naive_skipped"] is True
        assert rows[1]["naive_s"] is None

    def test_cli_output_file(self, tmp_path):
        out = tmp_path / "bench.json"
        code = main(
            ["bench", "--sizes", "200", "--baseline-max", "500", "--reps", "1", "--out", str(out)]
        )
        assert code == EXIT_OK
        table = json.loads(out.read_text())
        assert "config_hash" in table
        assert table["rows"][0]["n"] == 200


class TestHotspotCommand:
    def make_inputs(self, tmp_path):
        reference, batch, registry, log = fig_hot_fixture()
        snap = tmp_path / "snap.csv"
        write_snapshot_csv(snap, batch, {"snapshot": 0})
        log_path = tmp_path / "log.csv"
        log.save(log_path)
        reg_path = tmp_path / "registry.csv"
        registry.save(reg_path)
        return reference, snap, log_path, reg_path

    def run_hotspot(self, tmp_path, threshold):
        reference, snap, log_path, reg_path = self.make_inputs(tmp_path)
        report = tmp_path / "report.json"
        geojson = tmp_path / "markers.geojson"
        code = main(
            [
                "hotspot",
                "--snapshot", str(snap),
                "--log", str(log_path),
                "--registry", str(reg_path),
                "--ref-lat", str(reference.latitude),
                "--ref-lon", str(reference.longitude),
                "--radius-km", "10",
                "--threshold", str(threshold),
                "--report", str(report),
                "--geojson", str(geojson),
            ]
        )
        return code, report, geojson

    def test_susceptible_user_six(self, tmp_path):
        code, report, geojson = self.run_hotspot(tmp_path, threshold=4)
        assert code == EXIT_OK
        data = json.loads(report.read_text())
        assert data["susceptibles_in_area"] == [6]
        assert data["positives_in_area"] == [1, 3, 9, 14]
        assert data["is_potential_hotspot"] is True
        assert "config_hash" in data

    def test_threshold_five_not_flagged(self, tmp_path):
        _, report, _ = self.run_hotspot(tmp_path, threshold=5)
        assert json.loads(report.read_text())["is_potential_hotspot"] is False

    def test_geojson_structure(self, tmp_path):
        _, _, geojson = self.run_hotspot(tmp_path, threshold=4)
        doc = json.loads(geojson.read_text())
        assert doc["type"] == "FeatureCollection"
        assert len(doc["features"]) == 20

    def test_bad_reference_exits_nonzero(self, tmp_path, capsys):
        _reference, snap, log_path, reg_path = self.make_inputs(tmp_path)
        code = main(
            [
                "hotspot",
                "--snapshot", str(snap),
                "--log", str(log_path),
                "--registry", str(reg_path),
                "--ref-lat", "55.0",
                "--ref-lon", "77.0",
                "--report", str(tmp_path / "r.json"),
                "--geojson", str(tmp_path / "g.json"),
            ]
        )
        assert code == 1
        assert "error" in capsys.readouterr().err


class TestRouteCommand:
    def test_india_defaults(self, tmp_path, capsys):
        hot = tmp_path / "hot.txt"
        hot.write_text("Indore\n")
        code = main(["route", "--hotspots", str(hot), "--source", "Pune", "--dest", "New Delhi"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "baseline: Pune -> Indore -> New Delhi  (1455 km)" in out
        assert "safe:     Pune -> Bhopal -> New Delhi  (1540 km)" in out

    def test_source_equals_dest(self, capsys):
        code = main(["route", "--source", "Pune", "--dest", "Pune"])
        assert code == EXIT_OK
        assert "(0 km)" in capsys.readouterr().out

    def test_no_path_exit_code(self, tmp_path, capsys):
        graph = tmp_path / "g.csv"
        graph.write_text("city_a,city_b,km\nA,H,10\nH,B,10\n")
        hot = tmp_path / "hot.txt"
        hot.write_text("H\n")
        code = main(
            ["route", "--graph", str(graph), "--hotspots", str(hot), "--source", "A", "--dest", "B"]
        )
        assert code == EXIT_NO_PATH
        assert "No Path" in capsys.readouterr().out

    def test_unknown_city_error(self, capsys):
        code = main(["route", "--source", "Pune", "--dest", "Nowhere"])
        assert code == 1
        assert "Nowhere" in capsys.readouterr().err

    def test_hotspot_endpoint_error(self, tmp_path, capsys):
        hot = tmp_path / "hot.txt"
        hot.write_text("Pune\n")
        code = main(["route", "--hotspots", str(hot), "--source", "Pune", "--dest", "Mumbai"])
        assert code == 1


class TestConfigPlumbing:
    def test_d_lat_override_changes_hash_in_output(self, tmp_path):
        spec = write_spec(tmp_path)
        gen_dir = tmp_path / "snaps"
        main(["generate", "--spec", str(spec), "--out-dir", str(gen_dir)])
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        snaps = [str(gen_dir / "snapshot_0000.csv"), str(gen_dir / "snapshot_0001.csv")]
        main(["trace", *snaps, "--out", str(out_a)])
        main(["trace", *snaps, "--out", str(out_b), "--d-lat", "2.0"])
        hash_a = json.loads(out_a.read_text().splitlines()[0])["config_hash"]
        hash_b = json.loads(out_b.read_text().splitlines()[0])["config_hash"]
        assert hash_a != hash_b
