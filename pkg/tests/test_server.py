import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from contourtrack.cli import main
from contourtrack.dataio import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from contourtrack.evaluation import SparseLabels
from contourtrack.server import create_app


@pytest.fixture()
def data_root(tmp_path):
    spec = SyntheticSpec(
        image_size=48,
        n_frames=4,
        base_radius=12.0,
        radius_drift=0.4,
        lobe_amps=(1.5,),
        lobe_freqs=(3,),
        lobe_speeds=(0.5,),
        lobe_phases=(0.2,),
    )
    ds, _ = generate_synthetic(spec)
    ds.labels = None
    save_dataset(ds, tmp_path / "blob")
    return tmp_path


@pytest.fixture()
def client(data_root):
    return TestClient(create_app(data_root))


def get_version(client, video="blob", frame=0):
    return client.get(f"/api/videos/{video}/labels/{frame}").json()["version"]


class TestReadEndpoints:
    def test_video_listing(self, client):
        payload = client.get("/api/videos").json()
        assert payload["videos"] == [
            {"name": "blob", "n_frames": 4, "height": 48, "width": 48}
        ]

    def test_single_video_root(self, data_root):
        single = TestClient(create_app(data_root / "blob"))
        names = [v["name"] for v in single.get("/api/videos").json()["videos"]]
        assert names == ["blob"]

    def test_frame_png(self, client, data_root):
        resp = client.get("/api/videos/blob/frames/2")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content == (data_root / "blob" / "frames" / "0002.png").read_bytes()

    def test_not_found_paths(self, client):
        assert client.get("/api/videos/ghost/frames/0").status_code == 404
        assert client.get("/api/videos/blob/frames/99").status_code == 404
        assert client.get("/api/videos/blob/frames/abc").status_code == 404
        assert client.get("/api/videos/blob/labels/99").status_code == 404
        assert client.get("/api/videos/blob/contours/99").status_code == 404

    def test_contours_computed_from_masks(self, client, data_root):
        resp = client.get("/api/videos/blob/contours/1")
        assert resp.status_code == 200
        payload = resp.json()
        assert payload["frame"] == 1
        ds = load_dataset(data_root / "blob")
        np.testing.assert_array_equal(
            np.asarray(payload["points"]), ds.contours()[1].points
        )

    def test_contours_prefer_extracted_files(self, client, data_root):
        assert main(["extract", str(data_root / "blob")]) == 0
        expected = json.loads(
            (data_root / "blob" / "contours" / "0002.json").read_text()
        )
        assert client.get("/api/videos/blob/contours/2").json()["points"] == expected["points"]


class TestLabelFlow:
    def test_put_then_get_roundtrip(self, client, data_root):
        v0 = get_version(client)
        points = [
            {"point_id": 0, "x": 0.123, "y": 0.456},
            {"point_id": 2, "x": 0.75, "y": 0.5},
        ]
        resp = client.put(
            "/api/videos/blob/labels/1", json={"version": v0, "points": points}
        )
        assert resp.status_code == 200
        saved = resp.json()
        assert saved["version"] != v0
        got = client.get("/api/videos/blob/labels/1").json()
        assert got["points"] == points
        assert got["version"] == saved["version"]

        labels = load_dataset(data_root / "blob").labels
        assert labels is not None
        np.testing.assert_array_equal(labels.points[1, 0], [0.123, 0.456])
        np.testing.assert_array_equal(labels.points[1, 2], [0.75, 0.5])
        assert np.isnan(labels.points[1, 1]).all()

    def test_frames_stay_isolated(self, client):
        v = get_version(client)
        r1 = client.put(
            "/api/videos/blob/labels/1",
            json={"version": v, "points": [{"point_id": 0, "x": 0.2, "y": 0.2}]},
        )
        r2 = client.put(
            "/api/videos/blob/labels/2",
            json={
                "version": r1.json()["version"],
                "points": [{"point_id": 0, "x": 0.8, "y": 0.8}],
            },
        )
        assert r2.status_code == 200
        one = client.get("/api/videos/blob/labels/1").json()["points"]
        two = client.get("/api/videos/blob/labels/2").json()["points"]
        assert one[0]["x"] == 0.2
        assert two[0]["x"] == 0.8

    def test_stale_version_conflicts_without_data_loss(self, client):
        v0 = get_version(client)
        first = client.put(
            "/api/videos/blob/labels/1",
            json={"version": v0, "points": [{"point_id": 0, "x": 0.3, "y": 0.3}]},
        )
        assert first.status_code == 200
        stale = client.put(
            "/api/videos/blob/labels/1",
            json={"version": v0, "points": [{"point_id": 0, "x": 0.9, "y": 0.9}]},
        )
        assert stale.status_code == 409
        conflict = stale.json()
        assert conflict["error"] == "version_conflict"
        assert conflict["version"] == first.json()["version"]
        assert conflict["points"] == [{"point_id": 0, "x": 0.3, "y": 0.3}]
        kept = client.get("/api/videos/blob/labels/1").json()
        assert kept["points"][0]["x"] == 0.3

    def test_clear_persists_empty_list(self, client, data_root):
        v0 = get_version(client)
        r1 = client.put(
            "/api/videos/blob/labels/1",
            json={"version": v0, "points": [{"point_id": 1, "x": 0.4, "y": 0.6}]},
        )
        r2 = client.put(
            "/api/videos/blob/labels/1",
            json={"version": r1.json()["version"], "points": []},
        )
        assert r2.status_code == 200
        assert client.get("/api/videos/blob/labels/1").json()["points"] == []
        parsed = SparseLabels.from_csv(data_root / "blob" / "labels.csv", n_frames=4)
        assert not parsed.present().any()

    def test_malformed_payloads_rejected(self, client):
        url = "/api/videos/blob/labels/0"
        v = get_version(client)
        bad_bodies = [
            "not json at all",
            json.dumps([1, 2, 3]),
            json.dumps({"points": []}),
            json.dumps({"version": v, "points": [{"x": 0.5, "y": 0.5}]}),
            json.dumps({"version": v, "points": [{"point_id": 9, "x": 0.5, "y": 0.5}]}),
            json.dumps({"version": v, "points": [{"point_id": 0, "x": 1.5, "y": 0.5}]}),
            json.dumps(
                {
                    "version": v,
                    "points": [
                        {"point_id": 0, "x": 0.5, "y": 0.5},
                        {"point_id": 0, "x": 0.6, "y": 0.6},
                    ],
                }
            ),
            json.dumps({"version": v, "points": [{"point_id": 0.5, "x": 0.5, "y": 0.5}]}),
        ]
        for body in bad_bodies:
            resp = client.put(url, content=body)
            assert resp.status_code == 400, body
        assert client.get(url).json()["points"] == []

    def test_serve_never_mutates_frames_or_masks(self, client, data_root):
        frame_path = data_root / "blob" / "frames" / "0001.png"
        mask_path = data_root / "blob" / "masks" / "0001.png"
        frame_before = frame_path.read_bytes()
        mask_before = mask_path.read_bytes()
        v = get_version(client)
        client.put(
            "/api/videos/blob/labels/1",
            json={"version": v, "points": [{"point_id": 0, "x": 0.5, "y": 0.5}]},
        )
        assert frame_path.read_bytes() == frame_before
        assert mask_path.read_bytes() == mask_before
        assert not list((data_root / "blob").glob(".labels-*.tmp"))
