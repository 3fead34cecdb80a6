import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from cmrfusion.pipeline import run_stage, segment_slice
from cmrfusion.server import create_app


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    from tests.conftest import make_config

    out = tmp_path_factory.mktemp("srv")
    cfg = make_config(out, phantom={"nz": 2, "n_exams": 1})
    for stage in ("phantom", "sync", "register", "segment", "sectorize", "mie"):
        run_stage(stage, cfg)
    app = create_app(cfg)
    return TestClient(app), cfg, out


def test_list_volumes(client):
    c, cfg, out = client
    vols = c.get("/api/volumes").json()
    ids = {v["id"] for v in vols}
    assert {"cine", "avg", "de_0", "de_registered_0"} <= ids
    cine = next(v for v in vols if v["id"] == "cine")
    assert cine["n_phases"] == 10


def test_slice_png_dimensions_and_windowing(client):
    c, cfg, out = client
    r = c.get("/api/volumes/avg/slices/0")
    assert r.status_code == 200
    img = Image.open(io.BytesIO(r.content))
    assert img.size == (96, 96)  # (nx, ny)
    assert img.mode == "L"
    r2 = c.get("/api/volumes/avg/slices/0", params={"window": 50.0, "level": 190.0})
    img2 = np.asarray(Image.open(io.BytesIO(r2.content)))
    img1 = np.asarray(img)
    assert not np.array_equal(img1, img2)  # window/level changes the render


def test_slice_not_found(client):
    c, cfg, out = client
    assert c.get("/api/volumes/avg/slices/99").status_code == 404
    assert c.get("/api/volumes/nope/slices/0").status_code == 404
    assert c.get("/api/volumes/cine/slices/0", params={"phase": 99}).status_code == 404


def test_seeds_roundtrip(client):
    c, cfg, out = client
    seeds = c.get("/api/seeds").json()
    assert len(seeds["slices"]) == 2
    seeds["slices"][0]["p0"] = [46.0, 48.5]
    r = c.put("/api/seeds", json=seeds)
    assert r.status_code == 200
    back = c.get("/api/seeds").json()
    assert back["slices"][0]["p0"] == [46.0, 48.5]
    # restore the original seed for later tests
    seeds["slices"][0]["p0"] = [47.5, 47.5]
    c.put("/api/seeds", json=seeds)


def test_seeds_validation_422(client):
    c, cfg, out = client
    assert c.put("/api/seeds", json={"slices": [{"slice": 0}]}).status_code == 422
    bad = {"slices": [{"slice": 0, "p0": [1, 2], "p1": [3, 4], "lambda": -5}]}
    assert c.put("/api/seeds", json=bad).status_code == 422


def test_post_segment_matches_cli_output(client):
    c, cfg, out = client
    r = c.post("/api/segment/0", json={"lambda": 700.0, "include_preview": False})
    assert r.status_code == 200, r.text
    api_result = r.json()
    cli_result = segment_slice(cfg, 0, {"lambda": 700.0})
    for key in ("endo_avg", "epi_avg", "endo_ed", "lambda"):
        assert api_result[key] == cli_result[key]
    # persisted contour file carries the identical polygon
    doc = json.loads((out / "contours.json").read_text())
    row = next(rw for rw in doc["slices"] if rw["slice"] == 0)
    assert row["endo_avg"] == api_result["endo_avg"]


def test_post_segment_preview_and_errors(client):
    c, cfg, out = client
    r = c.post("/api/segment/0", json={})
    assert r.status_code == 200
    assert "preview_png_base64" in r.json()
    r = c.post("/api/segment/57", json={})
    assert r.status_code in (404, 422)


def test_get_contours_and_scores(client):
    c, cfg, out = client
    contours = c.get("/api/contours").json()
    assert {row["slice"] for row in contours["slices"]} == {0, 1}
    scores = c.get("/api/scores").json()
    assert len(scores["slices"]) == 2
    assert len(scores["slices"][0]["sub_segments"]) == 18
