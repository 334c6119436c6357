import hashlib
import json
from dataclasses import replace
from pathlib import Path

import pytest

from adscan.extract import extract_ads
from adscan.geostat import join_images_to_areas
from adscan.ingest import load_areas, load_label_raster, load_manifest
from adscan.synth import SynthAd, SynthSpec, SynthSpecError, default_spec, generate_scene, load_spec


def tree_digest(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_seed_is_byte_identical(tmp_path):
    generate_scene(default_spec(3), tmp_path / "a")
    generate_scene(default_spec(3), tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_different_seed_changes_images(tmp_path):
    generate_scene(default_spec(3), tmp_path / "a")
    generate_scene(default_spec(4), tmp_path / "b")
    a, b = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
    assert a["images/frame_0000.pgm"] != b["images/frame_0000.pgm"]


def test_truth_matches_extraction(scene):
    out, truth = scene
    images = load_manifest(out / "manifest.jsonl")
    by_id = {}
    for img in images:
        for ad in extract_ads(load_label_raster(img.raster_ref), img):
            by_id[ad.ad_id] = ad
    expected = {r["ad_id"]: r for r in truth["regions"] if r["ad_id"]}
    assert set(by_id) == set(expected)
    for ad_id, r in expected.items():
        assert by_id[ad_id].filled_pixels == r["pixel_count"]
    dropped = [r for r in truth["regions"] if r["ad_id"] is None]
    assert {r["true_id"] for r in dropped} == {"small0", "small1"}
    assert all(r["pixel_count"] < 2000 for r in dropped)


def test_default_scene_shape(scene):
    _, truth = scene
    assert len(truth["distinct_ads"]) == 12
    seen = {}
    for r in truth["regions"]:
        if r["ad_id"]:
            seen.setdefault(r["true_id"], []).append(r["frame"])
    assert sorted(len(v) for v in seen.values()) == [1] * 7 + [3] * 5


def test_frames_are_half_a_second_and_three_meters_apart(scene):
    from adscan.dedup import haversine

    out, _ = scene
    imgs = load_manifest(out / "manifest.jsonl")
    for a, b in zip(imgs, imgs[1:]):
        assert (b.captured_at - a.captured_at).total_seconds() == 0.5
        assert haversine((a.lat, a.lon), (b.lat, b.lon)) == pytest.approx(3.0, abs=1e-3)


def test_every_frame_falls_in_exactly_one_area(scene, caplog):
    out, _ = scene
    got = join_images_to_areas(load_manifest(out / "manifest.jsonl"), load_areas(out / "areas.geojson"))
    assert None not in got.values()
    assert "overlapping" not in caplog.text
    assert len(set(got.values())) == 4


def test_spec_round_trip(tmp_path):
    spec = default_spec(5)
    (tmp_path / "s.json").write_text(json.dumps(spec.to_dict()))
    assert load_spec(tmp_path / "s.json") == spec


def _one(frames=(0,), position=(10, 10), size=2500, true_id="x", category="food"):
    return SynthAd(true_id, category, position, size, frames)


def test_spec_errors(tmp_path):
    base = SynthSpec(frames=2, width=200, height=200, ads=(_one(),))
    with pytest.raises(SynthSpecError, match="frame 5"):
        generate_scene(replace(base, ads=(_one(frames=(5,)),)), tmp_path / "a")
    with pytest.raises(SynthSpecError, match="leaves frame"):
        generate_scene(replace(base, ads=(_one(position=(180, 10)),)), tmp_path / "b")
    with pytest.raises(SynthSpecError, match="overlaps"):
        generate_scene(replace(base, ads=(_one(), _one(true_id="y", position=(60, 60)))), tmp_path / "c")
    with pytest.raises(SynthSpecError, match="duplicate"):
        generate_scene(replace(base, ads=(_one(), _one(position=(100, 100)))), tmp_path / "d")
    with pytest.raises(ValueError, match="unknown category"):
        generate_scene(replace(base, ads=(_one(category="tobacco"),)), tmp_path / "e")


def test_diagonal_neighbours_count_as_overlap(tmp_path):
    # squares of side 50 at (10,10) and (60,60) touch corner to corner
    spec = SynthSpec(frames=1, width=200, height=200, ads=(_one(), _one(true_id="y", position=(60, 60))), jitter=0)
    with pytest.raises(SynthSpecError, match="overlaps"):
        generate_scene(spec, tmp_path)
    ok = replace(spec, ads=(_one(), _one(true_id="y", position=(61, 61))))
    generate_scene(ok, tmp_path / "ok")
