"""Acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line; the lines are printed at the end of
the pytest run (see ``conftest.pytest_terminal_summary``) and inline with
``pytest -s``. Run this file directly with ``python3 tests/test_acceptance.py``
for the summary alone.
"""

import csv
import json
import math
import random
import time
from datetime import datetime, timezone

import numpy as np
import pytest

from adscan.cli import main
from adscan.dedup import DedupGraph, compute_descriptors, deduplicate, select_representatives
from adscan.extract import DegenerateHull, ExtractConfig, connected_components, convex_hull, extract_ads
from adscan.geostat import (
    ChiGroup,
    chi2_p_value,
    chi_squared,
    iou,
    point_in_polygon,
)
from adscan.ingest import (
    load_areas,
    load_label_raster,
    load_manifest,
    read_netpbm,
    write_areas,
    write_label_raster,
    write_manifest,
)
from adscan.label import f1_score
from adscan.model import CATEGORIES, AdCategory, AdInstance, AreaUnit, GeoImage, LabelRaster, stars_for
from adscan.rectify import Quad, apply_homography, homography_from_quad, rectify_ad
from adscan.report import emit_geojson, exposure_header, parse_ads_geojson
from adscan.synth import default_spec, generate_scene

from conftest import make_image, raster_with_blocks
from oracles import (
    brute_representative,
    flood_fill_components,
    halfplane_hull_vertices,
    iou_by_count,
    winding_inside,
)
from test_geostat import DOF, PUBLISHED_CHI2, TEST_POLYGONS
from test_rectify import random_quad
from test_synth import tree_digest

RESULTS: dict = {}


def record(n: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {name}" + (f" ({detail})" if detail else "")
    RESULTS[n] = line
    print(line)
    assert ok, line


def test_01_geometry_oracles():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    cc_bad = 0
    for _ in range(1000):
        a = (rng.random((64, 64)) < rng.uniform(0.2, 0.6)).astype(np.uint8)
        got = {c.pixels for c in connected_components(LabelRaster(a), 1)}
        cc_bad += got != set(flood_fill_components(a == 1))

    hull_bad = 0
    for _ in range(1000):
        n = int(rng.integers(3, 21))
        span = int(rng.integers(3, 40))  # small spans give many collinear and repeated points
        pts = [tuple(p) for p in rng.integers(0, span, (n, 2)).tolist()]
        oracle = halfplane_hull_vertices(pts)
        try:
            got = set(convex_hull(pts))
        except DegenerateHull:
            # fewer than three non-collinear points; the oracle keeps at most two
            hull_bad += len(oracle) > 2
            continue
        hull_bad += got != oracle

    pip_bad = 0
    for k, poly in enumerate(TEST_POLYGONS):
        pts = rng.uniform(-1, 11, (10_000, 2))
        pts[::4] = np.round(pts[::4] * 2) / 2  # a quarter on the half-unit grid, hitting edges and vertices
        for x, y in pts.tolist():
            pip_bad += point_in_polygon(y, x, poly) != winding_inside(x, y, poly)
    elapsed = time.perf_counter() - t0
    record(
        1,
        "geometry oracles",
        cc_bad == hull_bad == pip_bad == 0 and elapsed < 30,
        f"components {cc_bad}/1000, hulls {hull_bad}/1000, pip {pip_bad}/50000 mismatches, {elapsed:.1f} s",
    )


def test_02_threshold_fidelity():
    full = raster_with_blocks(200, 100, [(10, 10, 40, 50)])
    short = np.array(full.classes)
    short[10, 10] = 0  # 1,999 pixels, and the hull fill drops the corner too
    kept = extract_ads(full, make_image(width=200), ExtractConfig())
    dropped = extract_ads(LabelRaster(short), make_image(width=200), ExtractConfig())
    ok = [a.filled_pixels for a in kept] == [2000] and dropped == []
    record(2, "threshold 1999 dropped / 2000 kept", ok, f"kept {[a.filled_pixels for a in kept]}, dropped-case {len(dropped)} ads")


def _dedup_inputs(scene_dir):
    ads, descs = [], {}
    for img in load_manifest(scene_dir / "manifest.jsonl"):
        pixels = read_netpbm(img.image_ref)
        for ad in extract_ads(load_label_raster(img.raster_ref), img):
            ads.append(ad)
            descs[ad.ad_id] = compute_descriptors(rectify_ad(pixels, ad))
    return ads, descs


def _ids(survivors):
    return [a.ad_id for a in survivors]


def test_03_dedup_end_to_end(scene):
    scene_dir, truth = scene
    t0 = time.perf_counter()
    ads, descs = _dedup_inputs(scene_dir)
    survivors, discarded, _ = deduplicate(ads, descs)
    elapsed = time.perf_counter() - t0
    true_of = {r["ad_id"]: r["true_id"] for r in truth["regions"] if r["ad_id"]}
    distinct = sorted(true_of[a.ad_id] for a in survivors) == truth["distinct_ads"]

    again, again_discarded, _ = deduplicate(survivors, {a.ad_id: descs[a.ad_id] for a in survivors})
    idempotent = _ids(again) == _ids(survivors) and again_discarded == {}

    rng = random.Random(3)
    invariant = True
    for _ in range(5):
        perm = ads[:]
        rng.shuffle(perm)
        shuffled_descs = {a.ad_id: descs[a.ad_id] for a in perm}
        s, d, _ = deduplicate(perm, shuffled_descs)
        invariant &= _ids(s) == _ids(survivors) and d == discarded
    record(
        3,
        "dedup end to end",
        len(survivors) == 12 and distinct and idempotent and invariant and elapsed < 20,
        f"{len(ads)} ads -> {len(survivors)} survivors, one per planted ad: {distinct}, "
        f"idempotent: {idempotent}, order-invariant: {invariant}, {elapsed:.1f} s",
    )


def test_04_representative_rule():
    rng = random.Random(4)
    m_per_deg = 6_371_000.0 * math.pi / 180
    hull = ((0, 0), (9, 0), (9, 9), (0, 9))
    bad = 0
    for trial in range(200):
        if trial % 10 == 0:  # mirror pairs tie exactly
            pts = [(53.4, -2.98 + 1e-5), (53.4, -2.98 - 1e-5)]
        else:
            pts = [(53.4 + rng.uniform(0, 20) / m_per_deg, -2.98 + rng.uniform(0, 20) / m_per_deg)
                   for _ in range(rng.randint(1, 10))]
        ids = rng.sample([f"ad{k:03d}" for k in range(1000)], len(pts))
        ads = [AdInstance(i, "img", hull, 100, 100, (0, 0, 9, 9), la, lo) for i, (la, lo) in zip(ids, pts)]
        survivors, _ = select_representatives(DedupGraph(nodes=sorted(ids), components=[sorted(ids)]), ads)
        bad += _ids(survivors) != [brute_representative([(a.ad_id, a.lat, a.lon) for a in ads])]
    record(4, "representative rule", bad == 0, f"{bad}/200 mismatches")


def test_05_homography():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        src = random_quad(rng)
        w, h = (int(v) for v in rng.integers(1, 513, 2))
        H = homography_from_quad(src, w, h)
        dst = np.array([(0, 0), (w, 0), (w, h), (0, h)], dtype=float)
        worst = max(worst, float(np.abs(apply_homography(H, src.vertices) - dst).max()))
    hand = [
        (((0, 0), (1, 0), (1, 1), (0, 1)), np.eye(3)),
        (((5, 7), (6, 7), (6, 8), (5, 8)), np.array([[1, 0, -5], [0, 1, -7], [0, 0, 1]], float)),
        (((0, 0), (2, 0), (2, 1), (0, 1)), np.diag([0.5, 1.0, 1.0])),
    ]
    hand_err = max(float(np.abs(homography_from_quad(Quad(q), 1, 1) - H).max()) for q, H in hand)
    record(
        5,
        "homography residuals",
        worst < 1e-9 and hand_err < 1e-9,
        f"worst corner residual {worst:.2e}, worst hand-example entry error {hand_err:.2e}",
    )


def test_06_chi_square_numerics():
    xs = (0.1, 1, 5, 20, 80)
    err = max(
        max(abs(chi2_p_value(x, 2) - math.exp(-x / 2)), abs(chi2_p_value(x, 1) - math.erfc(math.sqrt(x / 2))))
        for x in xs
    )
    stat = chi_squared([ChiGroup("a", 100, 30), ChiGroup("b", 100, 10)]).statistic
    stars = {k: stars_for(chi2_p_value(s, DOF[k[1]])) for k, (s, _) in PUBLISHED_CHI2.items()}
    pattern = all(stars[k] == want for k, (_, want) in PUBLISHED_CHI2.items())
    record(
        6,
        "chi-squared numerics",
        err < 1e-8 and stat == 10.0 and pattern,
        f"closed-form error {err:.1e}, statistic {stat!r}, published star pattern: {pattern}",
    )


def test_07_published_f1():
    rows = {"food": (0.76, 0.619, 0.68), "other": (0.662, 0.787, 0.718)}
    got = {k: f1_score(p, r) for k, (p, r, _) in rows.items()}
    ok = all(abs(got[k] - rows[k][2]) <= 0.005 for k in rows)
    record(7, "published F1 consistency", ok, ", ".join(f"{k} {got[k]:.4f} vs {rows[k][2]}" for k in rows))


TOTALS = {AdCategory.FOOD: 873, AdCategory.ALCOHOL: 102, AdCategory.GAMBLING: 79, AdCategory.OTHER: 6247}


def _exposure_fixture(d):
    """Ten decile strips, 40 to 400 images each, and ads spread over them with the target totals."""
    rng = random.Random(8)
    areas, images = [], []
    ts = datetime(2020, 1, 14, 10, tzinfo=timezone.utc)
    for k in range(10):
        lat0 = 53.0 + 0.01 * k
        ring = ((-3.0, lat0), (-2.9, lat0), (-2.9, lat0 + 0.01), (-3.0, lat0 + 0.01), (-3.0, lat0))
        grp = ["1a", "2b", "3c", "4a", "5b", "6a", "7b", "8c", "2a", "4b"][k]
        areas.append(AreaUnit(f"L{k:02d}", ((ring,),), k + 1, int(grp[0]), grp))
        for j in range(rng.randint(40, 400)):
            lat = round(lat0 + rng.uniform(0.001, 0.009), 7)
            lon = round(rng.uniform(-2.999, -2.901), 7)
            images.append(GeoImage(f"i{k}_{j:03d}", lat, lon, ts, 64, 64, str(d / "r.pgm"), None))
    hull = ((0, 0), (9, 0), (9, 9), (0, 9))
    ads = []
    for cat, n in TOTALS.items():
        for j in range(n):
            img = rng.choice(images)
            ads.append(AdInstance(f"{cat.value}{j:05d}", img.id, hull, 100, 100, (0, 0, 9, 9), img.lat, img.lon, cat))
    write_areas(d / "areas.geojson", areas)
    write_manifest(d / "manifest.jsonl", images)
    with open(d / "labeled.jsonl", "w", encoding="utf-8") as fh:
        for a in ads:
            fh.write(json.dumps(a.to_dict()) + "\n")
    return images, ads


def test_08_exposure_fixture(tmp_path):
    images, ads = _exposure_fixture(tmp_path)
    out = tmp_path / "run"
    codes = [
        main(["join", "--ads", str(tmp_path / "labeled.jsonl"), "--manifest", str(tmp_path / "manifest.jsonl"),
              "--areas", str(tmp_path / "areas.geojson"), "--out", str(out)]),
        main(["analyze", "--group-by", "decile", "--out", str(out)]),
    ]
    with open(out / "exposure_decile.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body, total = rows[0], rows[1:-1], rows[-1]
    shape = header == exposure_header() and len(body) == 10 and total[0] == "TOTAL" and all(len(r) == len(header) for r in rows)
    col = {name: i for i, name in enumerate(header)}
    grand = {c: int(total[col[f"{c.value}_ads"]]) for c in CATEGORIES}
    grand_ok = grand == TOTALS and int(total[col["image_total"]]) == len(images)

    pct_bad = 0
    for r in body:
        n = int(r[col["image_total"]])
        for c in CATEGORIES:
            imgs, cnt = int(r[col[f"{c.value}_images"]]), int(r[col[f"{c.value}_ads"]])
            pct_bad += r[col[f"{c.value}_image_pct"]] != f"{100.0 * imgs / n:.4f}"
            pct_bad += r[col[f"{c.value}_ad_pct"]] != f"{100.0 * cnt / TOTALS[c]:.4f}"
    record(
        8,
        "exposure fixture",
        codes == [0, 0] and shape and grand_ok and pct_bad == 0,
        f"exit codes {codes}, totals {[grand[c] for c in CATEGORIES]}, {len(body)} groups + TOTAL, "
        f"{pct_bad} percentage mismatches",
    )


def test_09_format_round_trips(tmp_path):
    rng = np.random.default_rng(9)
    pgm_ok = True
    for k in range(200):
        a = rng.integers(0, 256, tuple(rng.integers(1, 40, 2)), dtype=np.uint8)
        f, g = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_label_raster(f, LabelRaster(a))
        back = load_label_raster(f)
        write_label_raster(g, back)
        pgm_ok &= np.array_equal(back.classes, a) and f.read_bytes() == g.read_bytes()

    outer = ((-3.0, 53.0), (-2.9, 53.0), (-2.9, 53.1), (-3.0, 53.1), (-3.0, 53.0))
    hole = ((-2.97, 53.03), (-2.93, 53.03), (-2.93, 53.07), (-2.97, 53.07), (-2.97, 53.03))
    areas = [AreaUnit("A", ((outer, hole),), 1, 8, "8a"), AreaUnit("B", ((outer,), (hole,)), 10, 2, "2d")]
    write_areas(tmp_path / "a.geojson", areas)
    areas_ok = load_areas(tmp_path / "a.geojson") == areas

    hull = ((0, 0), (9, 0), (9, 9), (0, 9))
    ads = [AdInstance(f"a{k}", "img", hull, 100, 100 + k, (0, 0, 9, 9), float(rng.uniform(-89, 89)),
                      float(rng.uniform(-179, 179)), CATEGORIES[k % 4]) for k in range(50)]
    assign = {a.ad_id: (f"L{k}" if k % 3 else None) for k, a in enumerate(ads)}
    emit_geojson(tmp_path / "ads.geojson", ads, assign)
    back = parse_ads_geojson(tmp_path / "ads.geojson")
    ads_ok = back == [
        {"ad_id": a.ad_id, "category": a.category.render(), "area": assign[a.ad_id],
         "filled_pixels": a.filled_pixels, "lat": a.lat, "lon": a.lon}
        for a in ads
    ]

    generate_scene(default_spec(11), tmp_path / "s1")
    generate_scene(default_spec(11), tmp_path / "s2")
    synth_ok = tree_digest(tmp_path / "s1") == tree_digest(tmp_path / "s2")
    record(
        9,
        "format round trips",
        pgm_ok and areas_ok and ads_ok and synth_ok,
        f"PGM {pgm_ok}, areas GeoJSON {areas_ok}, ads GeoJSON {ads_ok}, same-seed synth {synth_ok}",
    )


def test_10_iou_properties():
    rng = np.random.default_rng(10)
    bad = 0
    for _ in range(500):
        shape = tuple(rng.integers(1, 16, 2))
        a = rng.random(shape) < rng.random()
        b = rng.random(shape) < rng.random()
        v = iou(a, b)
        bad += v != iou(b, a) or not 0.0 <= v <= 1.0
        bad += abs(v - iou_by_count(a, b)) > 1e-15
        if a.any() or b.any():
            bad += (v == 1.0) != np.array_equal(a, b)
        if a.any():
            bad += iou(a, a) != 1.0
    full = np.ones((4, 4), bool)
    left = np.zeros((4, 4), bool)
    left[:, :2] = True
    top = np.zeros((3, 3), bool)
    top[0:2] = True
    bottom = np.zeros((3, 3), bool)
    bottom[1:3] = True
    hand = (iou(left, full), iou(top, bottom))
    record(10, "IoU properties", bad == 0 and hand == (0.5, 1 / 3), f"{bad} property violations on 500 pairs, hand cases {hand}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
