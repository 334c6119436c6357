"""Synthetic street-level scenes with known planted advertisements.

Each frame gets a label raster (billboard class inside planted quads), a
grayscale image carrying each ad's texture warped into its quad, and a GPS
fix on a straight northbound track sampled every 0.5 s. ``truth.json``
records every planted region with its exact pixel count and the ad id the
extractor is expected to assign.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .ingest import write_areas, write_label_raster, write_manifest, write_netpbm, write_predictions
from .model import AdCategory, AreaUnit, GeoImage, LabelRaster
from .rectify import Quad, homography_from_quad, warp

METERS_PER_DEG_LAT = 6_371_000.0 * math.pi / 180.0
TEXTURE_SIZE = 128
TEXTURE_CELLS = 16
TEXTURE_DISCS = 20
BACKGROUND = 96
FRAME_INTERVAL_S = 0.5


@dataclass(frozen=True)
class SynthAd:
    true_id: str
    category: str
    position: tuple  # top-left pixel of the undistorted square
    size_px: int  # approximate area; the square side is round(sqrt(size_px))
    frames: tuple
    lat: float = 0.0  # world position, recorded in truth only
    lon: float = 0.0
    text: str = ""


@dataclass(frozen=True)
class SynthSpec:
    frames: int
    width: int
    height: int
    ads: tuple
    seed: int = 0
    jitter: int = 3
    start_lat: float = 53.4000
    start_lon: float = -2.9800
    spacing_m: float = 3.0
    start_time: str = "2020-01-14T10:00:00Z"
    billboard_class: int = 1
    min_pixels: int = 2000

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["ads"] = tuple(
            SynthAd(**{**a, "position": tuple(a["position"]), "frames": tuple(a["frames"])}) for a in d["ads"]
        )
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class SynthSpecError(ValueError):
    pass


def default_spec(seed: int = 7) -> SynthSpec:
    """12 distinct ads (5 of them seen in 3 consecutive frames) plus 2 undersized decoys."""
    cats = ["food", "alcohol", "gambling", "other"]
    texts = {
        "food": "fresh pizza and burger deals",
        "alcohol": "carlsberg lager on draft",
        "gambling": "bet now with ladbrokes",
        "other": "gym membership open daily",
    }
    slots = [(30, 30), (230, 30), (430, 30), (30, 230), (230, 230), (430, 230)]
    ads = []
    for i in range(5):
        frames = (2 * i, 2 * i + 1, 2 * i + 2)
        cat = cats[i % 4]
        ads.append(SynthAd(f"ad{i:02d}", cat, slots[i % 3], 4200 + 400 * i, frames, text=texts[cat]))
    for i in range(5, 12):
        cat = cats[i % 4]
        frame = i - 5 + (i - 5) // 3
        ads.append(SynthAd(f"ad{i:02d}", cat, slots[3 + (i % 3)], 3000 + 300 * (i - 5), (frame,), text=texts[cat]))
    ads.append(SynthAd("small0", "other", (500, 380 - 60), 1980, (3,), text=texts["other"]))
    ads.append(SynthAd("small1", "food", (500, 380 - 60), 1200, (8,), text=texts["food"]))
    return SynthSpec(frames=12, width=640, height=440, ads=tuple(ads), seed=seed)


def _texture(rng: np.random.Generator) -> np.ndarray:
    # random checkerboard of gray cells overlaid with random discs
    cells = rng.integers(20, 236, size=(TEXTURE_CELLS, TEXTURE_CELLS)).astype(float)
    k = TEXTURE_SIZE // TEXTURE_CELLS
    tex = np.kron(cells, np.ones((k, k)))
    yy, xx = np.mgrid[0:TEXTURE_SIZE, 0:TEXTURE_SIZE]
    for _ in range(TEXTURE_DISCS):
        cx, cy = rng.uniform(0, TEXTURE_SIZE, size=2)
        r = rng.uniform(TEXTURE_SIZE / 40, TEXTURE_SIZE / 12)
        tex[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = rng.integers(0, 256)
    return tex


def _rasterize_quad(quad, width, height) -> np.ndarray:
    # lattice points inside or on a convex CCW quad with integer corners
    ys, xs = np.mgrid[0:height, 0:width]
    inside = np.ones((height, width), dtype=bool)
    for i in range(4):
        (ax, ay), (bx, by) = quad[i], quad[(i + 1) % 4]
        inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
    return inside


def _jittered_quad(ad: SynthAd, rng, jitter: int):
    side = int(round(math.sqrt(ad.size_px)))
    x, y = ad.position
    base = [(x, y), (x + side - 1, y), (x + side - 1, y + side - 1), (x, y + side - 1)]
    for _ in range(100):
        quad = [(px + int(rng.integers(-jitter, jitter + 1)), py + int(rng.integers(-jitter, jitter + 1))) for px, py in base]
        try:
            Quad(tuple(quad))
            return quad
        except ValueError:
            continue
    return base


def _frame_position(spec: SynthSpec, i: int) -> tuple:
    return spec.start_lat + i * spec.spacing_m / METERS_PER_DEG_LAT, spec.start_lon


def generate_scene(spec: SynthSpec, out_dir) -> dict:
    """Write frames, manifest.jsonl, truth.json (and helper label files) under ``out_dir``."""
    out = Path(out_dir)
    (out / "rasters").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    textures = {}
    for ad in spec.ads:
        if ad.true_id in textures:
            raise SynthSpecError(f"duplicate true_id {ad.true_id}")
        AdCategory.parse(ad.category)
        textures[ad.true_id] = _texture(rng)
        for f in ad.frames:
            if not 0 <= f < spec.frames:
                raise SynthSpecError(f"{ad.true_id}: frame {f} outside 0..{spec.frames - 1}")

    t0 = datetime.fromisoformat(spec.start_time.replace("Z", "+00:00")).astimezone(timezone.utc)
    images = []
    regions = []
    for f in range(spec.frames):
        fid = f"frame_{f:04d}"
        labels = np.zeros((spec.height, spec.width), dtype=np.uint8)
        gray = np.full((spec.height, spec.width), float(BACKGROUND))
        occupied = np.zeros((spec.height, spec.width), dtype=bool)
        planted = []
        for ad in spec.ads:
            if f not in ad.frames:
                continue
            quad = _jittered_quad(ad, rng, spec.jitter if len(ad.frames) > 1 else 0)
            mask = _rasterize_quad(quad, spec.width, spec.height)
            count = int(mask.sum())
            xs = [p[0] for p in quad]
            ys = [p[1] for p in quad]
            if min(xs) < 0 or min(ys) < 0 or max(xs) >= spec.width or max(ys) >= spec.height:
                raise SynthSpecError(f"{ad.true_id}: quad leaves frame {fid}")
            # dilate by one pixel so 8-connected neighbours count as overlap
            grown = mask.copy()
            grown[1:, :] |= mask[:-1, :]
            grown[:-1, :] |= mask[1:, :]
            grown[:, 1:] |= grown[:, :-1].copy()
            grown[:, :-1] |= grown[:, 1:].copy()
            if np.any(grown & occupied):
                raise SynthSpecError(f"{ad.true_id} overlaps another planted ad in {fid}")
            occupied |= mask
            labels[mask] = spec.billboard_class
            to_tex = homography_from_quad(Quad.from_points(quad), TEXTURE_SIZE - 1, TEXTURE_SIZE - 1)
            planted_tex = warp(textures[ad.true_id], np.linalg.inv(to_tex), spec.width, spec.height)
            gray[mask] = planted_tex[mask]
            planted.append(
                {
                    "frame": fid,
                    "true_id": ad.true_id,
                    "category": AdCategory.parse(ad.category).render(),
                    "pixel_count": count,
                    "quad": [list(p) for p in quad],
                    "bbox": [min(xs), min(ys), max(xs), max(ys)],
                }
            )
        # expected extractor ids: survivors ordered by bbox min y, then min x
        kept = sorted((r for r in planted if r["pixel_count"] >= spec.min_pixels), key=lambda r: (r["bbox"][1], r["bbox"][0]))
        for k, r in enumerate(kept):
            r["ad_id"] = f"{fid}_{k}"
        for r in planted:
            r.setdefault("ad_id", None)
        regions.extend(planted)
        write_label_raster(out / "rasters" / f"{fid}.pgm", LabelRaster(labels))
        write_netpbm(out / "images" / f"{fid}.pgm", np.clip(np.rint(gray), 0, 255).astype(np.uint8))
        lat, lon = _frame_position(spec, f)
        images.append(
            GeoImage(
                id=fid,
                lat=round(lat, 9),
                lon=lon,
                captured_at=t0 + timedelta(seconds=FRAME_INTERVAL_S * f),
                width=spec.width,
                height=spec.height,
                raster_ref=str(out / "rasters" / f"{fid}.pgm"),
                image_ref=str(out / "images" / f"{fid}.pgm"),
            )
        )
    write_manifest(out / "manifest.jsonl", images)

    truth = {
        "spec": spec.to_dict(),
        "distinct_ads": sorted({r["true_id"] for r in regions if r["ad_id"]}),
        "regions": regions,
    }
    with open(out / "truth.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")

    # helper inputs for the labeling and join stages
    extracted = [r for r in regions if r["ad_id"]]
    write_predictions(out / "predictions.csv", {r["ad_id"]: AdCategory.parse(r["category"]) for r in extracted})
    texts = {ad.true_id: ad.text for ad in spec.ads}
    with open(out / "texts.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("ad_id,text\n")
        for r in sorted(extracted, key=lambda r: r["ad_id"]):
            fh.write(f"{r['ad_id']},{texts[r['true_id']]}\n")
    write_areas(out / "areas.geojson", track_areas(spec))
    return truth


def track_areas(spec: SynthSpec) -> list[AreaUnit]:
    """Four strips across the track, cycling through deciles and OAC groups."""
    lat0, lon0 = spec.start_lat, spec.start_lon
    lat1 = _frame_position(spec, spec.frames)[0]
    step = (lat1 - lat0) / 4
    half = spec.spacing_m / METERS_PER_DEG_LAT / 2  # keep frames off the strip edges
    pad = 0.001
    groups = [("2a", 1), ("4b", 3), ("7c", 6), ("8b", 9)]
    areas = []
    for k, (grp, dec) in enumerate(groups):
        a = lat0 - pad if k == 0 else lat0 + k * step - half
        b = lat1 + pad if k == 3 else lat0 + (k + 1) * step - half
        a, b = round(a, 9), round(b, 9)
        ring = ((lon0 - pad, a), (lon0 + pad, a), (lon0 + pad, b), (lon0 - pad, b), (lon0 - pad, a))
        areas.append(AreaUnit(f"S{k:02d}", ((ring,),), dec, int(grp[0]), grp))
    return areas


def load_spec(path) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        return SynthSpec.from_dict(json.load(fh))
