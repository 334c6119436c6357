"""Per-advertisement extraction from billboard-class label rasters.

Each 8-connected group of billboard pixels is wrapped in its convex hull, the
hull is filled back onto the pixel grid, and hulls covering fewer than
``min_pixels`` pixels are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .model import MIN_AD_PIXELS, AdInstance, GeoImage, LabelRaster

log = logging.getLogger(__name__)

_EIGHT = np.ones((3, 3), dtype=bool)


class DegenerateHull(ValueError):
    """Fewer than three distinct points, or all points collinear."""


@dataclass(frozen=True)
class PixelComponent:
    pixels: frozenset
    bbox: tuple[int, int, int, int]

    @property
    def size(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class ExtractConfig:
    billboard_class: int = 1
    min_pixels: int = MIN_AD_PIXELS

    def __post_init__(self):
        if self.min_pixels < 1:
            raise ValueError("min_pixels must be >= 1")
        if not 0 <= self.billboard_class <= 255:
            raise ValueError("billboard_class must lie in 0..255")


def connected_components(raster: LabelRaster, class_id: int) -> list[PixelComponent]:
    """Maximal 8-connected components of pixels equal to ``class_id``.

    Ordered by bbox min y, then bbox min x.
    """
    mask = raster.classes == class_id
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    comps = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = np.nonzero(labels[sl] == idx)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        comps.append(
            PixelComponent(
                pixels=frozenset(zip(xs.tolist(), ys.tolist())),
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
            )
        )
    comps.sort(key=lambda c: (c.bbox[1], c.bbox[0]))
    return comps


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> list[tuple]:
    """Monotone-chain hull; counter-clockwise (positive shoelace area), no collinear vertices.

    Starts at the lexicographically smallest point.
    """
    pts = sorted(set(map(tuple, points)))
    if len(pts) < 3:
        raise DegenerateHull(f"{len(pts)} distinct points")
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegenerateHull("all points collinear")
    return hull


def _hull_of_component(comp: PixelComponent) -> list[tuple]:
    # Only boundary pixels of each row can be hull vertices.
    rows: dict[int, list[int]] = {}
    for x, y in comp.pixels:
        r = rows.get(y)
        if r is None:
            rows[y] = [x, x]
        else:
            if x < r[0]:
                r[0] = x
            if x > r[1]:
                r[1] = x
    cand = [(lo, y) for y, (lo, hi) in rows.items()] + [(hi, y) for y, (lo, hi) in rows.items()]
    return convex_hull(cand)


def fill_polygon(hull, width: int, height: int) -> np.ndarray:
    """Boolean ``(height, width)`` mask of pixel centers inside or on a convex CCW hull.

    Pixel ``(x, y)`` has its center at integer coordinates ``(x, y)``.
    """
    mask = np.zeros((height, width), dtype=bool)
    hx = [p[0] for p in hull]
    hy = [p[1] for p in hull]
    x0 = max(int(np.floor(min(hx))), 0)
    x1 = min(int(np.ceil(max(hx))), width - 1)
    y0 = max(int(np.floor(min(hy))), 0)
    y1 = min(int(np.ceil(max(hy))), height - 1)
    if x0 > x1 or y0 > y1:
        return mask
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    inside = np.ones(xs.shape, dtype=bool)
    n = len(hull)
    for i in range(n):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
    mask[y0 : y1 + 1, x0 : x1 + 1] = inside
    return mask


def extract_ads(raster: LabelRaster, image: GeoImage, cfg: ExtractConfig = ExtractConfig()):
    """One :class:`AdInstance` per billboard component whose filled hull has >= ``min_pixels``."""
    if (raster.width, raster.height) != (image.width, image.height):
        raise ValueError(
            f"{image.id}: raster is {raster.width}x{raster.height}, "
            f"manifest says {image.width}x{image.height}"
        )
    ads = []
    for comp in connected_components(raster, cfg.billboard_class):
        try:
            hull = _hull_of_component(comp)
        except DegenerateHull:
            log.warning("%s: dropping degenerate component at %s", image.id, comp.bbox)
            continue
        filled = int(fill_polygon(hull, raster.width, raster.height).sum())
        if filled < cfg.min_pixels:
            continue
        ads.append(
            AdInstance(
                ad_id=f"{image.id}_{len(ads)}",
                source_image=image.id,
                hull=tuple(hull),
                component_pixels=comp.size,
                filled_pixels=filled,
                bbox=comp.bbox,
                lat=image.lat,
                lon=image.lon,
            )
        )
    return ads


def ad_mask(ad: AdInstance, width: int, height: int) -> np.ndarray:
    return fill_polygon(ad.hull, width, height)
