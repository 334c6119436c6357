"""Area join, exposure tables, and the statistics reported over them.

Points use GeoJSON axis order internally: ``x = lon``, ``y = lat``.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .model import (
    CATEGORIES,
    AdCategory,
    ChiSquareResult,
    ExposureRow,
    ExposureTable,
    group_of,
    stars_for,
)

log = logging.getLogger(__name__)


# --- point in polygon -------------------------------------------------------


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    if (bx - ax) * (py - ay) - (by - ay) * (px - ax) != 0:
        return False
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def point_in_ring(x: float, y: float, ring) -> bool:
    """Even-odd crossing test; points on an edge count as inside."""
    inside = False
    n = len(ring) - 1  # closed ring: last vertex repeats the first
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[i + 1]
        if _on_segment(x, y, ax, ay, bx, by):
            return True
        if (ay > y) != (by > y):
            xc = ax + (y - ay) * (bx - ax) / (by - ay)
            if x < xc:
                inside = not inside
    return inside


def point_in_polygon(lat: float, lon: float, polygon) -> bool:
    """``polygon`` is a sequence of closed rings: outer first, then holes.

    The point is inside when it is inside the outer ring and not strictly
    inside any hole; hole boundaries count as inside.
    """
    x, y = lon, lat
    outer, *holes = polygon
    if not point_in_ring(x, y, outer):
        return False
    for hole in holes:
        if point_in_ring(x, y, hole) and not _on_ring(x, y, hole):
            return False
    return True


def _on_ring(x, y, ring) -> bool:
    return any(_on_segment(x, y, *ring[i], *ring[i + 1]) for i in range(len(ring) - 1))


def area_contains(area, lat: float, lon: float) -> bool:
    return any(point_in_polygon(lat, lon, poly) for poly in area.polygons)


# --- join ---------------------------------------------------------------------


class AreaIndex:
    """Uniform bounding-box grid over a list of areas (read-only after construction)."""

    def __init__(self, areas, cells: int = 64):
        self.areas = list(areas)
        self._bounds = [a.bounds() for a in self.areas]
        if not self.areas:
            self._grid = {}
            return
        self.x0 = min(b[0] for b in self._bounds)
        self.y0 = min(b[1] for b in self._bounds)
        x1 = max(b[2] for b in self._bounds)
        y1 = max(b[3] for b in self._bounds)
        self.cw = max((x1 - self.x0) / cells, 1e-12)
        self.ch = max((y1 - self.y0) / cells, 1e-12)
        self.cells = cells
        grid = defaultdict(list)
        for i, (bx0, by0, bx1, by1) in enumerate(self._bounds):
            for cx in range(self._cx(bx0), self._cx(bx1) + 1):
                for cy in range(self._cy(by0), self._cy(by1) + 1):
                    grid[(cx, cy)].append(i)
        self._grid = dict(grid)

    def _cx(self, x):
        return min(max(int((x - self.x0) // self.cw), 0), self.cells - 1)

    def _cy(self, y):
        return min(max(int((y - self.y0) // self.ch), 0), self.cells - 1)

    def containing(self, lat: float, lon: float) -> list:
        """All areas containing the point, in input order."""
        if not self._grid:
            return []
        out = []
        for i in self._grid.get((self._cx(lon), self._cy(lat)), ()):
            bx0, by0, bx1, by1 = self._bounds[i]
            if bx0 <= lon <= bx1 and by0 <= lat <= by1 and area_contains(self.areas[i], lat, lon):
                out.append(self.areas[i])
        return out


def join_points(points, areas) -> dict:
    """Map each ``(id, lat, lon)`` to the code of the first area containing it, or None."""
    index = areas if isinstance(areas, AreaIndex) else AreaIndex(areas)
    out = {}
    for pid, lat, lon in points:
        hits = index.containing(lat, lon)
        if not hits:
            log.warning("%s at (%.6f, %.6f) lies in no area; unassigned", pid, lat, lon)
            out[pid] = None
            continue
        if len(hits) > 1:
            log.warning("%s lies in overlapping areas %s; using %s", pid, [a.code for a in hits], hits[0].code)
        out[pid] = hits[0].code
    return out


def join_ads_to_areas(ads, areas) -> dict:
    return join_points(((a.ad_id, a.lat, a.lon) for a in ads), areas)


def join_images_to_areas(images, areas) -> dict:
    return join_points(((i.id, i.lat, i.lon) for i in images), areas)


# --- exposure tables ------------------------------------------------------------


def exposure_table(images, ads, assignments: dict, areas, group_by: str) -> ExposureTable:
    """Per-group image totals and per-category ad/image counts.

    ``assignments`` maps image ids to area codes (None when unassigned); an ad
    belongs to the group of its source image. Ads must carry a category.
    """
    by_code = {a.code: a for a in areas}
    image_group = {}
    for img in images:
        code = assignments.get(img.id)
        if code is None:
            continue
        image_group[img.id] = group_of(by_code[code], group_by)
    totals = defaultdict(int)
    for g in image_group.values():
        totals[g] += 1
    for g in sorted({group_of(a, group_by) for a in areas} - set(totals), key=_key):
        log.warning("group %s has no images; excluded from the %s table", g, group_by)

    ad_counts = defaultdict(lambda: dict.fromkeys(CATEGORIES, 0))
    with_images = defaultdict(lambda: {c: set() for c in CATEGORIES})
    for ad in ads:
        if ad.category is None:
            raise ValueError(f"ad {ad.ad_id} has no category; label before analysis")
        g = image_group.get(ad.source_image)
        if g is None:
            continue
        ad_counts[g][ad.category] += 1
        with_images[g][ad.category].add(ad.source_image)
    cat_totals = {c: sum(ad_counts[g][c] for g in totals) for c in CATEGORIES}

    rows = []
    for g in sorted(totals, key=_key):
        n = totals[g]
        ads_g = {c: ad_counts[g][c] for c in CATEGORIES} if g in ad_counts else dict.fromkeys(CATEGORIES, 0)
        imgs = {c: len(with_images[g][c]) for c in CATEGORIES} if g in with_images else dict.fromkeys(CATEGORIES, 0)
        rows.append(
            ExposureRow(
                group=g,
                image_total=n,
                ads=ads_g,
                images_with=imgs,
                image_pct={c: 100.0 * imgs[c] / n for c in CATEGORIES},
                ad_pct={c: (100.0 * ads_g[c] / cat_totals[c] if cat_totals[c] else 0.0) for c in CATEGORIES},
            )
        )
    return ExposureTable(group_by, tuple(rows))


def _key(g):
    return (isinstance(g, str), g)


# --- chi-squared ------------------------------------------------------------------


@dataclass(frozen=True)
class ChiGroup:
    key: object
    image_total: int
    count: int


def _merge_empty(groups: list) -> list:
    groups = list(groups)
    while True:
        empty = next((i for i, g in enumerate(groups) if g.image_total == 0), None)
        if empty is None or len(groups) < 2:
            return groups
        nbrs = [j for j in (empty - 1, empty + 1) if 0 <= j < len(groups)]
        j = min(nbrs, key=lambda k: (groups[k].image_total, k))
        g, h = groups[empty], groups[j]
        log.warning("group %s has zero expected count; merged into %s", g.key, h.key)
        groups[j] = ChiGroup(h.key, h.image_total + g.image_total, h.count + g.count)
        del groups[empty]


def chi_squared(groups) -> ChiSquareResult:
    """Pearson goodness-of-fit of category counts against per-group image shares.

    Expected count of group i is ``total_count * images_i / sum(images)``;
    dof is the number of groups minus one.
    """
    groups = _merge_empty([g if isinstance(g, ChiGroup) else ChiGroup(*g) for g in groups])
    if len(groups) < 2:
        raise ValueError("chi-squared needs at least two groups with images")
    total = sum(g.count for g in groups)
    if total < 1:
        raise ValueError("chi-squared needs at least one observed item")
    n_images = sum(g.image_total for g in groups)
    terms = []
    for g in groups:
        e = total * g.image_total / n_images
        terms.append((g.count - e) ** 2 / e)
    stat = math.fsum(terms)
    dof = len(groups) - 1
    p = chi2_p_value(stat, dof)
    return ChiSquareResult(stat, dof, p, stars_for(p))


def exposure_chi_squared(table: ExposureTable, category: AdCategory, basis: str = "ads") -> ChiSquareResult:
    """Chi-squared test over a table's groups; ``basis`` is 'ads' or 'images'."""
    counts = {"ads": lambda r: r.ads[category], "images": lambda r: r.images_with[category]}[basis]
    return chi_squared([ChiGroup(r.group, r.image_total, counts(r)) for r in table.rows])


_EPS = 1e-16
_MAX_ITER = 10_000


def _gamma_series_p(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf_q(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _gamma_series_p(a, x)))
    return min(1.0, max(0.0, _gamma_cf_q(a, x)))


def chi2_p_value(statistic: float, dof: int) -> float:
    if statistic < 0:
        raise ValueError("statistic must be non-negative")
    if dof < 1:
        raise ValueError("dof must be >= 1")
    return gamma_q(dof / 2.0, statistic / 2.0)


# --- segmentation metrics -------------------------------------------------------


def iou_flagged(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """IoU plus a flag that is True when both masks are empty (IoU defined as 1)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0, True
    return int(np.count_nonzero(a & b)) / union, False


def iou(a, b) -> float:
    return iou_flagged(a, b)[0]


def mean_iou(pairs) -> float:
    """Mean IoU over ``(pred_mask, truth_mask)`` pairs whose truth mask is non-empty."""
    vals = [iou(p, t) for p, t in pairs if np.any(t)]
    if not vals:
        raise ValueError("no class present in ground truth")
    return float(np.mean(vals))


def class_ious(pred_classes: np.ndarray, truth_classes: np.ndarray, classes=None) -> dict:
    if classes is None:
        classes = np.unique(truth_classes).tolist()
    return {int(c): iou(pred_classes == c, truth_classes == c) for c in classes if np.any(truth_classes == c)}


@dataclass(frozen=True)
class DetectionCounts:
    matched: int
    false_positives: int
    missed: int


def detection_counts(pred_masks, gt_masks, min_px: int = 2000, iou_match: float = 0.5) -> DetectionCounts:
    """Greedy one-to-one matching of predicted to ground-truth instance masks by IoU.

    Ground-truth masks below ``min_px`` pixels are ignored. Candidate pairs are
    taken in descending IoU (ties by index) and accepted while both sides are free.
    """
    gts = [g for g in gt_masks if int(np.count_nonzero(g)) >= min_px]
    preds = list(pred_masks)
    pairs = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            v = iou(p, g)
            if v >= iou_match and v > 0:
                pairs.append((-v, i, j))
    pairs.sort()
    used_p, used_g = set(), set()
    for _, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
    matched = len(used_p)
    return DetectionCounts(matched, len(preds) - matched, len(gts) - matched)
