"""Report artifacts: GeoJSON ad points, CSV tables, and deterministic SVG bar charts."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

from .model import CATEGORIES, AdCategory, ExposureRow, ExposureTable

CANVAS_W = 960
CANVAS_H = 540
CATEGORY_COLORS = {
    AdCategory.FOOD: "#d95f02",
    AdCategory.ALCOHOL: "#7570b3",
    AdCategory.GAMBLING: "#e7298a",
    AdCategory.OTHER: "#666666",
}


# --- GeoJSON ------------------------------------------------------------------


def ads_feature_collection(ads, assignments: dict | None = None) -> dict:
    assignments = assignments or {}
    feats = []
    for ad in ads:
        feats.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [ad.lon, ad.lat]},
                "properties": {
                    "ad_id": ad.ad_id,
                    "category": ad.category.render() if ad.category else None,
                    "area": assignments.get(ad.ad_id),
                    "filled_pixels": ad.filled_pixels,
                },
            }
        )
    return {"type": "FeatureCollection", "features": feats}


def emit_geojson(path, ads, assignments: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(ads_feature_collection(ads, assignments), fh, indent=1)
        fh.write("\n")


def parse_ads_geojson(path) -> list[dict]:
    """Read back an ads FeatureCollection as flat records (ad_id, category, area, filled_pixels, lat, lon)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    out = []
    for f in doc["features"]:
        lon, lat = f["geometry"]["coordinates"]
        rec = dict(f["properties"])
        rec["lat"], rec["lon"] = lat, lon
        out.append(rec)
    return out


# --- CSV ----------------------------------------------------------------------


def exposure_header() -> list[str]:
    cols = ["group", "image_total"]
    for c in CATEGORIES:
        cols += [f"{c.value}_ads", f"{c.value}_images", f"{c.value}_image_pct", f"{c.value}_ad_pct"]
    return cols


def write_exposure_csv(path, table: ExposureTable) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(exposure_header())
        for r in table.rows:
            row = [r.group, r.image_total]
            for c in CATEGORIES:
                row += [r.ads[c], r.images_with[c], f"{r.image_pct[c]:.4f}", f"{r.ad_pct[c]:.4f}"]
            w.writerow(row)
        total = table.totals()
        row = ["TOTAL", sum(r.image_total for r in table.rows)]
        for c in CATEGORIES:
            row += [total[c], sum(r.images_with[c] for r in table.rows), "", ""]
        w.writerow(row)


def read_exposure_csv(path, group_key: str) -> ExposureTable:
    """Parse a table written by :func:`write_exposure_csv` (the TOTAL row is dropped).

    Percentages are recomputed from the counts.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    parsed = []
    counted = [r for r in rows if r["group"] != "TOTAL"]
    cat_totals = {c: sum(int(r[f"{c.value}_ads"]) for r in counted) for c in CATEGORIES}
    for r in counted:
        g = r["group"]
        group = g if group_key == "oac_group" else int(g)
        n = int(r["image_total"])
        ads = {c: int(r[f"{c.value}_ads"]) for c in CATEGORIES}
        imgs = {c: int(r[f"{c.value}_images"]) for c in CATEGORIES}
        parsed.append(
            ExposureRow(
                group=group,
                image_total=n,
                ads=ads,
                images_with=imgs,
                image_pct={c: 100.0 * imgs[c] / n for c in CATEGORIES},
                ad_pct={c: (100.0 * ads[c] / cat_totals[c] if cat_totals[c] else 0.0) for c in CATEGORIES},
            )
        )
    return ExposureTable(group_key, tuple(parsed))


GROUPING_TITLES = {"decile": "Deprivation", "oac_supergroup": "OAC", "oac_group": "OAC group"}


def write_chi_squared_table(path, results: dict) -> None:
    """Advert x grouping table of ``statistic`` + stars.

    ``results`` maps ``(category, group_key)`` to a ChiSquareResult.
    """
    keys = [k for k in GROUPING_TITLES if any(g == k for _, g in results)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["advert"] + [GROUPING_TITLES[k] for k in keys])
        for c in CATEGORIES:
            row = [c.title]
            for k in keys:
                res = results.get((c, k))
                row.append("" if res is None else f"{res.statistic:.2f}{res.stars}")
            w.writerow(row)


def write_chi_squared_long(path, results: dict) -> None:
    """One row per test: advert, grouping, basis, statistic, dof, p_value (4 sig. figs), stars."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["advert", "grouping", "basis", "statistic", "dof", "p_value", "stars"])
        for (c, k, basis), res in results.items():
            w.writerow([c.value, k, basis, f"{res.statistic:.6f}", res.dof, f"{res.p_value:.4g}", res.stars])


def write_prf1_csv(path, report) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "precision", "recall", "f1", "support"])
        total = 0
        for c in CATEGORIES:
            s = report.per_class[c]
            total += s.support
            w.writerow([c.value, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}", s.support])
        w.writerow(["weighted", f"{report.precision:.4f}", f"{report.recall:.4f}", f"{report.f1:.4f}", total])


def write_confusion_csv(path, cm) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truth\\prediction"] + [c.value for c in CATEGORIES])
        for i, c in enumerate(CATEGORIES):
            w.writerow([c.value] + [int(v) for v in cm.counts[i]])


# --- SVG ------------------------------------------------------------------------


def nice_ceiling(v: float) -> float:
    """Smallest of 1, 2, 2.5, 5 x 10^k that is >= v (1.0 for v <= 0)."""
    if v <= 0:
        return 1.0
    exp = math.floor(math.log10(v))
    for step in (1.0, 2.0, 2.5, 5.0, 10.0):
        cand = step * 10.0**exp
        if cand >= v - 1e-12:
            return cand
    return 10.0 ** (exp + 1)


PLOT_LEFT, PLOT_RIGHT, PLOT_TOP, PLOT_BOTTOM = 70.0, 930.0, 60.0, 470.0


def bar_layout(table: ExposureTable, value: str = "image_pct"):
    """Bar rectangles ``(group, category, x, y, w, h, v)`` plus the axis maximum."""
    vals = [getattr(r, value)[c] for r in table.rows for c in CATEGORIES]
    axis_max = nice_ceiling(max(vals, default=0.0))
    plot_h = PLOT_BOTTOM - PLOT_TOP
    n = max(len(table.rows), 1)
    slot = (PLOT_RIGHT - PLOT_LEFT) / n
    bar_w = slot * 0.8 / len(CATEGORIES)
    bars = []
    for gi, r in enumerate(table.rows):
        for ci, c in enumerate(CATEGORIES):
            v = getattr(r, value)[c]
            h = plot_h * v / axis_max
            x = PLOT_LEFT + gi * slot + slot * 0.1 + ci * bar_w
            bars.append((r.group, c, x, PLOT_BOTTOM - h, bar_w, h, v))
    return bars, axis_max


def _f(v: float) -> str:
    return f"{v:.2f}"


def svg_bars(table: ExposureTable, title: str | None = None, value: str = "image_pct") -> str:
    bars, axis_max = bar_layout(table, value)
    title = title or f"Percentage of images with advertisements by {table.group_key}"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS_W}" height="{CANVAS_H}" '
        f'viewBox="0 0 {CANVAS_W} {CANVAS_H}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{CANVAS_W}" height="{CANVAS_H}" fill="#ffffff"/>',
        f'<text x="{CANVAS_W / 2:.2f}" y="30.00" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{_f(PLOT_LEFT)}" y1="{_f(PLOT_BOTTOM)}" x2="{_f(PLOT_RIGHT)}" y2="{_f(PLOT_BOTTOM)}" stroke="#000000"/>',
        f'<line x1="{_f(PLOT_LEFT)}" y1="{_f(PLOT_TOP)}" x2="{_f(PLOT_LEFT)}" y2="{_f(PLOT_BOTTOM)}" stroke="#000000"/>',
    ]
    for k in range(5):
        v = axis_max * k / 4
        y = PLOT_BOTTOM - (PLOT_BOTTOM - PLOT_TOP) * k / 4
        out.append(
            f'<text x="{_f(PLOT_LEFT - 6)}" y="{_f(y + 4)}" text-anchor="end">{v:.2f}</text>'
        )
    for group, cat, x, y, w, h, v in bars:
        out.append(
            f'<rect class="bar" data-group="{escape(str(group))}" data-category="{cat.value}" '
            f'x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{CATEGORY_COLORS[cat]}"/>'
        )
        out.append(
            f'<text x="{_f(x + w / 2)}" y="{_f(y - 3)}" text-anchor="middle" font-size="8">{v:.2f}</text>'
        )
    n = max(len(table.rows), 1)
    slot = (PLOT_RIGHT - PLOT_LEFT) / n
    for gi, r in enumerate(table.rows):
        out.append(
            f'<text x="{_f(PLOT_LEFT + (gi + 0.5) * slot)}" y="{_f(PLOT_BOTTOM + 18)}" '
            f'text-anchor="middle">{escape(str(r.group))}</text>'
        )
    for ci, c in enumerate(CATEGORIES):
        lx = PLOT_LEFT + ci * 120
        out.append(f'<rect x="{_f(lx)}" y="505.00" width="12.00" height="12.00" fill="{CATEGORY_COLORS[c]}"/>')
        out.append(f'<text x="{_f(lx + 18)}" y="515.00">{c.title}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_bars(path, table: ExposureTable, title: str | None = None, value: str = "image_pct") -> None:
    Path(path).write_text(svg_bars(table, title, value), encoding="utf-8")
