"""Shared domain types for the advertisement pipeline.

Value objects are frozen dataclasses. Types that carry structural invariants
(rasters, ads, areas, statistics) check them in ``__post_init__``; image
manifests are checked as a batch by :func:`validate_manifest` so that every
problem in a file can be reported at once.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional, Sequence

import numpy as np

MIN_AD_PIXELS = 2000

Point = tuple[float, float]
Ring = tuple[Point, ...]
Polygon = tuple[Ring, ...]  # outer ring first, then holes

OAC_SUPERGROUPS = {
    1: "Rural Residents",
    2: "Cosmopolitans",
    3: "Ethnicity Central",
    4: "Multicultural Metropolitans",
    5: "Urbanites",
    6: "Suburbanites",
    7: "Constrained City Dwellers",
    8: "Hard-Pressed Living",
}

OAC_GROUPS = {
    "1a": "Farming Communities",
    "1b": "Rural Tenants",
    "1c": "Ageing Rural Dwellers",
    "2a": "Students Around Campus",
    "2b": "Inner-City Students",
    "2c": "Comfortable Cosmopolitans",
    "2d": "Aspiring and Affluent",
    "3a": "Ethnic Family Life",
    "3b": "Endeavouring Ethnic Mix",
    "3c": "Ethnic Dynamics",
    "3d": "Aspirational Techies",
    "4a": "Rented Family Living",
    "4b": "Challenged Asian Terraces",
    "4c": "Asian Traits",
    "5a": "Urban Professionals and Families",
    "5b": "Ageing Urban Living",
    "6a": "Suburban Achievers",
    "6b": "Semi-Detached Suburbia",
    "7a": "Challenged Diversity",
    "7b": "Constrained Flat Dwellers",
    "7c": "White Communities",
    "7d": "Ageing City Dwellers",
    "8a": "Industrious Communities",
    "8b": "Challenged Terraced Workers",
    "8c": "Hard-Pressed Ageing Workers",
    "8d": "Migration and Churn",
}


class ManifestError(ValueError):
    """Raised when a batch of records fails validation.

    ``problems`` holds one ``(record, field, message)`` triple per violation.
    """

    def __init__(self, problems: Sequence[tuple[str, str, str]]):
        self.problems = list(problems)
        lines = [f"{rec}: {fld}: {msg}" for rec, fld, msg in self.problems]
        super().__init__("; ".join(lines))


class AdCategory(enum.Enum):
    FOOD = "food"
    ALCOHOL = "alcohol"
    GAMBLING = "gambling"
    OTHER = "other"

    @classmethod
    def parse(cls, token: str) -> "AdCategory":
        try:
            return cls(token.strip().lower())
        except ValueError:
            raise ValueError(f"unknown category {token!r}") from None

    def render(self) -> str:
        return self.value

    @property
    def title(self) -> str:
        return self.value.capitalize()


CATEGORIES = tuple(AdCategory)


@dataclass(frozen=True)
class GeoImage:
    id: str
    lat: float
    lon: float
    captured_at: datetime
    width: int
    height: int
    raster_ref: str
    image_ref: Optional[str] = None


def _image_problems(img: GeoImage) -> list[tuple[str, str, str]]:
    out = []
    if not -90.0 <= img.lat <= 90.0:
        out.append((img.id, "lat", f"coordinate out of range: {img.lat}"))
    if not -180.0 <= img.lon <= 180.0:
        out.append((img.id, "lon", f"coordinate out of range: {img.lon}"))
    if img.width < 1:
        out.append((img.id, "width", f"nonpositive dimension: {img.width}"))
    if img.height < 1:
        out.append((img.id, "height", f"nonpositive dimension: {img.height}"))
    return out


def validate_manifest(images: Sequence[GeoImage]) -> list[GeoImage]:
    """Return ``images`` unchanged if every record is valid.

    Raises :class:`ManifestError` listing each violating record and field.
    """
    problems: list[tuple[str, str, str]] = []
    seen: set[str] = set()
    for img in images:
        if img.id in seen:
            problems.append((img.id, "id", f"duplicate id {img.id}"))
        seen.add(img.id)
        problems.extend(_image_problems(img))
    if problems:
        raise ManifestError(problems)
    return list(images)


@dataclass(frozen=True, eq=False)
class LabelRaster:
    """Per-pixel class ids, indexed ``classes[y, x]``."""

    classes: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.classes)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"label raster must be a non-empty 2D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("class ids must lie in 0..255")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "classes", arr)

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabelRaster):
            return NotImplemented
        return np.array_equal(self.classes, other.classes)

    __hash__ = None


def signed_area2(poly: Sequence[Point]) -> float:
    """Twice the shoelace area; positive for our counter-clockwise order."""
    s = 0
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return s


def is_strictly_convex_ccw(poly: Sequence[Point]) -> bool:
    n = len(poly)
    if n < 3:
        return False
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        cx, cy = poly[(i + 2) % n]
        if (bx - ax) * (cy - by) - (by - ay) * (cx - bx) <= 0:
            return False
    return True


@dataclass(frozen=True)
class AdInstance:
    ad_id: str
    source_image: str
    hull: tuple[tuple[int, int], ...]
    component_pixels: int
    filled_pixels: int
    bbox: tuple[int, int, int, int]
    lat: float
    lon: float
    category: Optional[AdCategory] = None
    crop_ref: Optional[str] = None

    def __post_init__(self):
        hull = tuple((int(x), int(y)) for x, y in self.hull)
        object.__setattr__(self, "hull", hull)
        object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))
        if not is_strictly_convex_ccw(hull):
            raise ValueError(f"{self.ad_id}: hull must be convex and counter-clockwise")
        if self.component_pixels < 1:
            raise ValueError(f"{self.ad_id}: component_pixels must be >= 1")
        if self.filled_pixels < self.component_pixels:
            raise ValueError(f"{self.ad_id}: filled_pixels < component_pixels")
        x0, y0, x1, y1 = self.bbox
        if any(not (x0 <= x <= x1 and y0 <= y <= y1) for x, y in hull):
            raise ValueError(f"{self.ad_id}: bbox does not enclose hull")

    def with_(self, **changes) -> "AdInstance":
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "ad_id": self.ad_id,
            "source_image": self.source_image,
            "hull": [list(p) for p in self.hull],
            "component_pixels": self.component_pixels,
            "filled_pixels": self.filled_pixels,
            "bbox": list(self.bbox),
            "lat": self.lat,
            "lon": self.lon,
            "category": self.category.render() if self.category else None,
            "crop_ref": self.crop_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdInstance":
        cat = d.get("category")
        return cls(
            ad_id=d["ad_id"],
            source_image=d["source_image"],
            hull=tuple(tuple(p) for p in d["hull"]),
            component_pixels=d["component_pixels"],
            filled_pixels=d["filled_pixels"],
            bbox=tuple(d["bbox"]),
            lat=d["lat"],
            lon=d["lon"],
            category=AdCategory.parse(cat) if cat else None,
            crop_ref=d.get("crop_ref"),
        )


@dataclass(frozen=True)
class DedupConfig:
    tau: int = 60
    distance_m: float = 10.0
    ratio: float = 0.75
    strict: bool = False  # edge iff count > tau instead of >= tau

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if not self.distance_m > 0:
            raise ValueError("distance_m must be > 0")
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")


@dataclass(frozen=True)
class AreaUnit:
    code: str
    polygons: tuple[Polygon, ...]
    imd_decile: int
    oac_supergroup: int
    oac_group: str

    def __post_init__(self):
        if not 1 <= self.imd_decile <= 10:
            raise ValueError(f"{self.code}: decile {self.imd_decile} outside 1-10")
        if self.oac_group not in OAC_GROUPS:
            raise ValueError(f"{self.code}: unknown OAC group {self.oac_group!r}")
        if int(self.oac_group[0]) != self.oac_supergroup:
            raise ValueError(
                f"group {self.oac_group} inconsistent with supergroup {self.oac_supergroup}"
            )
        if not self.polygons:
            raise ValueError(f"{self.code}: no polygons")
        for poly in self.polygons:
            if not poly:
                raise ValueError(f"{self.code}: polygon without rings")
            for ring in poly:
                if len(ring) < 4:
                    raise ValueError(f"{self.code}: ring needs at least 4 positions")
                if tuple(ring[0]) != tuple(ring[-1]):
                    raise ValueError(f"{self.code}: ring not closed")

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p[0] for poly in self.polygons for p in poly[0]]
        ys = [p[1] for poly in self.polygons for p in poly[0]]
        return min(xs), min(ys), max(xs), max(ys)


GROUP_KEYS = ("decile", "oac_supergroup", "oac_group")


def group_of(area: AreaUnit, group_by: str):
    if group_by == "decile":
        return area.imd_decile
    if group_by == "oac_supergroup":
        return area.oac_supergroup
    if group_by == "oac_group":
        return area.oac_group
    raise ValueError(f"unknown grouping {group_by!r}; expected one of {GROUP_KEYS}")


@dataclass(frozen=True)
class ExposureRow:
    group: object
    image_total: int
    ads: dict  # AdCategory -> ad count
    images_with: dict  # AdCategory -> images containing >= 1 ad of the category
    image_pct: dict  # AdCategory -> 100 * images_with / image_total
    ad_pct: dict  # AdCategory -> share of the category's ads found in this group

    def __post_init__(self):
        for c in CATEGORIES:
            if self.images_with[c] > self.image_total:
                raise ValueError(f"group {self.group}: images_with exceeds image_total")
            if self.ads[c] < self.images_with[c]:
                raise ValueError(f"group {self.group}: fewer ads than images with ads")
            if not (0.0 <= self.image_pct[c] <= 100.0 and 0.0 <= self.ad_pct[c] <= 100.0):
                raise ValueError(f"group {self.group}: percentage outside [0, 100]")


@dataclass(frozen=True)
class ExposureTable:
    group_key: str
    rows: tuple[ExposureRow, ...]

    def totals(self) -> dict:
        return {c: sum(r.ads[c] for r in self.rows) for c in CATEGORIES}


def stars_for(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    stars: str = field(default="")

    def __post_init__(self):
        if self.statistic < 0:
            raise ValueError("statistic must be non-negative")
        if self.dof < 1:
            raise ValueError("dof must be positive")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value outside [0, 1]")
        if self.stars != stars_for(self.p_value):
            raise ValueError(f"stars {self.stars!r} inconsistent with p={self.p_value}")


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class PRF1Report:
    per_class: dict  # AdCategory -> ClassScores
    precision: float
    recall: float
    f1: float
    zero_division: tuple = ()  # (category, metric) pairs that hit 0/0
