"""Readers (and the matching writers) for every file format the pipeline consumes."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .model import (
    AdCategory,
    AdInstance,
    AreaUnit,
    GeoImage,
    LabelRaster,
    ManifestError,
    validate_manifest,
)


class FormatError(ValueError):
    pass


MANIFEST_FIELDS = ("id", "lat", "lon", "captured_at", "raster_path", "width", "height")


def _parse_timestamp(s: str) -> datetime:
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    out = ts.strftime("%Y-%m-%dT%H:%M:%S")
    if ts.microsecond % 1000:
        out += f".{ts.microsecond:06d}"
    elif ts.microsecond:
        out += f".{ts.microsecond // 1000:03d}"
    return out + "Z"


def load_manifest(path) -> list[GeoImage]:
    """Read a JSON Lines image manifest.

    Relative raster and image paths are resolved against the manifest's
    directory. Blank lines are skipped.
    """
    path = Path(path)
    base = path.parent
    images = []
    problems = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise FormatError(f"line {lineno}: expected a JSON object")
            for name in MANIFEST_FIELDS:
                if name not in rec:
                    raise FormatError(f"line {lineno}: missing field {name}")
            try:
                image_path = rec.get("image_path")
                images.append(
                    GeoImage(
                        id=str(rec["id"]),
                        lat=float(rec["lat"]),
                        lon=float(rec["lon"]),
                        captured_at=_parse_timestamp(rec["captured_at"]),
                        width=int(rec["width"]),
                        height=int(rec["height"]),
                        raster_ref=str(base / rec["raster_path"]),
                        image_ref=str(base / image_path) if image_path else None,
                    )
                )
            except (TypeError, ValueError) as exc:
                problems.append((f"line {lineno}", "value", str(exc)))
    if problems:
        raise ManifestError(problems)
    return validate_manifest(images)


def write_manifest(path, images, relative_to=None) -> None:
    base = Path(relative_to) if relative_to else Path(path).parent
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for img in images:
            rec = {
                "id": img.id,
                "lat": img.lat,
                "lon": img.lon,
                "captured_at": format_timestamp(img.captured_at),
                "raster_path": _relpath(img.raster_ref, base),
                "width": img.width,
                "height": img.height,
            }
            if img.image_ref:
                rec["image_path"] = _relpath(img.image_ref, base)
            fh.write(json.dumps(rec) + "\n")


def _relpath(p, base: Path) -> str:
    p = Path(p)
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return p.as_posix()


# --- netpbm ---------------------------------------------------------------

_WS = b" \t\r\n"


def _read_header(data: bytes, ntokens: int) -> tuple[list[bytes], int]:
    """Tokenize a netpbm header, skipping '#' comments; returns tokens and data offset."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < ntokens:
        while i < n and data[i] in _WS:
            i += 1
        if i >= n:
            raise FormatError("truncated header")
        if data[i] == ord("#"):
            while i < n and data[i] not in b"\r\n":
                i += 1
            continue
        j = i
        while j < n and data[j] not in _WS and data[j] != ord("#"):
            j += 1
        tokens.append(data[i:j])
        i = j
    # exactly one whitespace byte separates the header from the pixel data
    if i >= n or data[i] not in _WS:
        if i < n:
            raise FormatError("missing whitespace after header")
    return tokens, i + 1


def read_netpbm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) with maxval <= 255.

    Returns ``(h, w)`` or ``(h, w, 3)`` uint8.
    """
    data = Path(path).read_bytes()
    magic = data[:2].decode("latin-1")
    if magic not in ("P5", "P6"):
        raise FormatError(f"unsupported magic {magic}")
    tokens, offset = _read_header(data[2:], 3)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("non-integer header field") from None
    if maxval > 255:
        raise FormatError(f"maxval {maxval} > 255 not supported")
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}")
    channels = 3 if magic == "P6" else 1
    expected = width * height * channels
    body = data[offset:]
    if len(body) < expected:
        raise FormatError(f"expected {expected} bytes, got {len(body)}")
    arr = np.frombuffer(body[:expected], dtype=np.uint8)
    if channels == 3:
        return arr.reshape(height, width, 3).copy()
    return arr.reshape(height, width).copy()


def write_netpbm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        magic = "P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = "P6"
    else:
        raise ValueError(f"cannot write array of shape {arr.shape} as netpbm")
    h, w = arr.shape[:2]
    header = f"{magic} {w} {h} 255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def load_label_raster(path) -> LabelRaster:
    data = Path(path).read_bytes()[:2]
    if data != b"P5":
        raise FormatError(f"unsupported magic {data.decode('latin-1')}")
    return LabelRaster(read_netpbm(path))


def write_label_raster(path, raster: LabelRaster) -> None:
    write_netpbm(path, raster.classes)


# --- areas ----------------------------------------------------------------


def _ring(coords) -> tuple:
    return tuple((float(p[0]), float(p[1])) for p in coords)


def load_areas(path) -> list[AreaUnit]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise FormatError("areas file must be a GeoJSON FeatureCollection")
    areas = []
    for i, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            polys = (tuple(_ring(r) for r in geom["coordinates"]),)
        elif gtype == "MultiPolygon":
            polys = tuple(tuple(_ring(r) for r in poly) for poly in geom["coordinates"])
        else:
            raise FormatError(f"feature {i}: unsupported geometry type {gtype}")
        try:
            code = str(props["code"])
            decile = int(props["imd_decile"])
            supergroup = int(props["oac_supergroup"])
            group = str(props["oac_group"]).lower()
        except KeyError as exc:
            raise FormatError(f"feature {i}: missing property {exc.args[0]}") from None
        areas.append(AreaUnit(code, polys, decile, supergroup, group))
    return areas


def write_areas(path, areas) -> None:
    features = []
    for a in areas:
        if len(a.polygons) == 1:
            geom = {"type": "Polygon", "coordinates": [[list(p) for p in r] for r in a.polygons[0]]}
        else:
            geom = {
                "type": "MultiPolygon",
                "coordinates": [[[list(p) for p in r] for r in poly] for poly in a.polygons],
            }
        features.append(
            {
                "type": "Feature",
                "geometry": geom,
                "properties": {
                    "code": a.code,
                    "imd_decile": a.imd_decile,
                    "oac_supergroup": a.oac_supergroup,
                    "oac_group": a.oac_group,
                },
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1)
        fh.write("\n")


# --- lexicons ---------------------------------------------------------------


@dataclass(frozen=True)
class KeywordLexicon:
    category: AdCategory
    phrases: frozenset

    def __post_init__(self):
        if self.category is AdCategory.OTHER:
            raise ValueError("lexicons exist only for food, alcohol and gambling")
        if not self.phrases:
            raise ValueError(f"empty lexicon: {self.category.value}")
        if any(not p.strip() for p in self.phrases):
            raise ValueError(f"blank phrase in lexicon {self.category.value}")


LEXICON_CATEGORIES = (AdCategory.FOOD, AdCategory.ALCOHOL, AdCategory.GAMBLING)

_SPACES = re.compile(r"\s+")


def normalize_phrase(line: str) -> str:
    return _SPACES.sub(" ", line.strip().casefold())


def load_lexicon(directory) -> list[KeywordLexicon]:
    directory = Path(directory)
    out = []
    for cat in LEXICON_CATEGORIES:
        path = directory / f"{cat.value}.txt"
        if not path.is_file():
            raise FormatError(f"missing lexicon file {path.name}")
        phrases = set()
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.lstrip().startswith("#"):
                continue
            phrase = normalize_phrase(line)
            if phrase:
                phrases.add(phrase)
        if not phrases:
            raise FormatError(f"empty lexicon: {cat.value}")
        out.append(KeywordLexicon(cat, frozenset(phrases)))
    return out


# --- predictions / texts -----------------------------------------------------


def _read_keyed_csv(path, value_field: str):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["ad_id", value_field]:
            raise FormatError(f"expected header 'ad_id,{value_field}'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise FormatError(f"line {lineno}: expected 2 columns, got {len(row)}")
            yield lineno, row[0].strip(), row[1]


def load_predictions(path) -> dict[str, AdCategory]:
    out: dict[str, AdCategory] = {}
    for lineno, ad_id, token in _read_keyed_csv(path, "category"):
        try:
            cat = AdCategory.parse(token)
        except ValueError:
            raise FormatError(f"unknown category '{token.strip()}' line {lineno}") from None
        if ad_id in out:
            raise FormatError(f"duplicate ad_id {ad_id}")
        out[ad_id] = cat
    return out


def write_predictions(path, preds: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ad_id", "category"])
        for ad_id in sorted(preds):
            w.writerow([ad_id, preds[ad_id].render()])


def load_texts(path) -> dict[str, str]:
    out = {}
    for lineno, ad_id, text in _read_keyed_csv(path, "text"):
        if ad_id in out:
            raise FormatError(f"duplicate ad_id {ad_id}")
        out[ad_id] = text
    return out


# --- ads ---------------------------------------------------------------------


def load_ads(path) -> list[AdInstance]:
    ads = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                ads.append(AdInstance.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
    return ads


def write_ads(path, ads) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ad in ads:
            fh.write(json.dumps(ad.to_dict()) + "\n")
