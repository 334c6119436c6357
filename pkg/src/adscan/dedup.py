"""Collapse repeated recordings of the same advertisement.

Ads recorded within ``distance_m`` of each other are compared by local
feature matching; pairs sharing at least ``tau`` mutual matches are joined
by an edge, and every connected sub-graph is reduced to the member nearest
its geographic centroid.
"""

from __future__ import annotations

import logging
import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .model import DedupConfig

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
DESCRIPTOR_DIM = 128
MIN_CROP_SIDE = 16


def haversine(a, b) -> float:
    """Great-circle distance in meters between two ``(lat, lon)`` pairs."""
    # differences taken in degrees are exact for nearby points, so mirror pairs tie exactly
    lat1, lat2 = math.radians(a[0]), math.radians(b[0])
    dlat = math.radians(b[0] - a[0])
    dlon = math.radians(b[1] - a[1])
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True, eq=False)
class Descriptors:
    """Keypoints ``(n, 2)`` and L2-normalized feature vectors ``(n, 128)``, both float32."""

    keypoints: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float32).reshape(-1, 2)
        vec = np.asarray(self.vectors, dtype=np.float32).reshape(-1, DESCRIPTOR_DIM)
        if len(kp) != len(vec):
            raise ValueError("keypoint and vector counts differ")
        if len(vec):
            norms = np.linalg.norm(vec.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("descriptor vectors must be unit length")
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "vectors", vec)

    def __len__(self):
        return len(self.vectors)

    @classmethod
    def empty(cls) -> "Descriptors":
        return cls(np.zeros((0, 2)), np.zeros((0, DESCRIPTOR_DIM)))


def _normalize_rows(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.float64)
    n = np.linalg.norm(v, axis=1, keepdims=True)
    keep = n[:, 0] > 0
    v = v[keep] / n[keep]
    # float32 rounding can push the norm just past 1e-6; renormalize in float32
    v32 = v.astype(np.float32)
    v32 /= np.linalg.norm(v32.astype(np.float64), axis=1, keepdims=True).astype(np.float32)
    return v32, keep


def compute_descriptors(crop: np.ndarray) -> Descriptors:
    """SIFT keypoints and descriptors for a grayscale or RGB crop.

    Crops smaller than 16x16 give no descriptors. Output is sorted by
    keypoint position so identical crops give identical lists.
    """
    crop = np.asarray(crop)
    if crop.ndim == 3:
        crop = cv2.cvtColor(np.ascontiguousarray(crop.astype(np.uint8)), cv2.COLOR_RGB2GRAY)
    elif crop.dtype != np.uint8:
        crop = np.clip(np.rint(crop), 0, 255).astype(np.uint8)
    if crop.shape[0] < MIN_CROP_SIDE or crop.shape[1] < MIN_CROP_SIDE:
        return Descriptors.empty()
    sift = cv2.SIFT_create()
    kps, desc = sift.detectAndCompute(np.ascontiguousarray(crop), None)
    if desc is None or not kps:
        return Descriptors.empty()
    pts = np.array([kp.pt for kp in kps], dtype=np.float64)
    vec, keep = _normalize_rows(desc)
    pts = pts[keep]
    order = np.lexsort(tuple(vec.T[::-1]) + (pts[:, 0], pts[:, 1]))
    return Descriptors(pts[order], vec[order])


def match_count(a: Descriptors, b: Descriptors, ratio: float = 0.75) -> int:
    """Mutual nearest neighbours that also pass the ratio test in both directions."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    if len(a) == 0 or len(b) == 0:
        return 0
    A = a.vectors.astype(np.float64)
    B = b.vectors.astype(np.float64)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    d = np.sqrt(np.maximum(d2, 0.0))

    def passing(dist):
        # index of nearest neighbour per row, and whether it passes the ratio test
        nn = np.argmin(dist, axis=1)
        if dist.shape[1] < 2:
            return nn, np.ones(len(nn), dtype=bool)
        part = np.partition(dist, 1, axis=1)
        return nn, part[:, 0] < ratio * part[:, 1]

    nn_ab, ok_ab = passing(d)
    nn_ba, ok_ba = passing(d.T)
    rows = np.arange(len(A))
    mutual = nn_ba[nn_ab] == rows
    return int(np.sum(mutual & ok_ab & ok_ba[nn_ab]))


# --- sidecar files ----------------------------------------------------------

_HEADER = struct.Struct("<II")


def write_descriptors(path, desc: Descriptors) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(len(desc), DESCRIPTOR_DIM))
        fh.write(desc.vectors.astype("<f4").tobytes())
        fh.write(desc.keypoints.astype("<f4").tobytes())


def read_descriptors(path) -> Descriptors:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated descriptor header")
    count, dim = _HEADER.unpack_from(data)
    if dim != DESCRIPTOR_DIM:
        raise ValueError(f"{path}: descriptor dim {dim}, expected {DESCRIPTOR_DIM}")
    expected = _HEADER.size + 4 * count * (dim + 2)
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    vec = body[: count * dim].reshape(count, dim)
    kp = body[count * dim :].reshape(count, 2)
    return Descriptors(kp, vec)


# --- graph --------------------------------------------------------------------


@dataclass
class DedupGraph:
    nodes: list  # ad ids, sorted
    edges: dict = field(default_factory=dict)  # (id_a, id_b) with id_a < id_b -> match count
    components: list = field(default_factory=list)  # sorted lists of ad ids

    def component_of(self) -> dict:
        return {n: i for i, comp in enumerate(self.components) for n in comp}

    def size_histogram(self) -> dict:
        return dict(sorted(Counter(len(c) for c in self.components).items()))


def _components(nodes, edges) -> list:
    adj = defaultdict(list)
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = set()
    comps = []
    for n in nodes:
        if n in seen:
            continue
        stack = [n]
        seen.add(n)
        comp = []
        while stack:
            cur = stack.pop()
            comp.append(cur)
            for nb in adj[cur]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        comps.append(sorted(comp))
    comps.sort(key=lambda c: c[0])
    return comps


def candidate_pairs(ads, distance_m: float):
    """Yield index pairs ``(i, j)``, ``i < j``, of ads within ``distance_m`` of each other.

    Ads are bucketed on a lat/lon grid whose cells are at least ``distance_m``
    wide everywhere in the data, so only neighbouring cells need comparing.
    """
    n = len(ads)
    if n < 2:
        return
    dlat = math.degrees(distance_m / EARTH_RADIUS_M)
    max_lat = max(abs(a.lat) for a in ads) + dlat
    near_antimeridian = any(abs(a.lon) > 180.0 - 1.0 for a in ads)
    if max_lat >= 89.0 or near_antimeridian:
        for i in range(n):
            for j in range(i + 1, n):
                if haversine((ads[i].lat, ads[i].lon), (ads[j].lat, ads[j].lon)) <= distance_m:
                    yield i, j
        return
    dlon = dlat / math.cos(math.radians(max_lat))
    cells = defaultdict(list)
    for i, a in enumerate(ads):
        cells[(math.floor(a.lat / dlat), math.floor(a.lon / dlon))].append(i)
    for (cy, cx), members in cells.items():
        for oy in (-1, 0, 1):
            for ox in (-1, 0, 1):
                other = cells.get((cy + oy, cx + ox))
                if not other:
                    continue
                for i in members:
                    for j in other:
                        if i < j and haversine((ads[i].lat, ads[i].lon), (ads[j].lat, ads[j].lon)) <= distance_m:
                            yield i, j


def build_dedup_graph(ads, descs: dict, cfg: DedupConfig = DedupConfig(), matcher=None) -> DedupGraph:
    """Graph over ``ads`` with an edge for every close pair sharing enough matches.

    ``matcher(a_desc, b_desc)`` defaults to :func:`match_count` at ``cfg.ratio``.
    """
    for ad in ads:
        if ad.ad_id not in descs:
            raise KeyError(f"no descriptor entry for ad {ad.ad_id}")
    if matcher is None:
        def matcher(x, y):
            return match_count(x, y, cfg.ratio)
    edges = {}
    for i, j in candidate_pairs(ads, cfg.distance_m):
        a, b = ads[i].ad_id, ads[j].ad_id
        count = matcher(descs[a], descs[b])
        if count > cfg.tau if cfg.strict else count >= cfg.tau:
            edges[(a, b) if a < b else (b, a)] = count
    nodes = sorted(ad.ad_id for ad in ads)
    return DedupGraph(nodes=nodes, edges=dict(sorted(edges.items())), components=_components(nodes, edges))


def select_representatives(graph: DedupGraph, ads) -> tuple[list, dict]:
    """Keep one ad per component: the one nearest the component's mean lat/lon.

    Ties go to the smallest ``ad_id``. Returns the survivors sorted by
    ``ad_id`` and a map from each discarded id to its representative.
    """
    by_id = {ad.ad_id: ad for ad in ads}
    survivors = []
    discarded = {}
    for comp in graph.components:
        members = [by_id[i] for i in comp]
        if len(members) == 1:
            survivors.append(members[0])
            continue
        clat = sum(m.lat for m in members) / len(members)
        clon = sum(m.lon for m in members) / len(members)
        rep = min(members, key=lambda m: (haversine((m.lat, m.lon), (clat, clon)), m.ad_id))
        survivors.append(rep)
        for m in members:
            if m is not rep:
                discarded[m.ad_id] = rep.ad_id
    survivors.sort(key=lambda a: a.ad_id)
    return survivors, dict(sorted(discarded.items()))


def deduplicate(ads, descs: dict, cfg: DedupConfig = DedupConfig()):
    graph = build_dedup_graph(ads, descs, cfg)
    survivors, discarded = select_representatives(graph, ads)
    log.info(
        "dedup: %d ads -> %d survivors (%d edges, component sizes %s)",
        len(ads), len(survivors), len(graph.edges), graph.size_histogram(),
    )
    return survivors, discarded, graph
