"""Frontal-view rectification of extracted ads.

A quadrilateral is fitted to the ad's hull and mapped onto a fixed-size
rectangle with a 4-point projective homography; the crop is then resampled
by inverse mapping with bilinear interpolation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .extract import DegenerateHull, fill_polygon
from .model import AdInstance

CROP_SIZE = 224
EXHAUSTIVE_LIMIT = 24


def _area2(quad) -> float:
    s = 0.0
    for i in range(4):
        x1, y1 = quad[i]
        x2, y2 = quad[(i + 1) % 4]
        s += x1 * y2 - x2 * y1
    return s


@dataclass(frozen=True)
class Quad:
    vertices: tuple  # 4 (x, y) pairs, CCW, starting from the top-left-most vertex

    def __post_init__(self):
        v = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(v) != 4:
            raise ValueError("a quad has exactly four vertices")
        object.__setattr__(self, "vertices", v)
        if _area2(v) <= 0:
            raise DegenerateHull("quad must have positive area in CCW order")
        for i in range(4):
            a, b, c = v[i], v[(i + 1) % 4], v[(i + 2) % 4]
            if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) < 0:
                raise DegenerateHull("quad is not convex")

    @classmethod
    def from_points(cls, pts) -> "Quad":
        """Rotate a CCW cycle so it starts at the top-left-most vertex (min x+y, then y, then x)."""
        pts = [tuple(p) for p in pts]
        start = min(range(4), key=lambda i: (pts[i][0] + pts[i][1], pts[i][1], pts[i][0]))
        return cls(tuple(pts[start:] + pts[:start]))

    @property
    def area(self) -> float:
        return _area2(self.vertices) / 2.0


def _subset_areas(hull: np.ndarray):
    idx = np.array(list(itertools.combinations(range(len(hull)), 4)))
    p = hull[idx]  # (m, 4, 2)
    x, y = p[..., 0], p[..., 1]
    a2 = (x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y).sum(axis=1)
    return idx, a2


def fit_quad(hull) -> Quad:
    """Quadrilateral approximating a convex CCW hull.

    Up to 24 vertices: the maximum-area 4-subset of hull vertices (first one
    found in lexicographic subset order on ties). Above that, the vertices
    extreme along the four diagonal directions. Triangles get the midpoint of
    their longest edge as fourth vertex.
    """
    pts = [tuple(map(float, p)) for p in hull]
    n = len(pts)
    if n < 3:
        raise DegenerateHull(f"hull has {n} vertices")
    if n == 3:
        lengths = [np.hypot(pts[(i + 1) % 3][0] - pts[i][0], pts[(i + 1) % 3][1] - pts[i][1]) for i in range(3)]
        k = int(np.argmax(lengths))
        a, b = pts[k], pts[(k + 1) % 3]
        mid = ((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0)
        return Quad.from_points(pts[: k + 1] + [mid] + pts[k + 1 :])
    if n == 4:
        return Quad.from_points(pts)
    if n <= EXHAUSTIVE_LIMIT:
        idx, a2 = _subset_areas(np.asarray(pts))
        best = idx[int(np.argmax(a2))]
        return Quad.from_points([pts[i] for i in best])
    arr = np.asarray(pts)
    s = arr[:, 0] + arr[:, 1]
    d = arr[:, 0] - arr[:, 1]
    picks = sorted({int(np.argmin(s)), int(np.argmax(d)), int(np.argmax(s)), int(np.argmin(d))})
    if len(picks) < 4:
        # Collapsed diagonals (e.g. a diamond): fall back to the axis extremes.
        picks = sorted(
            set(picks)
            | {int(np.argmin(arr[:, 0])), int(np.argmax(arr[:, 0])), int(np.argmin(arr[:, 1])), int(np.argmax(arr[:, 1]))}
        )
        if len(picks) > 4:
            idx, a2 = _subset_areas(arr[picks])
            picks = [picks[i] for i in idx[int(np.argmax(a2))]]
    if len(picks) < 4:
        raise DegenerateHull("could not find four distinct extreme vertices")
    return Quad.from_points([pts[i] for i in picks])


def _similarity_normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    scale = np.sqrt(2.0) / np.mean(np.hypot(*(pts - c).T))
    return np.array([[scale, 0, -scale * c[0]], [0, scale, -scale * c[1]], [0, 0, 1.0]])


def _solve_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    A = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    if abs(np.linalg.det(A)) < 1e-12:
        raise DegenerateHull("singular homography system")
    h = np.linalg.solve(A, b)
    return np.append(h, 1.0).reshape(3, 3)


def homography(src, dst) -> np.ndarray:
    """3x3 projective map sending four ``src`` points onto four ``dst`` points, with H[2,2] = 1."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    Ts = _similarity_normalizer(src)
    Td = _similarity_normalizer(dst)
    hs = np.c_[src, np.ones(4)] @ Ts.T
    hd = np.c_[dst, np.ones(4)] @ Td.T
    Hn = _solve_dlt(hs[:, :2], hd[:, :2])
    # invertibility is judged in the normalized frame, where it is scale-free
    if abs(np.linalg.det(Hn / np.linalg.norm(Hn))) <= 1e-12:
        raise DegenerateHull("homography is not invertible")
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(H[2, 2]) < 1e-15:
        raise DegenerateHull("homography maps a corner to infinity")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) <= 1e-12:
        raise DegenerateHull("homography is not invertible")
    return H


def homography_from_quad(src: Quad, dst_w: int, dst_h: int) -> np.ndarray:
    """Map ``src`` corners onto (0,0), (w,0), (w,h), (0,h)."""
    if dst_w < 1 or dst_h < 1:
        raise ValueError("destination size must be positive")
    dst = [(0.0, 0.0), (float(dst_w), 0.0), (float(dst_w), float(dst_h)), (0.0, float(dst_h))]
    return homography(src.vertices, dst)


def apply_homography(H: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    h = np.c_[pts, np.ones(len(pts))] @ H.T
    return h[:, :2] / h[:, 2:3]


def warp(src: np.ndarray, H: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Resample ``src`` so that ``out[y, x] = src(H^-1 (x, y))``.

    Bilinear interpolation; samples outside the source extent are 0. Works on
    ``(h, w)`` and ``(h, w, c)`` arrays and returns float64.
    """
    src = np.asarray(src, dtype=float)
    Hinv = np.linalg.inv(H)
    ys, xs = np.mgrid[0:out_h, 0:out_w]
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
    mapped = apply_homography(Hinv, pts)
    sx, sy = mapped[:, 0], mapped[:, 1]
    h, w = src.shape[:2]
    eps = 1e-9
    valid = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if src.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
        valid_b = valid[:, None]
    else:
        valid_b = valid
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    out = (top * (1 - fy) + bot * fy) * valid_b
    return out.reshape((out_h, out_w) + src.shape[2:])


def rectify_ad(image: np.ndarray, ad: AdInstance, size: int = CROP_SIZE) -> np.ndarray:
    """Mask ``image`` to the ad's hull and warp it to a ``size`` x ``size`` frontal view (uint8)."""
    h, w = image.shape[:2]
    mask = fill_polygon(ad.hull, w, h)
    masked = image * (mask[..., None] if image.ndim == 3 else mask)
    try:
        H = homography_from_quad(fit_quad(ad.hull), size, size)
    except DegenerateHull:
        # Quads with collinear corners (triangular hulls) cannot define a
        # projective map; fall back to scaling the bounding box.
        x0, y0, x1, y1 = ad.bbox
        H = homography_from_quad(Quad(((x0, y0), (x1, y0), (x1, y1), (x0, y1))), size, size)
    out = warp(masked, H, size, size)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
