"""Independent reference implementations used only by the tests.

Each one is deliberately naive so that it can be checked by eye.
"""

from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np


def flood_fill_components(mask: np.ndarray) -> list[frozenset]:
    """8-connected components of a boolean mask as sets of (x, y), via BFS."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    out = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            comp = set()
            q = deque([(x, y)])
            seen[y, x] = True
            while q:
                cx, cy = q.popleft()
                comp.add((cx, cy))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        nx, ny = cx + dx, cy + dy
                        if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((nx, ny))
            out.append(frozenset(comp))
    return out


def halfplane_hull_vertices(points) -> set:
    """O(n^3) hull: a point is a vertex if it is an endpoint of an edge with all
    points on one side, and it is not strictly between the edge's endpoints."""
    pts = sorted(set(map(tuple, points)))
    verts = set()
    for a, b in itertools.permutations(pts, 2):
        side = [(b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) for p in pts]
        if all(s >= 0 for s in side):
            # among collinear points on this supporting line keep only the extremes
            line = [p for p, s in zip(pts, side) if s == 0]
            ext = min(line), max(line)
            verts.update(ext)
    return verts


def polygon_fill_per_pixel(poly, width, height) -> np.ndarray:
    """Pixel-center test against each edge of a CCW convex polygon, one pixel at a time."""
    out = np.zeros((height, width), dtype=bool)
    n = len(poly)
    for y in range(height):
        for x in range(width):
            ok = True
            for i in range(n):
                ax, ay = poly[i]
                bx, by = poly[(i + 1) % n]
                if (bx - ax) * (y - ay) - (by - ay) * (x - ax) < 0:
                    ok = False
                    break
            out[y, x] = ok
    return out


def winding_number(x, y, ring) -> int:
    """Sunday's winding number for a closed ring."""
    wn = 0
    for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
        cross = (bx - ax) * (y - ay) - (x - ax) * (by - ay)
        if ay <= y:
            if by > y and cross > 0:
                wn += 1
        else:
            if by <= y and cross < 0:
                wn -= 1
    return wn


def on_ring(x, y, ring) -> bool:
    for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
        if (bx - ax) * (y - ay) - (by - ay) * (x - ax) == 0 and min(ax, bx) <= x <= max(ax, bx) and min(ay, by) <= y <= max(ay, by):
            return True
    return False


def winding_inside(x, y, polygon) -> bool:
    outer, *holes = polygon
    if not (on_ring(x, y, outer) or winding_number(x, y, outer) != 0):
        return False
    return not any(winding_number(x, y, h) != 0 and not on_ring(x, y, h) for h in holes)


def union_find_components(nodes, edges) -> set:
    parent = {n: n for n in nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    groups = {}
    for n in nodes:
        groups.setdefault(find(n), set()).add(n)
    return {frozenset(g) for g in groups.values()}


def haversine_m(lat1, lon1, lat2, lon2, r=6_371_000.0) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * r * math.asin(min(1.0, math.sqrt(h)))


def brute_representative(members) -> str:
    """members: list of (ad_id, lat, lon); closest to the mean position, ties to smallest id."""
    clat = sum(m[1] for m in members) / len(members)
    clon = sum(m[2] for m in members) / len(members)
    return min(members, key=lambda m: (haversine_m(m[1], m[2], clat, clon), m[0]))[0]


def max_area_quad(points) -> float:
    """Largest shoelace area over all 4-subsets taken in cyclic order."""
    best = 0.0
    for sub in itertools.combinations(points, 4):
        a2 = sum(sub[i][0] * sub[(i + 1) % 4][1] - sub[(i + 1) % 4][0] * sub[i][1] for i in range(4))
        best = max(best, abs(a2) / 2)
    return best


def iou_by_count(a: np.ndarray, b: np.ndarray) -> float:
    inter = sum(1 for x, y in zip(a.ravel(), b.ravel()) if x and y)
    union = sum(1 for x, y in zip(a.ravel(), b.ravel()) if x or y)
    return 1.0 if union == 0 else inter / union
