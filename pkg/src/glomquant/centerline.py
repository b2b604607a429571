"""GBM centerline extraction, stride sampling and patch cropping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import EmptyStructure, ImageMeta, Label, LabelMask, pixel_of

TANGENT_HALF_WINDOW = 5
SMOOTH_HALF_WINDOW = 3
MIN_INSIDE_FRACTION = 0.5

# neighbour order P2..P9 of the Zhang-Suen formulation: N, NE, E, SE, S, SW, W, NW
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class Polyline:
    points: np.ndarray  # (n, 2) sub-pixel (x, y)
    closed: bool

    @property
    def n_points(self):
        return len(self.points)

    def segment_lengths(self):
        pts = self.points
        if self.closed:
            pts = np.vstack([pts, pts[:1]])
        return np.hypot(*np.diff(pts, axis=0).T)

    def length_px(self):
        return float(self.segment_lengths().sum())


@dataclass(frozen=True)
class Centerline:
    polylines: tuple
    image_id: str = ""

    def total_length_px(self):
        return sum(p.length_px() for p in self.polylines)


@dataclass(frozen=True)
class SamplePoint:
    x: float
    y: float
    tx: float
    ty: float
    polyline_id: int
    arc_position_nm: float

    @property
    def tangent(self):
        return (self.tx, self.ty)

    @property
    def normal(self):
        return (-self.ty, self.tx)


@dataclass(frozen=True)
class GfbPatch:
    sample: SamplePoint
    window_px: int
    # clamped pixel bounds, half-open
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def center(self):
        return (self.sample.x, self.sample.y)


# --------------------------------------------------------------------------
# thinning
# --------------------------------------------------------------------------

def _build_thinning_luts():
    luts = np.zeros((2, 256), dtype=bool)
    for code in range(256):
        p = [(code >> k) & 1 for k in range(8)]  # p[0]=P2 ... p[7]=P9
        b = sum(p)
        a = sum(1 for k in range(8) if p[k] == 0 and p[(k + 1) % 8] == 1)
        if not (2 <= b <= 6 and a == 1):
            continue
        p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
        luts[0, code] = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
        luts[1, code] = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
    return luts


_THIN_LUTS = _build_thinning_luts()


def _bbox(fg):
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1


def thin(fg):
    """Two-subiteration parallel thinning of a boolean image (8-connected result).

    Works on the flat indices of foreground pixels only, so cost scales with the
    structure area rather than the image area.
    """
    fg = np.asarray(fg, dtype=bool)
    out = np.zeros(fg.shape, dtype=bool)
    if not fg.any():
        return out
    r0, r1, c0, c1 = _bbox(fg)
    img = np.pad(fg[r0:r1, c0:c1], 1).astype(np.uint8)
    w = img.shape[1]
    flat = img.ravel()
    offsets = np.array([dr * w + dc for dr, dc in _RING], dtype=np.int64)
    weights = (1 << np.arange(8)).astype(np.uint8)
    idx = np.flatnonzero(flat)
    # interior pixels (all 8 neighbours set) can never be deleted; only the
    # current border set and the neighbours of freshly deleted pixels are tested
    code = (flat[idx[:, None] + offsets] * weights).sum(axis=1, dtype=np.uint16)
    cand = idx[code != 255]
    while True:
        changed = False
        for step in (0, 1):
            code = (flat[cand[:, None] + offsets] * weights).sum(axis=1, dtype=np.uint16)
            kill = _THIN_LUTS[step][code]
            if kill.any():
                dead = cand[kill]
                flat[dead] = 0
                around = (dead[:, None] + offsets).ravel()
                around = around[flat[around] == 1]
                cand = np.union1d(cand[~kill], around)
                changed = True
        if not changed:
            break
    out[r0:r1, c0:c1] = img[1:-1, 1:-1].astype(bool)
    return out


def _build_redundant_lut():
    lut = np.zeros(256, dtype=bool)
    for code in range(256):
        x = [(code >> k) & 1 for k in range(8)]
        xb = [1 - v for v in x]
        # Yokoi 8-connectivity number; 4-neighbours sit at even ring positions
        n8 = sum(xb[k] - xb[k] * xb[(k + 1) % 8] * xb[(k + 2) % 8] for k in (0, 2, 4, 6))
        lut[code] = sum(x) >= 2 and n8 == 1
    return lut


_REDUNDANT_LUT = _build_redundant_lut()


def _ring_code(skel, y, x):
    code = 0
    for k, (dr, dc) in enumerate(_RING):
        if skel[y + dr, x + dc]:
            code |= 1 << k
    return code


def _remove_redundant(skel):
    """Drop simple, non-end skeleton pixels left behind by thinning.

    Parallel thinning can leave staircase corners where a pixel is 4-adjacent to
    two pixels that already touch diagonally. Those are removed one at a time
    (rechecking after each removal) so the result is strictly one pixel wide and
    no 2x2 block survives.
    """
    skel = np.pad(np.asarray(skel, dtype=bool), 1)
    weights = (1 << np.arange(8)).astype(np.uint16)
    while True:
        ys, xs = np.nonzero(skel)
        if len(ys) == 0:
            break
        nb = np.stack([skel[ys + dr, xs + dc] for dr, dc in _RING], axis=1)
        code = (nb * weights).sum(axis=1)
        cand = np.flatnonzero(_REDUNDANT_LUT[code])
        removed = 0
        for k in cand:
            y, x = ys[k], xs[k]
            if _REDUNDANT_LUT[_ring_code(skel, y, x)]:
                skel[y, x] = False
                removed += 1
        if not removed:
            break
    return skel[1:-1, 1:-1]


def skeletonize_gbm(mask: LabelMask):
    """One-pixel-wide, topology-preserving skeleton of the GBM label."""
    fg = mask.labels == Label.GBM
    if not fg.any():
        raise EmptyStructure("mask contains no GBM pixels")
    r0, r1, c0, c1 = _bbox(fg)
    out = np.zeros(fg.shape, dtype=bool)
    out[r0:r1, c0:c1] = _remove_redundant(thin(fg[r0:r1, c0:c1]))
    return out


# --------------------------------------------------------------------------
# graph ordering and pruning
# --------------------------------------------------------------------------

class _SkeletonGraph:
    def __init__(self, skel):
        ys, xs = np.nonzero(skel)
        self.ys, self.xs = ys, xs
        h, w = skel.shape
        index = np.full((h + 2, w + 2), -1, dtype=np.int64)
        index[ys + 1, xs + 1] = np.arange(len(ys))
        self.nbrs = np.stack([index[ys + 1 + dr, xs + 1 + dc] for dr, dc in _RING], axis=1)
        self.degree = (self.nbrs >= 0).sum(axis=1)

    def neighbours(self, i):
        row = self.nbrs[i]
        return row[row >= 0]

    def step_length(self, i, j):
        return _SQRT2 if (self.ys[i] != self.ys[j] and self.xs[i] != self.xs[j]) else 1.0

    def path_length(self, path):
        return sum(self.step_length(a, b) for a, b in zip(path[:-1], path[1:]))

    def clusters(self):
        """Cluster id per pixel: 8-connected junction pixels (degree >= 3) share one id."""
        junction = self.degree >= 3
        h = int(self.ys.max()) + 1 if len(self.ys) else 0
        w = int(self.xs.max()) + 1 if len(self.xs) else 0
        img = np.zeros((h, w), dtype=bool)
        img[self.ys[junction], self.xs[junction]] = True
        lab, _ = ndimage.label(img, structure=np.ones((3, 3), dtype=bool))
        cid = np.arange(len(self.ys)) + lab.max() + 1
        cid[junction] = lab[self.ys[junction], self.xs[junction]]
        return cid

    def branches(self):
        """Open branches between nodes (endpoints or junction clusters), and pure cycles.

        Adjacent junction pixels form one node, so the handful of pixels at a
        thinned T or X junction do not produce spurious micro-branches.
        """
        n = len(self.ys)
        visited = np.zeros(n, dtype=bool)
        is_node = self.degree != 2
        cid = self.clusters()
        used_edges = set()
        out = []
        for start in np.flatnonzero(is_node):
            visited[start] = True
            if self.degree[start] == 0:
                out.append(([start], False))
                continue
            for first in self.neighbours(start):
                if (start, first) in used_edges:
                    continue
                if is_node[first] and cid[first] == cid[start]:
                    continue
                path = [start]
                prev, cur = start, first
                while True:
                    path.append(cur)
                    visited[cur] = True
                    if is_node[cur]:
                        break
                    nxt = [m for m in self.neighbours(cur) if m != prev]
                    if not nxt:
                        break
                    prev, cur = cur, nxt[0]
                used_edges.add((path[-1], path[-2]))
                used_edges.add((start, first))
                if cid[path[-1]] == cid[start] and len(path) <= 3:
                    # a pixel bridging two junction pixels of the same cluster
                    continue
                out.append((path, False))
        for start in np.flatnonzero(~visited):
            if visited[start]:
                continue
            path = [start]
            visited[start] = True
            prev, cur = start, self.neighbours(start)[0]
            while cur != start:
                path.append(cur)
                visited[cur] = True
                nxt = [m for m in self.neighbours(cur) if m != prev]
                prev, cur = cur, nxt[0]
            out.append((path, True))
        return out


def _prune(skel, min_branch_px):
    skel = _remove_redundant(skel)
    while True:
        g = _SkeletonGraph(skel)
        if len(g.ys) == 0:
            return skel
        cid = g.clusters()
        doomed = []
        incident = {}
        spurs = {}
        for path, closed in g.branches():
            if not closed:
                for end in (path[0], path[-1]):
                    incident[cid[end]] = incident.get(cid[end], 0) + 1
            length = g.path_length(path + [path[0]] if closed else path)
            if length >= min_branch_px:
                continue
            ends = g.degree[path[0]], g.degree[path[-1]]
            if closed or max(ends) <= 1:
                # isolated short piece
                doomed.extend(path)
            elif min(ends) == 1:
                if g.degree[path[0]] == 1:
                    junction, body = path[-1], path[:-1]
                else:
                    junction, body = path[0], path[1:]
                spurs.setdefault(cid[junction], []).append((length, body))
        for junction, items in spurs.items():
            if len(items) == incident.get(junction, 0):
                # every arm is short: keep the longest so the junction is not orphaned
                items = sorted(items, key=lambda t: t[0])[:-1]
            for _, body in items:
                doomed.extend(body)
        if not doomed:
            return skel
        doomed = np.unique(np.asarray(doomed))
        skel = skel.copy()
        skel[g.ys[doomed], g.xs[doomed]] = False
        skel = _remove_redundant(skel)


def _smooth(points, closed, half):
    n = len(points)
    if n < 3 or half < 1:
        return points.astype(float)
    if closed:
        h = min(half, (n - 1) // 2)
        padded = np.vstack([points[-h:], points, points[:h]]).astype(float)
        c = np.cumsum(np.vstack([np.zeros((1, 2)), padded]), axis=0)
        win = 2 * h + 1
        return (c[win:] - c[:-win]) / win
    out = points.astype(float).copy()
    c = np.cumsum(np.vstack([np.zeros((1, 2)), points.astype(float)]), axis=0)
    for i in range(1, n - 1):
        h = min(half, i, n - 1 - i)
        out[i] = (c[i + h + 1] - c[i - h]) / (2 * h + 1)
    return out


def order_and_prune(skeleton, min_branch_nm, nm_per_pixel, image_id="", gbm=None):
    """Turn a skeleton pixel set into ordered polylines with short spurs removed.

    Points are lightly smoothed along the chain (a 7-point running mean) so arc
    length and tangents are not dominated by the 8-connected staircase. If ``gbm``
    is given, any smoothed point that leaves the GBM falls back to its pixel centre.
    """
    skeleton = np.asarray(skeleton, dtype=bool)
    if not skeleton.any():
        raise EmptyStructure("skeleton is empty")
    r0, r1, c0, c1 = _bbox(skeleton)
    skel = _prune(skeleton[r0:r1, c0:c1], min_branch_nm / nm_per_pixel)
    g = _SkeletonGraph(skel)
    polylines = []
    for path, closed in g.branches():
        if len(path) < 2:
            continue
        raw = np.column_stack([g.xs[path] + c0, g.ys[path] + r0]).astype(float)
        pts = _smooth(raw, closed, SMOOTH_HALF_WINDOW)
        if gbm is not None:
            cols = np.floor(pts[:, 0] + 0.5).astype(int)
            rows = np.floor(pts[:, 1] + 0.5).astype(int)
            off = ~gbm[rows, cols]
            pts[off] = raw[off]
        polylines.append(Polyline(points=pts, closed=closed))
    if not polylines:
        raise EmptyStructure("pruning removed the whole skeleton")
    return Centerline(polylines=tuple(polylines), image_id=image_id)


def extract_centerline(mask: LabelMask, nm_per_pixel, min_branch_nm=300.0, image_id=""):
    skel = skeletonize_gbm(mask)
    return order_and_prune(skel, min_branch_nm, nm_per_pixel, image_id=image_id,
                           gbm=mask.labels == Label.GBM)


# --------------------------------------------------------------------------
# sampling and cropping
# --------------------------------------------------------------------------

def _tangent(points, closed, j, half=TANGENT_HALF_WINDOW):
    n = len(points)
    if closed:
        d = points[(j + half) % n] - points[(j - half) % n]
    else:
        d = points[min(j + half, n - 1)] - points[max(j - half, 0)]
    norm = math.hypot(d[0], d[1])
    if norm == 0:
        return 1.0, 0.0
    return d[0] / norm, d[1] / norm


def sample_centerline(cl: Centerline, stride_nm, nm_per_pixel):
    """Points every ``stride_nm`` of arc length along each polyline, from arc 0."""
    if not stride_nm > 0:
        raise ValueError("stride must be positive")
    stride_px = stride_nm / nm_per_pixel
    samples = []
    for pid, pl in enumerate(cl.polylines):
        pts = pl.points
        seg = pl.segment_lengths()
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        length = cum[-1]
        ratio = length / stride_px
        k = int(math.floor(ratio + 1e-9))
        count = k if pl.closed else k + 1
        count = max(count, 1)
        verts = np.vstack([pts, pts[:1]]) if pl.closed else pts
        n = len(pts)
        for m in range(count):
            s = min(m * stride_px, length)
            i = int(np.searchsorted(cum, s, side="right") - 1)
            i = min(max(i, 0), len(seg) - 1) if len(seg) else 0
            if len(seg) and seg[i] > 0:
                u = (s - cum[i]) / seg[i]
                p = verts[i] + u * (verts[i + 1] - verts[i])
                j = i if u < 0.5 else i + 1
            else:
                p = verts[i]
                j = i
            tx, ty = _tangent(pts, pl.closed, j % n if pl.closed else min(j, n - 1))
            samples.append(SamplePoint(
                x=float(p[0]), y=float(p[1]), tx=tx, ty=ty,
                polyline_id=pid, arc_position_nm=s * nm_per_pixel,
            ))
    return samples


def window_side_px(window_nm, nm_per_pixel):
    return int(round(window_nm / nm_per_pixel))


def crop_patches(image_meta: ImageMeta, samples, window_nm):
    """Square windows centred on each sample; drops windows mostly outside the image."""
    side = window_side_px(window_nm, image_meta.nm_per_pixel)
    if side < 1:
        raise ValueError("window smaller than one pixel")
    patches = []
    for s in samples:
        cx, cy = pixel_of(s.x, s.y)
        x0, y0 = cx - side // 2, cy - side // 2
        x1, y1 = x0 + side, y0 + side
        cx0, cy0 = max(x0, 0), max(y0, 0)
        cx1, cy1 = min(x1, image_meta.width_px), min(y1, image_meta.height_px)
        inside = max(cx1 - cx0, 0) * max(cy1 - cy0, 0)
        if inside < MIN_INSIDE_FRACTION * side * side:
            continue
        if not (0 <= cx < image_meta.width_px and 0 <= cy < image_meta.height_px):
            continue
        patches.append(GfbPatch(sample=s, window_px=side, x0=cx0, y0=cy0, x1=cx1, y1=cy1))
    return patches
