"""Slow, straightforward reference implementations used as test oracles.

They are written independently of the package code paths they check.
"""
import math
from fractions import Fraction
from itertools import permutations

import numpy as np


def point_in_polygon(px, py, verts):
    """Even-odd ray cast to +x; y half-open, crossings strictly right of the point."""
    inside = False
    n = len(verts)
    for i in range(n):
        xa, ya = verts[i]
        xb, yb = verts[(i + 1) % n]
        if (ya <= py < yb) or (yb <= py < ya):
            x_cross = xa + (py - ya) * (xb - xa) / (yb - ya)
            if x_cross > px:
                inside = not inside
    return inside


def brute_rasterize(verts, width, height):
    verts = [(min(max(x, 0.0), width), min(max(y, 0.0), height)) for x, y in verts]
    out = np.zeros((height, width), dtype=bool)
    for y in range(height):
        for x in range(width):
            out[y, x] = point_in_polygon(x + 0.5, y + 0.5, verts)
    return out


def half_up(v):
    return int(math.floor(v + Fraction(1, 2)))


def bilinear_ref(img, out_w, out_h):
    """Exact rational bilinear interpolation at half-pixel centres."""
    in_h, in_w = img.shape

    def source(o, n_out, n_in):
        s = Fraction(2 * o + 1, 2) * Fraction(n_in, n_out) - Fraction(1, 2)
        s = min(max(s, Fraction(0)), Fraction(n_in - 1))
        lo = math.floor(s)
        return lo, min(lo + 1, n_in - 1), s - lo

    out = np.zeros((out_h, out_w), dtype=np.uint8)
    for oy in range(out_h):
        y0, y1, fy = source(oy, out_h, in_h)
        for ox in range(out_w):
            x0, x1, fx = source(ox, out_w, in_w)
            a, b = int(img[y0, x0]), int(img[y0, x1])
            c, d = int(img[y1, x0]), int(img[y1, x1])
            v = (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy
            out[oy, ox] = min(255, max(0, half_up(v)))
    return out


def _lut_from_hist(hist):
    total = sum(hist)
    cum, running = [], 0
    for h in hist:
        running += h
        cum.append(running)
    c_min = next(c for c in cum if c > 0)
    if c_min == total:
        return None
    lut = []
    for c in cum:
        v = Fraction(255 * (c - c_min), total - c_min)
        lut.append(min(255, max(0, math.floor(v + Fraction(1, 2)))))
    return lut


def equalize_ref(img):
    hist = [0] * 256
    for v in img.ravel():
        hist[int(v)] += 1
    lut = _lut_from_hist(hist)
    if lut is None:
        return img.copy()
    return np.array([[lut[int(v)] for v in row] for row in img], dtype=np.uint8)


def clahe_ref(img, tiles_x, tiles_y, clip_limit):
    h, w = img.shape

    def spans(n, k):
        size = n // k
        s = [[i * size, (i + 1) * size] for i in range(k)]
        s[-1][1] = n
        return s

    ys, xs = spans(h, tiles_y), spans(w, tiles_x)
    luts = {}
    for ty, (y0, y1) in enumerate(ys):
        for tx, (x0, x1) in enumerate(xs):
            hist = [0] * 256
            for y in range(y0, y1):
                for x in range(x0, x1):
                    hist[int(img[y, x])] += 1
            if sum(1 for c in hist if c) == 1:
                luts[ty, tx] = list(range(256))
                continue
            n = (y1 - y0) * (x1 - x0)
            limit = max(1, int(clip_limit * n / 256))
            excess = 0
            for i in range(256):
                if hist[i] > limit:
                    excess += hist[i] - limit
                    hist[i] = limit
            for i in range(256):
                hist[i] += excess // 256
            for i in range(excess % 256):
                hist[i] += 1
            luts[ty, tx] = _lut_from_hist(hist)

    def neighbours(pos, tile_spans):
        centres = [Fraction(a + b, 2) for a, b in tile_spans]
        if pos <= centres[0]:
            return 0, 0, Fraction(0)
        if pos >= centres[-1]:
            last = len(centres) - 1
            return last, last, Fraction(0)
        for i in range(len(centres) - 1):
            if centres[i] <= pos < centres[i + 1]:
                return i, i + 1, (pos - centres[i]) / (centres[i + 1] - centres[i])

    out = np.zeros_like(img)
    for y in range(h):
        ya, yb, wy = neighbours(y + Fraction(1, 2), ys)
        for x in range(w):
            xa, xb, wx = neighbours(x + Fraction(1, 2), xs)
            v = int(img[y, x])
            top = luts[ya, xa][v] * (1 - wx) + luts[ya, xb][v] * wx
            bottom = luts[yb, xa][v] * (1 - wx) + luts[yb, xb][v] * wx
            out[y, x] = min(255, max(0, half_up(top * (1 - wy) + bottom * wy)))
    return out


def envelope_ap_exact(flags_by_rank, num_gt):
    """AP in exact rationals: envelope precision at each distinct recall level
    times the width of the recall interval ending there."""
    points, tp = [], 0
    for k, hit in enumerate(flags_by_rank, start=1):
        tp += bool(hit)
        points.append((Fraction(tp, k), Fraction(tp, num_gt)))
    levels = sorted({r for _, r in points})
    area, prev = Fraction(0), Fraction(0)
    for level in levels:
        best = max(p for p, r in points if r >= level)
        area += best * (level - prev)
        prev = level
    return area


def max_true_positives(iou_matrix, threshold):
    """Best achievable TP count over all one-to-one assignments (small inputs)."""
    n_det, n_gt = iou_matrix.shape
    best = 0
    if n_det >= n_gt:
        for perm in permutations(range(n_det), n_gt):
            best = max(best, sum(iou_matrix[d, g] > threshold for g, d in enumerate(perm)))
    else:
        for perm in permutations(range(n_gt), n_det):
            best = max(best, sum(iou_matrix[d, g] > threshold for d, g in enumerate(perm)))
    return best


def brute_rasterize_grid(verts, width, height):
    """Same even-odd ray cast as ``point_in_polygon``, evaluated at every
    pixel centre at once; used where the per-pixel loop is too slow."""
    v = [(min(max(x, 0.0), width), min(max(y, 0.0), height)) for x, y in verts]
    px, py = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    inside = np.zeros((height, width), dtype=bool)
    for i in range(len(v)):
        (xa, ya), (xb, yb) = v[i], v[(i + 1) % len(v)]
        if ya == yb:
            continue
        spans = ((ya <= py) & (py < yb)) | ((yb <= py) & (py < ya))
        x_cross = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= spans & (x_cross > px)
    return inside
