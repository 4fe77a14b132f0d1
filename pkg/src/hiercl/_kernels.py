"""Rotated-box kernels with a numba path and a pure-numpy path.

Boxes are ``(n, 5)`` float arrays of ``(cx, cy, w, h, theta)``. The numba
kernels clip one rectangle against the other (Sutherland-Hodgman); the
numpy kernels gather candidate vertices (contained corners plus edge
crossings) for all pairs at once and take the hull area by angular sort.
"""
import math

import numpy as np

from ._accel import NUMBA_ENABLED, njit

CLIP_EPS = 1e-9


# -- numba path -------------------------------------------------------------

@njit(fastmath=False)
def _corners_nb(b, out):
    c = math.cos(b[4])
    s = math.sin(b[4])
    hw = 0.5 * b[2]
    hh = 0.5 * b[3]
    lx = (-hw, hw, hw, -hw)
    ly = (-hh, -hh, hh, hh)
    for k in range(4):
        out[k, 0] = b[0] + c * lx[k] - s * ly[k]
        out[k, 1] = b[1] + s * lx[k] + c * ly[k]


@njit(fastmath=False)
def _clip_area_nb(pa, pb, buf_in, buf_out):
    # intersection area of two CCW convex quads via Sutherland-Hodgman
    nin = 4
    for k in range(4):
        buf_in[k, 0] = pa[k, 0]
        buf_in[k, 1] = pa[k, 1]
    for e in range(4):
        ax = pb[e, 0]
        ay = pb[e, 1]
        bx = pb[(e + 1) % 4, 0]
        by = pb[(e + 1) % 4, 1]
        ex = bx - ax
        ey = by - ay
        scale = math.sqrt(ex * ex + ey * ey)
        nout = 0
        for k in range(nin):
            px = buf_in[k, 0]
            py = buf_in[k, 1]
            qx = buf_in[(k + 1) % nin, 0]
            qy = buf_in[(k + 1) % nin, 1]
            sp = (ex * (py - ay) - ey * (px - ax)) / scale
            sq = (ex * (qy - ay) - ey * (qx - ax)) / scale
            pin = sp >= -CLIP_EPS
            qin = sq >= -CLIP_EPS
            if pin:
                buf_out[nout, 0] = px
                buf_out[nout, 1] = py
                nout += 1
            if pin != qin:
                t = sp / (sp - sq)
                buf_out[nout, 0] = px + t * (qx - px)
                buf_out[nout, 1] = py + t * (qy - py)
                nout += 1
        nin = nout
        if nin < 3:
            return 0.0
        for k in range(nin):
            buf_in[k, 0] = buf_out[k, 0]
            buf_in[k, 1] = buf_out[k, 1]
    area = 0.0
    for k in range(nin):
        area += buf_in[k, 0] * buf_in[(k + 1) % nin, 1] - buf_in[(k + 1) % nin, 0] * buf_in[k, 1]
    return max(0.5 * area, 0.0)


@njit(fastmath=False)
def _iou_one_nb(a, b, pa, pb, buf_in, buf_out):
    area_a = a[2] * a[3]
    area_b = b[2] * b[3]
    # bounding-circle rejection
    dx = a[0] - b[0]
    dy = a[1] - b[1]
    ra = 0.5 * math.sqrt(a[2] * a[2] + a[3] * a[3])
    rb = 0.5 * math.sqrt(b[2] * b[2] + b[3] * b[3])
    if dx * dx + dy * dy > (ra + rb) * (ra + rb):
        return 0.0
    _corners_nb(a, pa)
    _corners_nb(b, pb)
    inter = _clip_area_nb(pa, pb, buf_in, buf_out)
    inter = min(inter, area_a, area_b)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@njit(fastmath=False)
def iou_pairs_numba(A, B):
    n = A.shape[0]
    out = np.empty(n)
    pa = np.empty((4, 2))
    pb = np.empty((4, 2))
    buf_in = np.empty((64, 2))
    buf_out = np.empty((64, 2))
    for i in range(n):
        out[i] = _iou_one_nb(A[i], B[i], pa, pb, buf_in, buf_out)
    return out


@njit(fastmath=False)
def iou_matrix_numba(A, B):
    n = A.shape[0]
    m = B.shape[0]
    out = np.empty((n, m))
    pa = np.empty((4, 2))
    pb = np.empty((4, 2))
    buf_in = np.empty((64, 2))
    buf_out = np.empty((64, 2))
    for i in range(n):
        for j in range(m):
            out[i, j] = _iou_one_nb(A[i], B[j], pa, pb, buf_in, buf_out)
    return out


@njit(fastmath=True)
def raster_iou_pairs_numba(A, B, side):
    n = A.shape[0]
    out = np.empty(n)
    ca = np.empty((4, 2))
    cb = np.empty((4, 2))
    for i in range(n):
        a = A[i]
        b = B[i]
        _corners_nb(a, ca)
        _corners_nb(b, cb)
        x0 = min(ca[:, 0].min(), cb[:, 0].min())
        x1 = max(ca[:, 0].max(), cb[:, 0].max())
        y0 = min(ca[:, 1].min(), cb[:, 1].min())
        y1 = max(ca[:, 1].max(), cb[:, 1].max())
        sx = (x1 - x0) / side
        sy = (y1 - y0) / side
        cosa = math.cos(a[4])
        sina = math.sin(a[4])
        cosb = math.cos(b[4])
        sinb = math.sin(b[4])
        hwa = 0.5 * a[2]
        hha = 0.5 * a[3]
        hwb = 0.5 * b[2]
        hhb = 0.5 * b[3]
        n_inter = 0
        n_union = 0
        for r in range(side):
            y = y0 + (r + 0.5) * sy
            dya = y - a[1]
            dyb = y - b[1]
            for k in range(side):
                x = x0 + (k + 0.5) * sx
                dxa = x - a[0]
                dxb = x - b[0]
                ina = (abs(dxa * cosa + dya * sina) <= hwa) and (abs(-dxa * sina + dya * cosa) <= hha)
                inb = (abs(dxb * cosb + dyb * sinb) <= hwb) and (abs(-dxb * sinb + dyb * cosb) <= hhb)
                n_inter += ina and inb
                n_union += ina or inb
        out[i] = n_inter / n_union if n_union > 0 else 0.0
    return out


# -- numpy path -------------------------------------------------------------

def corners_numpy(boxes):
    boxes = np.asarray(boxes, dtype=np.float64)
    c = np.cos(boxes[:, 4])[:, None]
    s = np.sin(boxes[:, 4])[:, None]
    hw = 0.5 * boxes[:, 2:3]
    hh = 0.5 * boxes[:, 3:4]
    lx = np.array([-1.0, 1.0, 1.0, -1.0]) * hw
    ly = np.array([-1.0, -1.0, 1.0, 1.0]) * hh
    x = boxes[:, 0:1] + c * lx - s * ly
    y = boxes[:, 1:2] + s * lx + c * ly
    return np.stack([x, y], axis=-1)


def _inside_numpy(pts, boxes):
    # pts (n, k, 2) tested against boxes (n, 5); ties count as inside
    d = pts - boxes[:, None, 0:2]
    c = np.cos(boxes[:, 4])[:, None]
    s = np.sin(boxes[:, 4])[:, None]
    u = d[..., 0] * c + d[..., 1] * s
    v = -d[..., 0] * s + d[..., 1] * c
    return (np.abs(u) <= 0.5 * boxes[:, 2:3] + CLIP_EPS) & (np.abs(v) <= 0.5 * boxes[:, 3:4] + CLIP_EPS)


def iou_pairs_numpy(A, B):
    A = np.asarray(A, dtype=np.float64).reshape(-1, 5)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 5)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    ca, cb = corners_numpy(A), corners_numpy(B)
    in_a = _inside_numpy(ca, B)
    in_b = _inside_numpy(cb, A)

    p = ca[:, :, None, :]
    r = (np.roll(ca, -1, axis=1) - ca)[:, :, None, :]
    q = cb[:, None, :, :]
    s = (np.roll(cb, -1, axis=1) - cb)[:, None, :, :]
    rxs = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    qp = q - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / rxs
        u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / rxs
    hit = (np.abs(rxs) > 1e-14) & (t >= -CLIP_EPS) & (t <= 1 + CLIP_EPS) & (u >= -CLIP_EPS) & (u <= 1 + CLIP_EPS)
    t = np.where(hit, t, 0.0)
    cross = (p + t[..., None] * r).reshape(n, 16, 2)

    pts = np.concatenate([ca, cb, cross], axis=1)  # (n, 24, 2)
    mask = np.concatenate([in_a, in_b, hit.reshape(n, 16)], axis=1)
    cnt = mask.sum(axis=1)
    centroid = (pts * mask[..., None]).sum(axis=1) / np.maximum(cnt, 1)[:, None]
    rel = pts - centroid[:, None, :]
    ang = np.where(mask, np.arctan2(rel[..., 1], rel[..., 0]), np.inf)
    order = np.argsort(ang, axis=1, kind="stable")
    sp = np.take_along_axis(pts, order[..., None], axis=1)
    sm = np.take_along_axis(mask, order, axis=1)
    # pad unused slots with the first vertex so they add nothing to the shoelace sum
    sp = np.where(sm[..., None], sp, sp[:, :1, :])
    nxt = np.roll(sp, -1, axis=1)
    area = 0.5 * np.sum(sp[..., 0] * nxt[..., 1] - nxt[..., 0] * sp[..., 1], axis=1)
    area = np.where(cnt >= 3, np.maximum(area, 0.0), 0.0)
    area_a = A[:, 2] * A[:, 3]
    area_b = B[:, 2] * B[:, 3]
    inter = np.minimum(area, np.minimum(area_a, area_b))
    union = area_a + area_b - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def iou_matrix_numpy(A, B):
    A = np.asarray(A, dtype=np.float64).reshape(-1, 5)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 5)
    n, m = A.shape[0], B.shape[0]
    if n == 0 or m == 0:
        return np.zeros((n, m))
    return iou_pairs_numpy(np.repeat(A, m, axis=0), np.tile(B, (n, 1))).reshape(n, m)


def raster_iou_pairs_numpy(A, B, side, chunk=250_000):
    A = np.asarray(A, dtype=np.float64).reshape(-1, 5)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 5)
    out = np.empty(A.shape[0])
    centers = (np.arange(side) + 0.5) / side
    for i in range(A.shape[0]):
        pts = np.concatenate([corners_numpy(A[i:i + 1])[0], corners_numpy(B[i:i + 1])[0]])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        xs = lo[0] + centers * (hi[0] - lo[0])
        ys = lo[1] + centers * (hi[1] - lo[1])
        n_inter = n_union = 0
        rows = max(1, chunk // side)
        for r0 in range(0, side, rows):
            gx, gy = np.meshgrid(xs, ys[r0:r0 + rows])
            g = np.stack([gx.ravel(), gy.ravel()], axis=-1)[None]
            ina = _inside_strict(g, A[i:i + 1])
            inb = _inside_strict(g, B[i:i + 1])
            n_inter += int(np.count_nonzero(ina & inb))
            n_union += int(np.count_nonzero(ina | inb))
        out[i] = n_inter / n_union if n_union else 0.0
    return out


def _inside_strict(pts, boxes):
    d = pts - boxes[:, None, 0:2]
    c = np.cos(boxes[:, 4])[:, None]
    s = np.sin(boxes[:, 4])[:, None]
    u = d[..., 0] * c + d[..., 1] * s
    v = -d[..., 0] * s + d[..., 1] * c
    return (np.abs(u) <= 0.5 * boxes[:, 2:3]) & (np.abs(v) <= 0.5 * boxes[:, 3:4])


# -- dispatch ---------------------------------------------------------------

def _as_boxes(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1, 5))


def iou_pairs(A, B):
    A, B = _as_boxes(A), _as_boxes(B)
    if A.shape != B.shape:
        raise ValueError("iou_pairs needs equally many boxes on both sides")
    return iou_pairs_numba(A, B) if NUMBA_ENABLED else iou_pairs_numpy(A, B)


def iou_matrix(A, B):
    A, B = _as_boxes(A), _as_boxes(B)
    return iou_matrix_numba(A, B) if NUMBA_ENABLED else iou_matrix_numpy(A, B)


def raster_iou_pairs(A, B, side):
    A, B = _as_boxes(A), _as_boxes(B)
    if NUMBA_ENABLED:
        return raster_iou_pairs_numba(A, B, int(side))
    return raster_iou_pairs_numpy(A, B, int(side))
