"""
Rotated 3D box geometry.

Boxes are 7-vectors ``[cx, cy, cz, dx, dy, dz, yaw]`` in a right-handed,
z-up frame; ``yaw`` rotates about +z starting from +x. Batches are
``(N, 7)`` float64 arrays. The heavy lifting (footprint clipping, IoU
matrices) runs in numba kernels; the public functions are thin wrappers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numba
import numpy as np

__all__ = [
    "Box3D",
    "Polygon2D",
    "AREA_EPS",
    "wrap_angle",
    "as_boxes",
    "bev_footprint",
    "polygon_area",
    "convex_intersection",
    "iou_bev",
    "iou_3d",
    "iou_matrix",
    "nms_rotated",
    "axis_aligned_iou_3d",
]

# Intersections smaller than this (m^2) are treated as empty.
AREA_EPS = 1e-12

TWO_PI = 2.0 * math.pi


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into [-pi, pi)."""
    a = np.asarray(angle, dtype=np.float64)
    out = np.mod(a + math.pi, TWO_PI) - math.pi
    # fmod rounding can land exactly on +pi
    out = np.where(out >= math.pi, out - TWO_PI, out)
    # in-range values pass through bit-for-bit
    out = np.where((a >= -math.pi) & (a < math.pi), a, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box. Sizes are full extents; yaw is wrapped on construction."""

    cx: float
    cy: float
    cz: float
    dx: float
    dy: float
    dz: float
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.yaw)
        if not all(math.isfinite(float(v)) for v in vals):
            raise ValueError(f"box fields must be finite, got {vals}")
        if min(self.dx, self.dy, self.dz) <= 0:
            raise ValueError(f"box sizes must be positive, got {(self.dx, self.dy, self.dz)}")
        for name in ("cx", "cy", "cz", "dx", "dy", "dz"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.yaw],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, arr) -> "Box3D":
        arr = np.asarray(arr, dtype=np.float64).reshape(7)
        return cls(*arr.tolist())

    @property
    def volume(self) -> float:
        return self.dx * self.dy * self.dz


@dataclass(frozen=True)
class Polygon2D:
    """Convex polygon with counter-clockwise vertices; zero vertices means empty."""

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)


BoxLike = Union[Box3D, Sequence[float], np.ndarray]


def as_boxes(boxes) -> np.ndarray:
    """Coerce a Box3D, a sequence of Box3D, a ``Detections`` batch or an array into ``(N, 7)``."""
    if isinstance(boxes, Box3D):
        return boxes.to_array()[None, :]
    if hasattr(boxes, "boxes"):
        return as_boxes(boxes.boxes)
    if isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64, copy=False)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.shape[-1] != 7 and arr.size == 0:
            return np.zeros((0, 7))
        if arr.ndim != 2 or arr.shape[1] != 7:
            raise ValueError(f"expected (N, 7) boxes, got shape {arr.shape}")
        return arr
    boxes = list(boxes)
    if not boxes:
        return np.zeros((0, 7))
    if isinstance(boxes[0], Box3D):
        return np.stack([b.to_array() for b in boxes])
    return as_boxes(np.asarray(boxes, dtype=np.float64))


def _one_box(box: BoxLike) -> np.ndarray:
    arr = as_boxes(box)
    if arr.shape[0] != 1:
        raise ValueError("expected a single box")
    return arr[0]


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _footprint(box, out):
    c = math.cos(box[6])
    s = math.sin(box[6])
    hx = 0.5 * box[3]
    hy = 0.5 * box[4]
    # local corners in CCW order
    lx = (-hx, hx, hx, -hx)
    ly = (-hy, -hy, hy, hy)
    for k in range(4):
        out[k, 0] = box[0] + c * lx[k] - s * ly[k]
        out[k, 1] = box[1] + s * lx[k] + c * ly[k]


@numba.njit(cache=True)
def _shoelace(poly, n):
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        acc += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
    return 0.5 * acc


@numba.njit(cache=True)
def _clip_convex(subj, ns, clip, nc, out, tmp):
    """Sutherland-Hodgman: clip ``subj`` by the CCW convex ``clip``; returns count in ``out``."""
    n = ns
    for i in range(n):
        out[i, 0] = subj[i, 0]
        out[i, 1] = subj[i, 1]
    for j in range(nc):
        if n == 0:
            break
        ax = clip[j, 0]
        ay = clip[j, 1]
        jn = j + 1 if j + 1 < nc else 0
        ex = clip[jn, 0] - ax
        ey = clip[jn, 1] - ay
        m = 0
        px = out[n - 1, 0]
        py = out[n - 1, 1]
        dp = ex * (py - ay) - ey * (px - ax)
        for i in range(n):
            qx = out[i, 0]
            qy = out[i, 1]
            dq = ex * (qy - ay) - ey * (qx - ax)
            if dq >= 0.0:
                if dp < 0.0:
                    t = dp / (dp - dq)
                    tmp[m, 0] = px + t * (qx - px)
                    tmp[m, 1] = py + t * (qy - py)
                    m += 1
                tmp[m, 0] = qx
                tmp[m, 1] = qy
                m += 1
            elif dp >= 0.0:
                t = dp / (dp - dq)
                tmp[m, 0] = px + t * (qx - px)
                tmp[m, 1] = py + t * (qy - py)
                m += 1
            px = qx
            py = qy
            dp = dq
        for i in range(m):
            out[i, 0] = tmp[i, 0]
            out[i, 1] = tmp[i, 1]
        n = m
    return n


@numba.njit(cache=True)
def _box_less(a, b):
    for k in range(7):
        if a[k] < b[k]:
            return True
        if a[k] > b[k]:
            return False
    return False


@numba.njit(cache=True)
def _pair_iou(a, b, use3d, pa, pb, buf, tmp):
    same = True
    for k in range(7):
        if a[k] != b[k]:
            same = False
            break
    if same:
        return 1.0
    # canonical operand order keeps iou(a, b) == iou(b, a) bit for bit
    if _box_less(b, a):
        a, b = b, a
    ddx = a[0] - b[0]
    ddy = a[1] - b[1]
    ra = 0.5 * math.sqrt(a[3] * a[3] + a[4] * a[4])
    rb = 0.5 * math.sqrt(b[3] * b[3] + b[4] * b[4])
    if ddx * ddx + ddy * ddy >= (ra + rb) * (ra + rb):
        return 0.0
    h = 1.0
    if use3d:
        top = min(a[2] + 0.5 * a[5], b[2] + 0.5 * b[5])
        bot = max(a[2] - 0.5 * a[5], b[2] - 0.5 * b[5])
        h = top - bot
        if h <= 0.0:
            return 0.0
    _footprint(a, pa)
    _footprint(b, pb)
    n = _clip_convex(pa, 4, pb, 4, buf, tmp)
    area = _shoelace(buf, n)
    if area < 1e-12:
        return 0.0
    if use3d:
        inter = area * h
        union = a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter
    else:
        inter = area
        union = a[3] * a[4] + b[3] * b[4] - inter
    iou = inter / union
    if iou > 1.0:
        return 1.0
    if iou < 0.0:
        return 0.0
    return iou


@numba.njit(cache=True)
def _iou_matrix_kernel(rows, cols, use3d):
    n = rows.shape[0]
    m = cols.shape[0]
    out = np.zeros((n, m))
    pa = np.empty((4, 2))
    pb = np.empty((4, 2))
    buf = np.empty((10, 2))
    tmp = np.empty((10, 2))
    for i in range(n):
        for j in range(m):
            out[i, j] = _pair_iou(rows[i], cols[j], use3d, pa, pb, buf, tmp)
    return out


@numba.njit(cache=True)
def _iou_pairs_kernel(a, b, use3d):
    n = a.shape[0]
    out = np.zeros(n)
    pa = np.empty((4, 2))
    pb = np.empty((4, 2))
    buf = np.empty((10, 2))
    tmp = np.empty((10, 2))
    for i in range(n):
        out[i] = _pair_iou(a[i], b[i], use3d, pa, pb, buf, tmp)
    return out


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def polygon_area(vertices) -> float:
    """Signed shoelace area (positive for CCW)."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def bev_footprint(box: BoxLike) -> Polygon2D:
    """Ground-plane rectangle of ``box`` as a CCW polygon."""
    out = np.empty((4, 2))
    _footprint(_one_box(box), out)
    return Polygon2D(out)


def _ccw(v: np.ndarray) -> np.ndarray:
    return v[::-1].copy() if polygon_area(v) < 0 else v


def convex_intersection(a: Polygon2D, b: Polygon2D) -> Polygon2D:
    """Intersection of two convex polygons; the empty polygon when they only touch or miss."""
    va = _ccw(np.ascontiguousarray(a.vertices, dtype=np.float64))
    vb = _ccw(np.ascontiguousarray(b.vertices, dtype=np.float64))
    if len(va) < 3 or len(vb) < 3:
        return Polygon2D()
    size = len(va) + len(vb) + 2
    buf = np.empty((size, 2))
    tmp = np.empty((size, 2))
    n = _clip_convex(va, len(va), vb, len(vb), buf, tmp)
    poly = buf[:n]
    if _shoelace(buf, n) < AREA_EPS:
        return Polygon2D()
    # drop repeated vertices produced by boundary contacts
    keep = np.abs(poly - np.roll(poly, 1, axis=0)).max(axis=1) > 1e-12
    return Polygon2D(poly[keep])


def iou_bev(a: BoxLike, b: BoxLike) -> float:
    """Footprint IoU of two boxes."""
    return float(_iou_pairs_kernel(as_boxes(a)[:1], as_boxes(b)[:1], False)[0])


def iou_3d(a: BoxLike, b: BoxLike) -> float:
    """Volumetric IoU of two rotated boxes (BEV overlap times vertical overlap)."""
    return float(_iou_pairs_kernel(as_boxes(a)[:1], as_boxes(b)[:1], True)[0])


def iou_matrix(rows, cols, mode: str = "3d") -> np.ndarray:
    """Pairwise IoU, shape ``(len(rows), len(cols))``.

    ``mode`` is ``"3d"`` (default) or ``"bev"``.
    """
    if mode not in ("3d", "bev"):
        raise ValueError(f"mode must be '3d' or 'bev', got {mode!r}")
    r = np.ascontiguousarray(as_boxes(rows))
    c = np.ascontiguousarray(as_boxes(cols))
    if r.shape[0] == 0 or c.shape[0] == 0:
        return np.zeros((r.shape[0], c.shape[0]))
    return _iou_matrix_kernel(r, c, mode == "3d")


def iou_pairs(a, b, mode: str = "3d") -> np.ndarray:
    """Row-aligned IoU: ``out[i] = iou(a[i], b[i])``."""
    a = np.ascontiguousarray(as_boxes(a))
    b = np.ascontiguousarray(as_boxes(b))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        return np.zeros(0)
    return _iou_pairs_kernel(a, b, mode == "3d")


def axis_aligned_iou_3d(a: BoxLike, b: BoxLike) -> float:
    """Closed-form IoU ignoring yaw; a reference for the yaw == 0 case."""
    a, b = _one_box(a), _one_box(b)
    lo = np.maximum(a[:3] - a[3:6] / 2, b[:3] - b[3:6] / 2)
    hi = np.minimum(a[:3] + a[3:6] / 2, b[:3] + b[3:6] / 2)
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    union = float(np.prod(a[3:6]) + np.prod(b[3:6]) - inter)
    return inter / union


def nms_rotated(dets, iou_threshold: float, scores=None, labels=None) -> list:
    """Class-wise greedy NMS on footprint IoU.

    ``dets`` is a ``Detections`` container (or a sequence of ``Detection``);
    alternatively pass a box array together with ``scores`` and ``labels``.
    Returns kept indices ordered by descending score, ties by index.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    if scores is None:
        from .detections import Detections

        d = Detections.coerce(dets)
        boxes, scores, labels = d.boxes, d.scores, d.labels
    else:
        boxes = as_boxes(dets)
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.zeros(len(scores), dtype=np.int64) if labels is None else np.asarray(labels)
    n = len(scores)
    if n == 0:
        return []
    order = np.lexsort((np.arange(n), -scores))
    boxes = np.ascontiguousarray(boxes[order])
    labels = labels[order]
    alive = np.ones(n, dtype=bool)
    keep = []
    # only compare each kept box with still-alive, same-class, lower-ranked boxes
    for r in range(n):
        if not alive[r]:
            continue
        keep.append(int(order[r]))
        cand = np.flatnonzero(alive[r + 1:] & (labels[r + 1:] == labels[r])) + r + 1
        if len(cand):
            iou = _iou_matrix_kernel(boxes[r:r + 1], boxes[cand], False)[0]
            alive[cand[iou > iou_threshold]] = False
    return keep


def boxes_to_list(boxes: Iterable) -> list:
    return [Box3D.from_array(b) for b in as_boxes(boxes)]
