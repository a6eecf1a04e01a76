"""Locomotion-oriented map products: minimum inpainting, smoothing chains and
planar region segmentation with polygon boundaries."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import ElevationMap, GridSpec, cell_centers

FOUR = ndimage.generate_binary_structure(2, 1)
EIGHT_OFFSETS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]


class NothingToInpaint(ValueError):
    pass


class DegeneratePlane(ValueError):
    pass


# ---------------------------------------------------------------- inpainting

def inpaint_min(layer: np.ndarray, validity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fill every 4-connected hole with the minimum of its 8-adjacent valid border.

    Returns ``(filled, new_validity)``. Holes without any valid neighbor stay
    invalid.
    """
    validity = np.asarray(validity, dtype=bool)
    if not validity.any():
        raise NothingToInpaint("layer has no valid cells")
    labels, n = ndimage.label(~validity, structure=FOUR)
    out = np.where(validity, layer, np.nan).astype(np.float64)
    if n == 0:
        return out, validity.copy()
    H, W = layer.shape
    mins = np.full(n + 1, np.inf)
    for dr, dc in EIGHT_OFFSETS:
        # valid cell (r, c) next to hole cell (r + dr, c + dc)
        src = (slice(max(-dr, 0), H - max(dr, 0)), slice(max(-dc, 0), W - max(dc, 0)))
        dst = (slice(max(dr, 0), H + min(dr, 0)), slice(max(dc, 0), W + min(dc, 0)))
        lab = labels[dst]
        sel = validity[src] & (lab > 0)
        np.minimum.at(mins, lab[sel], layer[src][sel])
    fill = mins[labels]
    filled = (labels > 0) & np.isfinite(fill)
    out[filled] = fill[filled]
    return out, validity | filled


# ----------------------------------------------------------------- smoothing

@dataclass(frozen=True)
class FilterStep:
    kind: str  # gaussian | box | median | min_inpaint
    radius: int = 1
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "box", "median", "min_inpaint"):
            raise ValueError(f"unknown filter {self.kind!r}")
        if self.kind != "min_inpaint" and self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError("sigma must be > 0")


@dataclass(frozen=True)
class FilterChainSpec:
    steps: tuple[FilterStep, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "FilterChainSpec":
        """``"min_inpaint; median(1); gaussian(1.5, 2); box(1)"``."""
        steps = []
        for tok in filter(None, (t.strip() for t in text.split(";"))):
            name, _, rest = tok.partition("(")
            args = [float(a) for a in rest.rstrip(")").split(",") if a.strip()]
            name = name.strip()
            if name == "gaussian":
                sigma, radius = args[0], int(args[1]) if len(args) > 1 else max(1, math.ceil(3 * args[0]))
                steps.append(FilterStep("gaussian", radius, sigma))
            elif name in ("box", "median"):
                steps.append(FilterStep(name, int(args[0]) if args else 1))
            else:
                steps.append(FilterStep(name))
        return cls(tuple(steps))


def _kernel(step: FilterStep) -> np.ndarray:
    r = step.radius
    if step.kind == "box":
        return np.ones((2 * r + 1, 2 * r + 1))
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return np.exp(-(x * x + y * y) / (2.0 * step.sigma ** 2))


def _normalized_filter(layer, valid, kernel):
    # filter deviations from a global reference so a constant layer maps to itself exactly
    ref = float(np.median(layer[valid]))
    w = valid.astype(np.float64)
    num = ndimage.correlate(np.where(valid, layer - ref, 0.0), kernel, mode="constant", cval=0.0)
    den = ndimage.correlate(w, kernel, mode="constant", cval=0.0)
    out = np.full(layer.shape, np.nan)
    out[valid] = ref + num[valid] / den[valid]
    return out


def _median_filter(layer, valid, radius):
    k = 2 * radius + 1
    padded = np.pad(np.where(valid, layer, np.nan), radius, constant_values=np.nan)
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(win.reshape(*layer.shape, -1), axis=-1)
    return np.where(valid, med, np.nan)


def smooth_chain(layer: np.ndarray, validity: np.ndarray, chain: FilterChainSpec) -> tuple[np.ndarray, np.ndarray]:
    """Apply filter steps in order. Invalid cells carry no weight.

    Returns ``(layer, validity)``; validity only changes through
    ``min_inpaint`` steps.
    """
    out = np.where(validity, layer, np.nan).astype(np.float64)
    valid = np.asarray(validity, dtype=bool).copy()
    for step in chain.steps:
        if step.kind == "min_inpaint":
            out, valid = inpaint_min(out, valid)
        elif not valid.any():
            continue
        elif step.kind == "median":
            out = _median_filter(out, valid, step.radius)
        else:
            out = _normalized_filter(out, valid, _kernel(step))
    return out, valid


# ------------------------------------------------------------ plane fitting

def fit_plane(points) -> tuple[np.ndarray, float, float]:
    """Total-least-squares plane through (N, 3) points.

    Returns ``(n, d, rms)`` with ``n . p = d`` on the plane, ``n_z > 0``.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(P) < 3:
        raise DegeneratePlane("need at least 3 points")
    c = P.mean(axis=0)
    Q = P - c
    xy = Q[:, :2]
    ev_xy = np.linalg.eigvalsh(xy.T @ xy)
    if ev_xy[0] <= 1e-12 * max(ev_xy[1], 1e-300):
        raise DegeneratePlane("points are collinear in xy")
    w, V = np.linalg.eigh(Q.T @ Q)
    n = V[:, 0]
    if n[2] < 0:
        n = -n
    if n[2] <= 0:
        raise DegeneratePlane("vertical plane")
    n = n / np.linalg.norm(n)
    d = float(n @ c)
    rms = float(np.sqrt(np.mean((Q @ n) ** 2)))
    return n, d, rms


# -------------------------------------------------------------- polygons

def _trace_loops(mask: np.ndarray) -> list[np.ndarray]:
    """Closed boundary loops of ``mask`` along cell corners, region on the
    left. Vertices are (col, row) corner coordinates; outer loops are
    counterclockwise, hole loops clockwise."""
    H, W = mask.shape
    m = np.pad(mask, 1)
    inner = m[1:-1, 1:-1]
    edges = {}
    rr, cc = np.nonzero(inner & ~m[:-2, 1:-1])  # below empty
    for r, c in zip(rr, cc):
        edges.setdefault((c, r), []).append((c + 1, r))
    rr, cc = np.nonzero(inner & ~m[1:-1, 2:])  # right empty
    for r, c in zip(rr, cc):
        edges.setdefault((c + 1, r), []).append((c + 1, r + 1))
    rr, cc = np.nonzero(inner & ~m[2:, 1:-1])  # above empty
    for r, c in zip(rr, cc):
        edges.setdefault((c + 1, r + 1), []).append((c, r + 1))
    rr, cc = np.nonzero(inner & ~m[1:-1, :-2])  # left empty
    for r, c in zip(rr, cc):
        edges.setdefault((c, r + 1), []).append((c, r))

    # start only at single-exit vertices so a loop never closes early at a pinch
    loops = []
    for start in sorted(v for v, outs in edges.items() if len(outs) == 1):
        if not edges[start]:
            continue
        loop = [start]
        prev, cur = start, edges[start].pop()
        while cur != start:
            outs = edges[cur]
            if len(outs) == 1:
                nxt = outs.pop()
            else:
                # pinch vertex: take the left turn, which keeps diagonal neighbors apart
                din = (cur[0] - prev[0], cur[1] - prev[1])
                k = max(range(len(outs)),
                        key=lambda i: din[0] * (outs[i][1] - cur[1]) - din[1] * (outs[i][0] - cur[0]))
                nxt = outs.pop(k)
            loop.append(cur)
            prev, cur = cur, nxt
        loops.append(np.array(loop, dtype=np.int64))
    return loops


def _drop_collinear(loop: np.ndarray) -> np.ndarray:
    n = len(loop)
    keep = []
    for i in range(n):
        a, b, c = loop[i - 1], loop[i], loop[(i + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            keep.append(i)
    return loop[keep]


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _dp(points: np.ndarray, tol: float) -> list[int]:
    # Douglas-Peucker over an open chain; returns kept indices
    keep = [0, len(points) - 1]
    stack = [(0, len(points) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = points[i], points[j]
        ab = b - a
        L = math.hypot(ab[0], ab[1])
        seg = points[i + 1:j] - a
        if L == 0:
            dist = np.hypot(seg[:, 0], seg[:, 1])
        else:
            dist = np.abs(ab[0] * seg[:, 1] - ab[1] * seg[:, 0]) / L
        k = int(np.argmax(dist))
        if dist[k] > tol:
            keep.append(i + 1 + k)
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return sorted(keep)


def simplify_polygon(poly: np.ndarray, tol: float) -> np.ndarray:
    """Douglas-Peucker for a closed ring; never drops below 3 vertices."""
    if tol <= 0 or len(poly) <= 4:
        return poly
    far = int(np.argmax(np.hypot(*(poly - poly[0]).T)))
    ring = np.vstack([poly, poly[:1]])
    first = _dp(ring[:far + 1], tol)
    second = [far + i for i in _dp(ring[far:], tol)]
    idx = sorted(set(first) | set(second))
    idx = [i for i in idx if i < len(poly)]
    return poly[idx] if len(idx) >= 3 else poly


def mask_polygons(mask: np.ndarray, spec: GridSpec, simplify_tol: float = 0.0, exact: bool = False):
    """Outer boundary and holes of a 4-connected cell mask in world xy.

    With ``exact`` the rectilinear corner polygons are returned untouched;
    otherwise collinear vertices are dropped and the rings simplified.
    """
    ox, oy = spec.origin
    res = spec.resolution
    outers, holes = [], []
    for loop in _trace_loops(mask):
        if not exact:
            loop = _drop_collinear(loop)
        world = np.column_stack([ox + loop[:, 0] * res, oy + loop[:, 1] * res])
        if not exact:
            world = simplify_polygon(world, simplify_tol)
        (outers if polygon_area(loop.astype(float)) > 0 else holes).append(world)
    if not outers:
        return None, holes
    outer = max(outers, key=polygon_area)
    return outer, holes


# ------------------------------------------------------------- segmentation

@dataclass(frozen=True)
class PlaneSegParams:
    normal_angle_max: float = math.radians(20.0)
    dist_max: float = 0.02
    min_region_cells: int = 10
    polygon_simplify_tol: float = 0.01
    # cells steeper than this are not footholds and never join a region
    inclination_max: float = math.radians(40.0)

    def __post_init__(self):
        if (min(self.normal_angle_max, self.dist_max, self.polygon_simplify_tol, self.inclination_max) <= 0
                or self.min_region_cells < 1):
            raise ValueError("segmentation parameters must be positive")


@dataclass
class PlanarRegion:
    normal: np.ndarray
    offset: float
    outer: np.ndarray
    holes: list[np.ndarray] = field(default_factory=list)
    cell_count: int = 0
    cells: np.ndarray | None = None  # (N, 2) row, col
    rms: float = 0.0

    @property
    def area(self) -> float:
        return polygon_area(self.outer) + sum(polygon_area(h) for h in self.holes)


def _membership(P, N, n, d, cos_max, dist_max):
    return (N @ n >= cos_max) & (np.abs(P @ n - d) <= dist_max)


def segment_planes(emap: ElevationMap, params: PlaneSegParams, exact_polygons: bool = False) -> list[PlanarRegion]:
    """Greedy region growing over cells with normals.

    Seeds are visited in order of decreasing ``n_z`` (row-major tie break).
    A 4-neighbor joins when its normal is within ``normal_angle_max`` of the
    region plane and its center lies within ``dist_max`` of it; the plane is
    refit after every growth round. A final audit removes members that no
    longer satisfy the criteria against the final plane. Cells inclined by
    more than ``inclination_max`` are left out entirely.
    """
    spec = emap.spec
    H, W = spec.shape
    h = emap.elevation
    N = np.nan_to_num(emap.normal)
    usable = emap.valid & emap.layers["normal_valid"] & (N[..., 2] >= math.cos(params.inclination_max))
    X, Y = cell_centers(spec)
    P = np.stack([X, Y, np.where(usable, h, 0.0)], axis=-1)
    cos_max = math.cos(params.normal_angle_max)

    available = usable.copy()
    tried = np.zeros_like(usable)
    nz = np.where(usable, N[..., 2], -np.inf).ravel()
    order = np.argsort(-nz, kind="stable")
    regions = []

    for flat in order:
        if not np.isfinite(nz[flat]):
            break
        r0, c0 = divmod(int(flat), W)
        if not available[r0, c0] or tried[r0, c0]:
            continue
        tried[r0, c0] = True
        n = N[r0, c0].copy()
        d = float(n @ P[r0, c0])
        region = np.zeros((H, W), bool)
        region[r0, c0] = True
        while True:
            front = ndimage.binary_dilation(region, FOUR) & available & ~region
            if not front.any():
                break
            fr, fc = np.nonzero(front)
            ok = _membership(P[fr, fc], N[fr, fc], n, d, cos_max, params.dist_max)
            if not ok.any():
                break
            region[fr[ok], fc[ok]] = True
            try:
                n, d, _ = fit_plane(P[region])
            except DegeneratePlane:
                pass
        # audit against the final plane
        fit_ok = True
        while True:
            rr, cc = np.nonzero(region)
            ok = _membership(P[rr, cc], N[rr, cc], n, d, cos_max, params.dist_max)
            if ok.all():
                break
            region[rr[~ok], cc[~ok]] = False
            lab, k = ndimage.label(region, FOUR)
            if k == 0:
                break
            keep = lab[r0, c0] if lab[r0, c0] else 1 + int(np.argmax(np.bincount(lab.ravel())[1:]))
            region = lab == keep
            try:
                n, d, _ = fit_plane(P[region])
            except DegeneratePlane:
                fit_ok = False
                break
        count = int(region.sum())
        if count < params.min_region_cells or not fit_ok:
            continue
        try:
            n, d, rms = fit_plane(P[region])
        except DegeneratePlane:
            continue
        if not _membership(P[region], N[region], n, d, cos_max, params.dist_max).all():
            continue
        available &= ~region
        outer, holes = mask_polygons(region, spec, params.polygon_simplify_tol, exact=exact_polygons)
        regions.append(PlanarRegion(n, d, outer, holes, count, np.argwhere(region), rms))
    return regions


def regions_to_text(regions: list[PlanarRegion]) -> str:
    lines = [f"regions: {len(regions)}"]
    for i, reg in enumerate(regions):
        n = [float(v) for v in reg.normal]
        lines.append(f"region {i} cells {reg.cell_count}")
        lines.append(f"plane {n[0]!r} {n[1]!r} {n[2]!r} {float(reg.offset)!r}")
        lines.append("outer:")
        lines.extend(f"{x!r} {y!r}" for x, y in reg.outer.tolist())
        for hole in reg.holes:
            lines.append("hole:")
            lines.extend(f"{x!r} {y!r}" for x, y in hole.tolist())
        lines.append("end")
    return "\n".join(lines) + "\n"


def regions_from_text(text: str) -> list[PlanarRegion]:
    regions = []
    cur = None
    target = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("regions:"):
            continue
        parts = line.split()
        try:
            if parts[0] == "region":
                cur = {"cells": int(parts[3]), "outer": [], "holes": []}
            elif parts[0] == "plane":
                cur["plane"] = [float(v) for v in parts[1:5]]
            elif line == "outer:":
                target = cur["outer"]
            elif line == "hole:":
                cur["holes"].append([])
                target = cur["holes"][-1]
            elif line == "end":
                pl = cur["plane"]
                regions.append(PlanarRegion(np.array(pl[:3]), pl[3], np.array(cur["outer"]).reshape(-1, 2),
                                            [np.array(h).reshape(-1, 2) for h in cur["holes"]], cur["cells"]))
                cur = target = None
            else:
                target.append([float(parts[0]), float(parts[1])])
        except (IndexError, ValueError, TypeError, KeyError) as exc:
            raise ValueError(f"line {lineno}: malformed region document: {raw!r}") from exc
    return regions
