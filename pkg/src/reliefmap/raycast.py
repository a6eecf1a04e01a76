"""Exact grid traversal of sensor rays, visibility cleanup and the upper-bound layer.

Rays are walked cell by cell in the xy plane (boundary-crossing walk, no
fixed step), so shallow rays never skip cells. Every traversed cell gets the
ray height at the midpoint of the ray's passage through that cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .grid import CellIndex, ElevationMap, GridSpec


@dataclass(frozen=True)
class CleanupParams:
    alpha_n: float = 0.1
    t_free: float = 1.0
    cleanup_enabled: bool = True
    upper_bound_enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha_n <= 1.0:
            raise ValueError("alpha_n must lie in [0, 1]")
        if self.t_free < 0:
            raise ValueError("t_free must be >= 0")


class RayCell(NamedTuple):
    index: CellIndex
    ray_height: float


@numba.njit(cache=True)
def _walk(ax, ay, az, bx, by, bz, ox, oy, res, W, H, rows, cols, zs):
    """Cells crossed by segment a->b (clipped to the grid), endpoint cell excluded.

    Writes into the scratch arrays and returns the number of cells.
    """
    gx0 = (ax - ox) / res
    gy0 = (ay - oy) / res
    dx = (bx - ox) / res - gx0
    dy = (by - oy) / res - gy0
    dz = bz - az
    if dx == 0.0 and dy == 0.0:
        c = math.floor(gx0)
        r = math.floor(gy0)
        if 0 <= c < W and 0 <= r < H:
            rows[0] = r
            cols[0] = c
            zs[0] = az + 0.5 * dz
            return 1
        return 0
    # Liang-Barsky clip of t in [0, 1] against [0, W] x [0, H]
    t0 = 0.0
    t1 = 1.0
    for p, q, upper in ((-dx, gx0, False), (dx, W - gx0, True), (-dy, gy0, False), (dy, H - gy0, True)):
        if p == 0.0:
            # the upper map edge is exclusive: a segment lying on it is outside
            if q < 0.0 or (upper and q == 0.0):
                return 0
        else:
            t = q / p
            if p < 0.0:
                if t > t0:
                    t0 = t
            elif t < t1:
                t1 = t
    if t0 >= t1:
        return 0
    sx = gx0 + t0 * dx
    sy = gy0 + t0 * dy
    c = min(max(math.floor(sx), 0), W - 1)
    r = min(max(math.floor(sy), 0), H - 1)
    ec = math.floor(gx0 + dx)
    er = math.floor(gy0 + dy)
    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    adx = abs(dx)
    ady = abs(dy)
    n = 0
    t_in = t0
    while True:
        # distance (in cells) from the start to the next column / row boundary;
        # compared by cross-multiplication so exact corner hits tie exactly
        if dx != 0.0:
            nx = ((c + 1) - gx0) if dx > 0 else (gx0 - c)
        else:
            nx = np.inf
        if dy != 0.0:
            ny = ((r + 1) - gy0) if dy > 0 else (gy0 - r)
        else:
            ny = np.inf
        if dx == 0.0:
            x_first = False
            y_first = True
        elif dy == 0.0:
            x_first = True
            y_first = False
        else:
            lhs = nx * ady
            rhs = ny * adx
            x_first = lhs <= rhs
            y_first = rhs <= lhs
        t_x = nx / adx if dx != 0.0 else np.inf
        t_y = ny / ady if dy != 0.0 else np.inf
        t_out = min(t_x if x_first else t_y, t1)
        if c == ec and r == er:
            break
        if t_out > t_in:  # skip cells only touched at a single point
            rows[n] = r
            cols[n] = c
            zs[n] = az + 0.5 * (t_in + t_out) * dz
            n += 1
        if t_out >= t1:
            break
        if x_first:
            c += step_c
        if y_first:
            r += step_r
        if c < 0 or c >= W or r < 0 or r >= H:
            break
        t_in = t_out
    return n


def traverse_cells(origin, endpoint, spec: GridSpec) -> list[RayCell]:
    """Ordered cells whose footprint the xy projection of origin->endpoint crosses.

    The endpoint's own cell is excluded. A vertical ray yields the origin
    cell alone.
    """
    ox, oy = spec.origin
    cap = spec.width + spec.height + 4
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    zs = np.empty(cap, np.float64)
    n = _walk(float(origin[0]), float(origin[1]), float(origin[2]),
              float(endpoint[0]), float(endpoint[1]), float(endpoint[2]),
              ox, oy, spec.resolution, spec.width, spec.height, rows, cols, zs)
    return [RayCell(CellIndex(int(rows[i]), int(cols[i])), float(zs[i])) for i in range(n)]


@numba.njit(cache=True)
def _cast_chunk(lo, hi, origin, ends, ox, oy, res, W, H,
                valid, elev, var, last_update, nx, ny, nz, nvalid,
                now, t_free, alpha_n, do_cleanup, remove, ub_cand):
    cap = W + H + 4
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    zs = np.empty(cap, np.float64)
    ax, ay, az = origin[0], origin[1], origin[2]
    for i in range(lo, hi):
        bx, by, bz = ends[i, 0], ends[i, 1], ends[i, 2]
        n = _walk(ax, ay, az, bx, by, bz, ox, oy, res, W, H, rows, cols, zs)
        if n == 0:
            continue
        L = math.sqrt((bx - ax) ** 2 + (by - ay) ** 2 + (bz - az) ** 2)
        if L > 0.0:
            rx, ry, rz = (bx - ax) / L, (by - ay) / L, (bz - az) / L
        else:
            rx, ry, rz = 0.0, 0.0, -1.0
        for k in range(n):
            j = rows[k] * W + cols[k]
            z = zs[k]
            if z < ub_cand[j]:
                ub_cand[j] = z
            if do_cleanup and valid[j] and not remove[j]:
                if (z < elev[j] - math.sqrt(var[j])
                        and now - last_update[j] > t_free
                        and nvalid[j]
                        and abs(rx * nx[j] + ry * ny[j] + rz * nz[j]) > alpha_n):
                    remove[j] = True


@numba.njit(cache=True, parallel=True)
def _cast_parallel(origin, ends, ox, oy, res, W, H,
                   valid, elev, var, last_update, nx, ny, nz, nvalid,
                   now, t_free, alpha_n, do_cleanup, nchunks):
    # Per-chunk buffers merged with min / or: order independent, so the
    # result equals the sequential pass exactly.
    ncell = W * H
    removes = np.zeros((nchunks, ncell), np.bool_)
    cands = np.full((nchunks, ncell), np.inf)
    npts = ends.shape[0]
    per = (npts + nchunks - 1) // nchunks
    for c in numba.prange(nchunks):
        lo = c * per
        hi = min(npts, lo + per)
        if lo < hi:
            _cast_chunk(lo, hi, origin, ends, ox, oy, res, W, H, valid, elev, var, last_update,
                        nx, ny, nz, nvalid, now, t_free, alpha_n, do_cleanup, removes[c], cands[c])
    remove = np.zeros(ncell, np.bool_)
    cand = np.full(ncell, np.inf)
    for c in range(nchunks):
        for j in range(ncell):
            if removes[c, j]:
                remove[j] = True
            if cands[c, j] < cand[j]:
                cand[j] = cands[c, j]
    return remove, cand


def cast_rays(emap: ElevationMap, origin, endpoints: np.ndarray, params: CleanupParams,
              now: float, parallel: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Walk every ray against a snapshot of the map.

    Returns ``(remove, ub_candidate)`` as (height, width) arrays: cells that
    satisfy all visibility-cleanup gates for at least one ray, and the lowest
    ray height seen per cell (``inf`` where no ray passed).
    """
    spec = emap.spec
    ox, oy = spec.origin
    L = emap.layers
    args = (
        L["valid"].ravel(), L["elevation"].ravel(), L["variance"].ravel(), L["last_update"].ravel(),
        L["normal_x"].ravel(), L["normal_y"].ravel(), L["normal_z"].ravel(), L["normal_valid"].ravel(),
        float(now), float(params.t_free), float(params.alpha_n), bool(params.cleanup_enabled),
    )
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    ends = np.ascontiguousarray(endpoints, dtype=np.float64).reshape(-1, 3)
    if parallel:
        nchunks = max(1, min(numba.get_num_threads(), len(ends)))
        remove, cand = _cast_parallel(origin, ends, ox, oy, spec.resolution, spec.width, spec.height,
                                      *args, nchunks)
    else:
        remove = np.zeros(spec.width * spec.height, np.bool_)
        cand = np.full(spec.width * spec.height, np.inf)
        _cast_chunk(0, len(ends), origin, ends, ox, oy, spec.resolution, spec.width, spec.height,
                    *args, remove, cand)
    return remove.reshape(spec.shape), cand.reshape(spec.shape)


def visibility_cleanup(emap: ElevationMap, origin, endpoint, params: CleanupParams, now: float) -> list[CellIndex]:
    """Invalidate the cells a single ray demonstrably passed through."""
    remove, _ = cast_rays(emap, origin, np.asarray(endpoint, dtype=np.float64).reshape(1, 3),
                          CleanupParams(params.alpha_n, params.t_free, True, False), now)
    remove &= emap.valid
    emap.invalidate(remove)
    return [CellIndex(int(r), int(c)) for r, c in zip(*np.nonzero(remove))]


def update_upper_bound(emap: ElevationMap, traversed) -> None:
    """Running minimum of ray heights over cells without a height estimate.

    ``traversed`` is either a sequence of :class:`RayCell` or a (height,
    width) array of candidate heights (``inf`` where no ray passed).
    """
    if isinstance(traversed, np.ndarray):
        cand = traversed
    else:
        cand = np.full(emap.spec.shape, np.inf)
        for cell in traversed:
            r, c = cell.index
            cand[r, c] = min(cand[r, c], cell.ray_height)
    L = emap.layers
    hit = np.isfinite(cand) & ~L["valid"]
    ub, ubv = L["upper_bound"], L["upper_bound_valid"]
    prior = np.where(ubv, ub, np.inf)
    ub[hit] = np.minimum(prior[hit], cand[hit])
    ubv[hit] = True
