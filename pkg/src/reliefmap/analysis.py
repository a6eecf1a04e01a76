"""Per-cell terrain analysis: normals, traversability and overlap clearance."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .grid import CellIndex, ElevationMap, cell_centers


class InvalidModel(ValueError):
    """Malformed convolutional filter description."""


@dataclass(frozen=True)
class TraversabilityParams:
    slope_max: float = math.radians(30.0)
    step_max: float = 0.2
    roughness_max: float = 0.05
    window: int = 3
    weights: tuple[float, float, float] = (0.4, 0.3, 0.3)

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if min(self.slope_max, self.step_max, self.roughness_max) <= 0:
            raise ValueError("slope_max, step_max and roughness_max must be > 0")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be 3 non-negative values summing to 1")


@dataclass(frozen=True)
class OverlapParams:
    radius: float = 1.5
    height_threshold: float = 1.0
    # height of the sensor above the robot base, used when no base height is given
    sensor_height: float = 0.0

    def __post_init__(self):
        if not (self.radius > 0 and self.height_threshold > 0):
            raise ValueError("radius and height_threshold must be > 0")


ACTIVATIONS = ("relu", "sigmoid", "identity")


@dataclass(frozen=True)
class ConvLayer:
    kernel: np.ndarray
    bias: float = 0.0
    activation: str = "identity"


@dataclass
class ConvNetSpec:
    layers: list[ConvLayer] = field(default_factory=list)
    input_layer: str = "elevation"

    def validate(self) -> None:
        if not self.layers:
            raise InvalidModel("model has no layers")
        for i, layer in enumerate(self.layers):
            k = np.asarray(layer.kernel)
            if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
                raise InvalidModel(f"layer {i}: kernel must be an odd square matrix, got shape {k.shape}")
            if not np.all(np.isfinite(k)) or not math.isfinite(layer.bias):
                raise InvalidModel(f"layer {i}: non-finite weights")
            if layer.activation not in ACTIVATIONS:
                raise InvalidModel(f"layer {i}: unknown activation {layer.activation!r}")

    def dumps(self) -> str:
        lines = [f"layers: {len(self.layers)}"]
        for layer in self.layers:
            k = np.asarray(layer.kernel, dtype=float)
            lines.append(f"kernel: {k.shape[0]}")
            lines.extend(" ".join(repr(float(v)) for v in row) for row in k)
            lines.append(f"bias: {float(layer.bias)!r}")
            lines.append(f"activation: {layer.activation}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, input_layer: str = "elevation") -> "ConvNetSpec":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        pos = 0

        def take(key):
            nonlocal pos
            if pos >= len(lines):
                raise InvalidModel(f"unexpected end of model file, expected {key!r}")
            name, _, value = lines[pos].partition(":")
            if name.strip() != key:
                raise InvalidModel(f"line {pos + 1}: expected {key!r}, got {lines[pos]!r}")
            pos += 1
            return value.strip()

        try:
            n = int(take("layers"))
            layers = []
            for _ in range(n):
                k = int(take("kernel"))
                rows = []
                for _ in range(k):
                    if pos >= len(lines):
                        raise InvalidModel("unexpected end of model file inside kernel")
                    row = [float(v) for v in lines[pos].split()]
                    if len(row) != k:
                        raise InvalidModel(f"kernel row has {len(row)} values, expected {k}")
                    rows.append(row)
                    pos += 1
                bias = float(take("bias"))
                act = take("activation")
                layers.append(ConvLayer(np.array(rows), bias, act))
        except ValueError as exc:
            if isinstance(exc, InvalidModel):
                raise
            raise InvalidModel(str(exc)) from exc
        if pos != len(lines):
            raise InvalidModel(f"trailing content after {n} layers")
        spec = cls(layers, input_layer)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path, input_layer: str = "elevation") -> "ConvNetSpec":
        return cls.loads(Path(path).read_text(), input_layer)


def _normals_from_elevation(h: np.ndarray, valid: np.ndarray, res: float):
    def grad(axis):
        hp = np.full_like(h, np.nan)
        hm = np.full_like(h, np.nan)
        vp = np.zeros_like(valid)
        vm = np.zeros_like(valid)
        sl_hi = [slice(None)] * 2
        sl_lo = [slice(None)] * 2
        sl_hi[axis] = slice(1, None)
        sl_lo[axis] = slice(None, -1)
        # hp[i] = h[i+1], hm[i] = h[i-1]
        hp[tuple(sl_lo)] = h[tuple(sl_hi)]
        vp[tuple(sl_lo)] = valid[tuple(sl_hi)]
        hm[tuple(sl_hi)] = h[tuple(sl_lo)]
        vm[tuple(sl_hi)] = valid[tuple(sl_lo)]
        g = np.full_like(h, np.nan)
        both = vp & vm
        g[both] = (hp[both] - hm[both]) / (2 * res)
        only_p = vp & ~vm
        g[only_p] = (hp[only_p] - h[only_p]) / res
        only_m = vm & ~vp
        g[only_m] = (h[only_m] - hm[only_m]) / res
        return g, vp | vm

    gx, okx = grad(1)
    gy, oky = grad(0)
    ok = valid & okx & oky
    n = np.stack([-gx, -gy, np.ones_like(h)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    n[~ok] = np.nan
    return n, ok


def compute_normals(emap: ElevationMap) -> np.ndarray:
    """Surface normals by central differences (one-sided where a neighbor is
    missing). Cells lacking a valid neighbor along either axis get none.

    Writes the ``normal_*`` and ``normal_valid`` layers and returns the
    (height, width, 3) normal array.
    """
    n, ok = _normals_from_elevation(emap.elevation, emap.valid, emap.spec.resolution)
    L = emap.layers
    L["normal_x"][...] = n[..., 0]
    L["normal_y"][...] = n[..., 1]
    L["normal_z"][...] = n[..., 2]
    L["normal_valid"][...] = ok
    return n


def _window_stack(h: np.ndarray, valid: np.ndarray, window: int):
    r = window // 2
    hp = np.pad(np.where(valid, h, np.nan), r, constant_values=np.nan)
    return np.lib.stride_tricks.sliding_window_view(hp, (window, window)).reshape(*h.shape, -1)


def traversability_scores(emap: ElevationMap, params: TraversabilityParams):
    """Slope, step and roughness scores in [0, 1] (nan where not defined)."""
    h, valid = emap.elevation, emap.valid
    nz = np.clip(emap.layers["normal_z"], -1.0, 1.0)
    s1 = np.clip(1.0 - np.arccos(nz) / params.slope_max, 0.0, 1.0)
    s1 = np.where(emap.layers["normal_valid"], s1, 0.0)
    win = _window_stack(h, valid, params.window)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        step = np.nanmax(np.abs(win - h[..., None]), axis=-1)
        rough = np.nanstd(win, axis=-1)
    s2 = np.clip(1.0 - step / params.step_max, 0.0, 1.0)
    s3 = np.clip(1.0 - rough / params.roughness_max, 0.0, 1.0)
    for s in (s1, s2, s3):
        s[~valid] = np.nan
    return s1, s2, s3


def traversability_geometric(emap: ElevationMap, params: TraversabilityParams) -> np.ndarray:
    """Weighted slope/step/roughness score per valid cell; writes the layer."""
    s1, s2, s3 = traversability_scores(emap, params)
    w1, w2, w3 = params.weights
    t = np.clip(w1 * s1 + w2 * s2 + w3 * s3, 0.0, 1.0)
    emap.layers["traversability"][...] = t
    return t


def fill_nearest_valid(layer: np.ndarray, valid: np.ndarray) -> np.ndarray:
    if valid.all():
        return layer.copy()
    if not valid.any():
        raise ValueError("input layer has no valid cells")
    _, (ir, ic) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return layer[ir, ic]


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    return x


def conv_filter_inference(emap_or_layer, spec: ConvNetSpec, valid: np.ndarray | None = None) -> np.ndarray:
    """Run a small stack of 2D convolutions over a map layer.

    Invalid cells take the value of the nearest valid cell; borders are
    replicated. Each layer computes a cross-correlation, adds its bias and
    applies its activation. The result is clamped to [0, 1].
    """
    spec.validate()
    if isinstance(emap_or_layer, ElevationMap):
        if spec.input_layer not in emap_or_layer.layers:
            raise InvalidModel(f"unknown input layer {spec.input_layer!r}")
        x = np.asarray(emap_or_layer[spec.input_layer], dtype=np.float64)
        valid = emap_or_layer.valid if valid is None else valid
    else:
        x = np.asarray(emap_or_layer, dtype=np.float64)
        valid = np.isfinite(x) if valid is None else valid
    x = fill_nearest_valid(x, valid & np.isfinite(x))
    for layer in spec.layers:
        x = ndimage.correlate(x, np.asarray(layer.kernel, dtype=np.float64), mode="nearest")
        x = _activate(x + layer.bias, layer.activation)
    return np.clip(x, 0.0, 1.0)


def overlap_clearance(emap: ElevationMap, robot_xy, robot_z: float, params: OverlapParams) -> list[CellIndex]:
    """Invalidate nearby cells whose height differs from the robot's by more
    than the threshold (stale estimates from another floor)."""
    X, Y = cell_centers(emap.spec)
    near = np.hypot(X - robot_xy[0], Y - robot_xy[1]) <= params.radius
    with np.errstate(invalid="ignore"):
        far_height = np.abs(emap.elevation - robot_z) > params.height_threshold
    clear = near & emap.valid & far_height
    emap.invalidate(clear, clear_upper_bound=True)
    return [CellIndex(int(r), int(c)) for r, c in zip(*np.nonzero(clear))]
