"""File formats (snapshots, point clouds, run configs) and the run harnesses
behind the command line: simulate, replay, bench and export.

All numeric values are written with ``repr`` so text files round-trip
floats bit-exactly.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, drift, raycast, sim
from .grid import LAYERS, ElevationMap, GridSpec
from .integration import PHASES, ScanStats, UpdateParams, integrate_scan
from .postprocess import FilterChainSpec, PlaneSegParams
from .sensing import ExclusionParams, PointCloud, RigidTransform, SensorNoiseParams

SNAPSHOT_MAGIC = "reliefmap-snapshot v1"


class DataError(ValueError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class SnapshotError(DataError):
    pass


class ConfigError(DataError):
    pass


class UnknownLayer(DataError):
    pass


# ------------------------------------------------------------------ snapshots

def _fmt(v) -> str:
    return repr(float(v))


def save_snapshot(emap: ElevationMap, path, layers=None) -> Path:
    """Write ``emap`` as a text snapshot. ``layers`` defaults to all layers."""
    names = list(LAYERS) if layers is None else list(layers)
    for name in names:
        if name not in LAYERS:
            raise UnknownLayer(f"unknown layer {name!r}; valid layers: {', '.join(LAYERS)}")
    spec = emap.spec
    out = io.StringIO()
    out.write(f"{SNAPSHOT_MAGIC}\n")
    out.write(f"resolution: {_fmt(spec.resolution)}\n")
    out.write(f"width: {spec.width}\n")
    out.write(f"height: {spec.height}\n")
    out.write(f"center_x: {_fmt(spec.center[0])}\n")
    out.write(f"center_y: {_fmt(spec.center[1])}\n")
    out.write(f"layers: {','.join(names)}\n")
    for name in names:
        arr = emap.layers[name]
        out.write(f"layer: {name}\n")
        if arr.dtype == np.float64:
            for row in arr:
                out.write(" ".join(map(_fmt, row)) + "\n")
        else:
            for row in arr.astype(np.int64):
                out.write(" ".join(map(str, row)) + "\n")
    path = Path(path)
    path.write_text(out.getvalue())
    return path


def _header_value(lines, i: int, key: str) -> str:
    if i >= len(lines):
        raise SnapshotError(f"line {i + 1}: unexpected end of file, expected '{key}:'")
    name, sep, value = lines[i].partition(":")
    if not sep or name.strip() != key:
        raise SnapshotError(f"line {i + 1}: expected '{key}:', got {lines[i]!r}")
    return value.strip()


def load_snapshot(path) -> ElevationMap:
    """Read a snapshot written by :func:`save_snapshot`.

    Layers absent from the file keep their fresh-cell defaults; if ``valid``
    is absent it is derived from finite elevations.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != SNAPSHOT_MAGIC:
        got = lines[0].strip() if lines else "<empty file>"
        raise SnapshotError(f"line 1: expected {SNAPSHOT_MAGIC!r}, got {got!r}")
    try:
        res = float(_header_value(lines, 1, "resolution"))
        width = int(_header_value(lines, 2, "width"))
        height = int(_header_value(lines, 3, "height"))
        cx = float(_header_value(lines, 4, "center_x"))
        cy = float(_header_value(lines, 5, "center_y"))
    except ValueError as exc:
        if isinstance(exc, SnapshotError):
            raise
        raise SnapshotError(f"malformed header value: {exc}") from exc
    try:
        spec = GridSpec(res, width, height, (cx, cy))
    except ValueError as exc:
        raise SnapshotError(f"invalid grid header: {exc}") from exc
    names = [n.strip() for n in _header_value(lines, 6, "layers").split(",") if n.strip()]
    for name in names:
        if name not in LAYERS:
            raise SnapshotError(f"line 7: unknown layer {name!r}; valid layers: {', '.join(LAYERS)}")
    if len(set(names)) != len(names):
        raise SnapshotError("line 7: duplicate layer names")

    layers = {}
    i = 7
    for name in names:
        got = _header_value(lines, i, "layer")
        if got != name:
            raise SnapshotError(f"line {i + 1}: expected layer {name!r}, got {got!r}")
        i += 1
        dtype = LAYERS[name][0]
        arr = np.empty((height, width), dtype=dtype)
        for r in range(height):
            if i >= len(lines):
                raise SnapshotError(f"line {i + 1}: unexpected end of file in layer {name!r} (row {r} of {height})")
            tokens = lines[i].split()
            if len(tokens) != width:
                raise SnapshotError(f"line {i + 1}: layer {name!r} row {r} has {len(tokens)} values, expected {width}")
            try:
                if dtype == np.float64:
                    arr[r] = [float(t) for t in tokens]
                else:
                    arr[r] = [int(t) for t in tokens]
            except ValueError as exc:
                raise SnapshotError(f"line {i + 1}: malformed value in layer {name!r}: {exc}") from exc
            i += 1
        layers[name] = arr
    if any(ln.strip() for ln in lines[i:]):
        raise SnapshotError(f"line {i + 1}: trailing content after last layer")
    if "valid" not in layers and "elevation" in layers:
        layers["valid"] = np.isfinite(layers["elevation"])
    return ElevationMap(spec, layers)


# --------------------------------------------------------------- point clouds

def save_cloud(points: np.ndarray, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "z"])
        for p in np.asarray(points, dtype=float).reshape(-1, 3):
            w.writerow([_fmt(v) for v in p])
    return path


def load_cloud(path) -> np.ndarray:
    path = Path(path)
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    if not rows or [c.strip() for c in rows[0]] != ["x", "y", "z"]:
        raise DataError(f"{path}: line 1: expected header 'x,y,z'")
    pts = np.empty((len(rows) - 1, 3))
    for k, row in enumerate(rows[1:]):
        try:
            if len(row) != 3:
                raise ValueError(f"expected 3 values, got {len(row)}")
            pts[k] = [float(v) for v in row]
        except ValueError as exc:
            raise DataError(f"{path}: line {k + 2}: {exc}") from exc
    if not np.all(np.isfinite(pts)):
        raise DataError(f"{path}: non-finite coordinates")
    return pts


POSE_COLUMNS = ["time", "tx", "ty", "tz", "qw", "qx", "qy", "qz"]


def pose_path(cloud_path) -> Path:
    p = Path(cloud_path)
    return p.with_name(p.stem + ".pose.csv")


def save_pose(stamp: float, pose: RigidTransform, path) -> Path:
    path = Path(path)
    q = pose.to_quaternion()
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(POSE_COLUMNS)
        w.writerow([_fmt(stamp), *(_fmt(v) for v in pose.translation), *(_fmt(v) for v in q)])
    return path


def load_pose(path) -> tuple[float, RigidTransform]:
    """Read a sidecar pose; the quaternion is normalized on load."""
    path = Path(path)
    with path.open(newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) != 2 or [c.strip() for c in rows[0]] != POSE_COLUMNS:
        raise DataError(f"{path}: expected header '{','.join(POSE_COLUMNS)}' and one data row")
    try:
        vals = [float(v) for v in rows[1]]
    except ValueError as exc:
        raise DataError(f"{path}: line 2: {exc}") from exc
    if len(vals) != 8 or not all(math.isfinite(v) for v in vals):
        raise DataError(f"{path}: line 2: expected 8 finite values")
    q = np.array(vals[4:])
    if np.linalg.norm(q) < 1e-12:
        raise DataError(f"{path}: zero quaternion")
    return vals[0], RigidTransform.from_quaternion(q, vals[1:4])


def scan_name(index: int) -> str:
    return f"scan_{index:06d}"


# ------------------------------------------------------------------- configs

MODES = {"det": False, "deterministic": False, "par": True, "parallel": True}


@dataclass
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    update: UpdateParams = field(default_factory=UpdateParams)
    publish_every: int = 1
    mode: str = "det"
    seed: int = 0
    num_scans: int = 20
    scene: sim.SceneSpec = field(default_factory=sim.SceneSpec)
    sensor: sim.SensorSpec = field(default_factory=sim.SensorSpec)
    trajectory: sim.TrajectorySpec = field(default_factory=sim.TrajectorySpec)
    segment: PlaneSegParams = field(default_factory=PlaneSegParams)
    segment_filters: FilterChainSpec = field(default_factory=FilterChainSpec)
    bench_point_counts: tuple[int, ...] = (4000, 10000, 43017, 100000, 400000)
    bench_repetitions: int = 5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of det|par, got {self.mode!r}")
        if self.publish_every < 1:
            raise ConfigError("run.publish_every must be >= 1")
        if self.num_scans < 0 or self.bench_repetitions < 1:
            raise ConfigError("run.num_scans must be >= 0 and bench.repetitions >= 1")

    @property
    def parallel(self) -> bool:
        return MODES[self.mode]

    def params(self) -> UpdateParams:
        return dataclasses.replace(self.update, parallel=self.parallel)


def _coerce(text: str, default, key: str):
    """Parse ``text`` following the type of a field's default value."""
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, str):
            return text
        if isinstance(default, tuple):
            parts = [p for p in text.replace(",", " ").split()]
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in parts)
        if default is None:
            return None if text.lower() == "none" else float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    raise ConfigError(f"{key}: unsupported value type")


def _field_defaults(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def _build(cls, values: dict, section: str, skip=()):
    defaults = _field_defaults(cls)
    kwargs = {}
    for key, text in values.items():
        if key not in defaults or key in skip or dataclasses.is_dataclass(defaults[key]):
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[key] = _coerce(text, defaults[key], f"{section}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


# section -> dataclass holding its keys (nested under UpdateParams)
_UPDATE_SECTIONS = {
    "noise": ("noise", SensorNoiseParams),
    "exclusion": ("exclusion", ExclusionParams),
    "drift": ("drift", drift.DriftParams),
    "cleanup": ("cleanup", raycast.CleanupParams),
    "overlap": ("overlap", analysis.OverlapParams),
    "traversability": ("traversability", analysis.TraversabilityParams),
}


def _parse_primitive(key: str, text: str):
    kind, *pairs = text.split()
    if kind not in sim.PRIMITIVES:
        raise ConfigError(f"{key}: unknown primitive {kind!r}; known: {', '.join(sim.PRIMITIVES)}")
    values = {}
    for pair in pairs:
        k, sep, v = pair.partition("=")
        if not sep:
            raise ConfigError(f"{key}: expected key=value, got {pair!r}")
        values[k] = v
    return _build(sim.PRIMITIVES[kind], values, key, skip=("stairs",))


def _parse_waypoints(text: str) -> list[tuple]:
    out = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        vals = [float(v) for v in chunk.replace(",", " ").split()]
        if len(vals) != 5:
            raise ConfigError(f"trajectory.waypoints: each waypoint needs 't x y z yaw', got {chunk!r}")
        out.append(tuple(vals))
    return out


def parse_config(text: str) -> RunConfig:
    """Parse the flat ``section.key = value`` format; unknown keys are errors."""
    sections: dict[str, dict[str, str]] = {}
    scene: list[tuple[str, str]] = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or "." not in key:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw.strip()!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        seen.add(key)
        section, _, name = key.partition(".")
        if section == "scene":
            scene.append((key, value))
        else:
            sections.setdefault(section, {})[name] = value

    known = {"grid", "update", "run", "sensor", "trajectory", "bench", "segment", *_UPDATE_SECTIONS}
    for section in sections:
        if section not in known:
            raise ConfigError(f"unknown section {section!r}")

    g = dict(sections.get("grid", {}))
    center = (_coerce(g.pop("center_x", "0"), 0.0, "grid.center_x"), _coerce(g.pop("center_y", "0"), 0.0, "grid.center_y"))
    grid = _build(GridSpec, g, "grid", skip=("center",))
    grid = grid.with_center(center)

    nested = {attr: _build(cls, sections.get(sec, {}), sec) for sec, (attr, cls) in _UPDATE_SECTIONS.items()}
    upd = dict(sections.get("update", {}))
    if "parallel" in upd:
        raise ConfigError("unknown key update.parallel (use run.mode)")
    update = _build(UpdateParams, upd, "update")
    update = dataclasses.replace(update, **nested)

    sens = dict(sections.get("sensor", {}))
    noise = SensorNoiseParams(alpha_d=_coerce(sens.pop("alpha_d", "0"), 0.0, "sensor.alpha_d"))
    sensor = _build(sim.SensorSpec, sens, "sensor")
    sensor = dataclasses.replace(sensor, noise=noise)

    tr = dict(sections.get("trajectory", {}))
    waypoints = _parse_waypoints(tr.pop("waypoints")) if "waypoints" in tr else None
    trajectory = _build(sim.TrajectorySpec, tr, "trajectory")
    if waypoints is not None:
        try:
            trajectory = dataclasses.replace(trajectory, waypoints=waypoints)
        except ValueError as exc:
            raise ConfigError(f"trajectory.waypoints: {exc}") from exc

    seg = dict(sections.get("segment", {}))
    filters = seg.pop("filters", "")
    try:
        segment_filters = FilterChainSpec.parse(filters)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"segment.filters: {exc}") from exc
    segment = _build(PlaneSegParams, seg, "segment")

    run = sections.get("run", {})
    run_defaults = {"publish_every": 1, "mode": "det", "seed": 0, "num_scans": 20}
    for k in run:
        if k not in run_defaults:
            raise ConfigError(f"unknown key run.{k}")
    run_vals = {k: _coerce(v, run_defaults[k], f"run.{k}") for k, v in run.items()}

    bench = sections.get("bench", {})
    for k in bench:
        if k not in ("point_counts", "repetitions"):
            raise ConfigError(f"unknown key bench.{k}")
    bench_vals = {}
    if "point_counts" in bench:
        bench_vals["bench_point_counts"] = _coerce(bench["point_counts"], (0,), "bench.point_counts")
    if "repetitions" in bench:
        bench_vals["bench_repetitions"] = _coerce(bench["repetitions"], 0, "bench.repetitions")

    try:
        scene_spec = sim.SceneSpec([_parse_primitive(k, v) for k, v in scene]) if scene else sim.SceneSpec()
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"scene: {exc}") from exc
    return RunConfig(grid=grid, update=update, scene=scene_spec, sensor=sensor, trajectory=trajectory,
                     segment=segment, segment_filters=segment_filters, **run_vals, **bench_vals)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)


# --------------------------------------------------------------- run helpers

def _stats_columns(timings: bool) -> list[str]:
    cols = ["scan", "time", "skipped_missing_pose", *ScanStats.COUNTERS]
    if timings:
        cols += [*PHASES, "total"]
    return cols


class _StatsWriter:
    def __init__(self, path: Path, timings: bool = True):
        self.timings = timings
        self.file = path.open("w", newline="")
        self.writer = csv.DictWriter(self.file, fieldnames=_stats_columns(timings))
        self.writer.writeheader()

    def add(self, scan: int, stamp: float, stats: ScanStats | None):
        row = {"scan": scan, "time": _fmt(stamp), "skipped_missing_pose": int(stats is None)}
        s = stats or ScanStats()
        for k, v in s.row(self.timings).items():
            row[k] = _fmt(v) if isinstance(v, float) else v
        self.writer.writerow(row)

    def close(self):
        self.file.close()


@dataclass
class RunResult:
    snapshots: list[Path] = field(default_factory=list)
    stats_path: Path | None = None
    scans_processed: int = 0
    scans_skipped: int = 0
    final_map: ElevationMap | None = None


def _publish(emap: ElevationMap, out: Path, count: int, result: RunResult):
    result.snapshots.append(save_snapshot(emap, out / f"snapshot_{count:06d}.txt"))


def run_simulate(config: RunConfig, out_dir, save_scans: bool = False, timings: bool = True) -> RunResult:
    """Simulate ``config.num_scans`` scans and fuse them.

    Writes a snapshot after every ``publish_every``-th scan, a per-scan
    ``stats.csv`` and, with ``save_scans``, the clouds and poses in the
    replay input layout.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if save_scans:
        (out / "scans").mkdir(exist_ok=True)
    params = config.params()
    emap = ElevationMap.empty(config.grid)
    result = RunResult(stats_path=out / "stats.csv")
    writer = _StatsWriter(result.stats_path, timings)
    try:
        for scan in sim.simulate_scans(config.scene, config.sensor, config.trajectory, config.num_scans,
                                       seed=config.seed):
            if save_scans:
                name = scan_name(scan.index)
                save_cloud(scan.cloud.points, out / "scans" / f"{name}.csv")
                save_pose(scan.time, scan.est_pose, out / "scans" / f"{name}.pose.csv")
            stats = integrate_scan(emap, scan.cloud, scan.est_pose, params, robot_z=scan.base_z)
            writer.add(scan.index, scan.time, stats)
            result.scans_processed += 1
            if result.scans_processed % config.publish_every == 0:
                _publish(emap, out, result.scans_processed, result)
    finally:
        writer.close()
    result.final_map = emap
    return result


def run_replay(config: RunConfig, cloud_files, out_dir, timings: bool = True) -> RunResult:
    """Fuse recorded clouds (each with a ``.pose.csv`` sidecar) in file order.

    Scans without a pose are skipped with a warning and a stats row flagged
    ``skipped_missing_pose``. Snapshots follow the ``publish_every`` cadence
    counted over processed scans.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = config.params()
    emap = ElevationMap.empty(config.grid)
    result = RunResult(stats_path=out / "stats.csv")
    writer = _StatsWriter(result.stats_path, timings)
    last_stamp = -math.inf
    try:
        for k, path in enumerate(sorted(Path(p) for p in cloud_files)):
            sidecar = pose_path(path)
            if not sidecar.exists():
                warnings.warn(f"{path.name}: no pose file {sidecar.name}; scan skipped", stacklevel=2)
                result.scans_skipped += 1
                writer.add(k, math.nan, None)
                continue
            stamp, pose = load_pose(sidecar)
            if stamp < last_stamp:
                raise DataError(f"{sidecar}: timestamp {stamp} precedes previous scan ({last_stamp})")
            last_stamp = stamp
            cloud = PointCloud(load_cloud(path), stamp=stamp)
            stats = integrate_scan(emap, cloud, pose, params)
            writer.add(k, stamp, stats)
            result.scans_processed += 1
            if result.scans_processed % config.publish_every == 0:
                _publish(emap, out, result.scans_processed, result)
    finally:
        writer.close()
    result.final_map = emap
    return result


def bench_cloud(n_points: int, seed: int = 0) -> tuple[PointCloud, RigidTransform]:
    """A scan of exactly ``n_points`` ground returns from a downward-pitched
    sensor 1 m above flat terrain with a staircase in view."""
    n_side = math.ceil(math.sqrt(n_points * 4 / 3))
    sensor = sim.SensorSpec(cols=n_side, rows=math.ceil(n_points / n_side), mount_xyz=(0.0, 0.0, 1.0),
                            mount_pitch=math.radians(45.0), noise=SensorNoiseParams(alpha_d=1e-4))
    scene = sim.SceneSpec([sim.Ground(0.0), sim.Stairs(origin=(1.0, -0.5, 0.0), step_height=0.15)])
    pose = sensor.mount
    cloud = sim.render_scan(scene, pose, sensor, 0.0, seed=seed)
    if len(cloud) < n_points:
        raise RuntimeError(f"bench scan produced {len(cloud)} points, needed {n_points}")
    keep = np.linspace(0, len(cloud) - 1, n_points).round().astype(np.int64)
    return PointCloud(cloud.points[keep], 0.0), pose


def run_bench(config: RunConfig, point_counts=None, repetitions: int | None = None, out_path=None) -> list[dict]:
    """Median per-phase timings (seconds) of ``integrate_scan`` per point count.

    Each repetition integrates the scan into a copy of a map that already
    holds one scan, so the timed call sees a populated map.
    """
    counts = tuple(config.bench_point_counts if point_counts is None else point_counts)
    reps = config.bench_repetitions if repetitions is None else repetitions
    params = config.params()
    rows = []
    for n in counts:
        cloud, pose = bench_cloud(n, config.seed)
        warm = ElevationMap.empty(config.grid)
        integrate_scan(warm, cloud, pose, params)  # also triggers compilation
        samples = []
        for r in range(reps):
            m = warm.copy()
            stats = integrate_scan(m, PointCloud(cloud.points, 0.1 * (r + 1)), pose, params)
            samples.append(stats.phase_timings)
        row = {"number of points": n}
        for p in PHASES:
            row[p] = float(np.median([s[p] for s in samples]))
        row["total"] = float(np.median([sum(s.values()) for s in samples]))
        rows.append(row)
    if out_path is not None:
        with Path(out_path).open("w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["number of points", *PHASES, "total"])
            w.writeheader()
            w.writerows(rows)
    return rows


def _layer(emap: ElevationMap, layer: str) -> np.ndarray:
    if layer not in emap.layers:
        raise UnknownLayer(f"unknown layer {layer!r}; valid layers: {', '.join(emap.layers)}")
    return emap.layers[layer]


def export_csv(emap: ElevationMap, layer: str, path) -> Path:
    arr = _layer(emap, layer)
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        for row in arr:
            w.writerow([_fmt(v) if arr.dtype == np.float64 else int(v) for v in row])
    return path


def import_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as f:
        return np.array([[float(v) for v in row] for row in csv.reader(f)])


PGM_MAX = 65535


def export_pgm(emap: ElevationMap, layer: str, path) -> Path:
    """16-bit binary PGM. Valid values map linearly from [min, max] onto
    [1, 65535] (a constant layer maps to 65535); invalid cells are 0. The
    scale is recorded in a comment line. Row 0 of the image is the map's
    last row (north up)."""
    arr = np.asarray(_layer(emap, layer), dtype=np.float64)
    cell_ok = emap.layers["upper_bound_valid"] if layer == "upper_bound" else emap.valid
    ok = cell_ok & np.isfinite(arr)
    img = np.zeros(arr.shape, dtype=np.uint16)
    if ok.any():
        lo, hi = float(arr[ok].min()), float(arr[ok].max())
        if hi > lo:
            img[ok] = 1 + np.round((arr[ok] - lo) / (hi - lo) * (PGM_MAX - 1)).astype(np.uint16)
        else:
            img[ok] = PGM_MAX
    else:
        lo = hi = math.nan
    header = (f"P5\n# reliefmap layer={layer} min={lo!r} max={hi!r} "
              f"gray=1+round((value-min)/(max-min)*{PGM_MAX - 1}) invalid=0\n"
              f"{arr.shape[1]} {arr.shape[0]}\n{PGM_MAX}\n")
    path = Path(path)
    path.write_bytes(header.encode() + img[::-1].astype(">u2").tobytes())
    return path


def read_pgm(path) -> tuple[np.ndarray, dict]:
    """Parse a PGM written by :func:`export_pgm`; returns (image in map row order, scale)."""
    data = Path(path).read_bytes()
    tokens, comments, pos = [], [], 0
    while len(tokens) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end].decode()
        pos = end + 1
        if line.startswith("#"):
            comments.append(line)
        else:
            tokens += line.split()
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    img = np.frombuffer(data[pos:pos + 2 * w * h], dtype=">u2").reshape(h, w)[::-1]
    scale = {}
    for c in comments:
        for part in c[1:].split():
            k, sep, v = part.partition("=")
            if sep and k in ("min", "max"):
                scale[k] = float(v)
    scale["maxval"] = maxval
    return img.astype(np.uint16), scale


def run_export(snapshot, layer: str, fmt: str, out_path) -> Path:
    emap = snapshot if isinstance(snapshot, ElevationMap) else load_snapshot(snapshot)
    if fmt == "csv":
        return export_csv(emap, layer, out_path)
    if fmt == "pgm":
        return export_pgm(emap, layer, out_path)
    raise ValueError(f"unknown export format {fmt!r} (csv|pgm)")

