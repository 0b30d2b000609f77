"""Point-cloud container, text I/O (XYZ / ASCII PLY), normalization and
synthetic fixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SURFACES = ("plane", "sphere", "cylinder", "two-cluster", "range-skewed-sphere")

# virtual range sensor for the range-skewed-sphere fixture
SENSOR_POSITION = np.array([0.0, 0.0, 3.0])

_PLY_FLOAT_TYPES = {"float", "float32", "double", "float64"}


class CloudFormatError(ValueError):
    """Malformed or unsupported point-cloud file."""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        elif line is not None:
            prefix = f"line {line}: "
        super().__init__(prefix + message)
        self.path = path
        self.line = line


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """Immutable (N, 3) float64 point set with optional unit normals and
    named scalar channels aligned by index."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    scalars: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("empty cloud")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite coordinate in cloud")
        object.__setattr__(self, "points", pts)

        if self.normals is not None:
            nrm = _frozen(self.normals)
            if nrm.shape != pts.shape:
                raise ValueError(
                    f"normals shape {nrm.shape} does not match points {pts.shape}"
                )
            if not np.all(np.isfinite(nrm)):
                raise ValueError("non-finite normal in cloud")
            err = np.abs(np.linalg.norm(nrm, axis=1) - 1.0)
            if np.any(err > 1e-6):
                bad = int(np.argmax(err))
                raise ValueError(f"normal {bad} is not unit length (|n|-1 = {err[bad]:.3g})")
            object.__setattr__(self, "normals", nrm)

        scalars = {}
        for name, values in self.scalars.items():
            v = _frozen(values)
            if v.shape != (pts.shape[0],):
                raise ValueError(f"scalar channel {name!r} has shape {v.shape}")
            scalars[name] = v
        object.__setattr__(self, "scalars", scalars)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_normals(self) -> bool:
        return self.normals is not None


# ---------------------------------------------------------------------------
# file I/O


def _parse_floats(fields, path, lineno):
    try:
        values = [float(f) for f in fields]
    except ValueError:
        raise CloudFormatError(f"cannot parse numbers from {' '.join(fields)!r}", path, lineno)
    if not all(math.isfinite(v) for v in values):
        raise CloudFormatError("non-finite value", path, lineno)
    return values


def _read_xyz(path: Path) -> PointCloud:
    rows = []
    width = None
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) not in (3, 6):
                raise CloudFormatError(
                    f"expected 3 or 6 fields, got {len(fields)}", path, lineno
                )
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise CloudFormatError(
                    f"expected {width} fields like preceding rows, got {len(fields)}",
                    path,
                    lineno,
                )
            rows.append(_parse_floats(fields, path, lineno))
    if not rows:
        raise CloudFormatError("empty cloud", path)
    data = np.array(rows, dtype=np.float64)
    normals = data[:, 3:6] if width == 6 else None
    return _make_cloud(data[:, :3], normals, path)


def _read_ply(path: Path) -> PointCloud:
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError("missing 'ply' magic line", path, 1)

    count = None
    props: list[str] = []
    lineno = 1
    body_start = None
    for lineno in range(2, len(lines) + 1):
        words = lines[lineno - 1].split()
        if not words:
            continue
        key = words[0]
        if key == "format":
            if words[1:] != ["ascii", "1.0"]:
                raise CloudFormatError(
                    f"unsupported PLY format {' '.join(words[1:])!r} (only ascii 1.0)",
                    path,
                    lineno,
                )
        elif key in ("comment", "obj_info"):
            continue
        elif key == "element":
            if len(words) != 3 or words[1] != "vertex" or count is not None:
                raise CloudFormatError(
                    f"unsupported element {' '.join(words[1:])!r} (only one 'vertex' element)",
                    path,
                    lineno,
                )
            try:
                count = int(words[2])
            except ValueError:
                raise CloudFormatError(f"bad vertex count {words[2]!r}", path, lineno)
            if count < 0:
                raise CloudFormatError("negative vertex count", path, lineno)
        elif key == "property":
            if count is None:
                raise CloudFormatError("property before element", path, lineno)
            if len(words) != 3 or words[1] not in _PLY_FLOAT_TYPES:
                raise CloudFormatError(
                    f"unsupported property {' '.join(words[1:])!r}", path, lineno
                )
            name = words[2]
            if name not in ("x", "y", "z", "nx", "ny", "nz") or name in props:
                raise CloudFormatError(f"unsupported or repeated property {name!r}", path, lineno)
            props.append(name)
        elif key == "end_header":
            body_start = lineno
            break
        else:
            raise CloudFormatError(f"unexpected header line {lines[lineno - 1]!r}", path, lineno)

    if body_start is None:
        raise CloudFormatError("missing end_header", path, lineno)
    if count is None:
        raise CloudFormatError("no vertex element", path, body_start)
    if not {"x", "y", "z"} <= set(props):
        raise CloudFormatError("vertex element lacks x/y/z properties", path, body_start)
    has_normals = {"nx", "ny", "nz"} <= set(props)
    if not has_normals and any(p in props for p in ("nx", "ny", "nz")):
        raise CloudFormatError("partial normal properties", path, body_start)
    if count == 0:
        raise CloudFormatError("empty cloud", path)

    rows = []
    lineno = body_start
    while len(rows) < count:
        lineno += 1
        if lineno > len(lines):
            raise CloudFormatError(
                f"expected {count} vertices, file ends after {len(rows)}", path, lineno - 1
            )
        fields = lines[lineno - 1].split()
        if not fields:
            continue
        if len(fields) != len(props):
            raise CloudFormatError(
                f"expected {len(props)} fields, got {len(fields)}", path, lineno
            )
        rows.append(_parse_floats(fields, path, lineno))
    for extra in range(lineno + 1, len(lines) + 1):
        if lines[extra - 1].strip():
            raise CloudFormatError("trailing data after vertex list", path, extra)

    data = np.array(rows, dtype=np.float64)
    col = {name: i for i, name in enumerate(props)}
    points = data[:, [col["x"], col["y"], col["z"]]]
    normals = data[:, [col["nx"], col["ny"], col["nz"]]] if has_normals else None
    return _make_cloud(points, normals, path)


def _make_cloud(points, normals, path) -> PointCloud:
    try:
        return PointCloud(points, normals)
    except ValueError as exc:
        raise CloudFormatError(str(exc), path) from None


def load_cloud(path, format: Optional[str] = None) -> PointCloud:
    """Read a cloud from ``xyz_ascii`` or ``ply_ascii``; the format is guessed
    from the suffix when not given."""
    path = Path(path)
    if format is None:
        format = "ply_ascii" if path.suffix.lower() == ".ply" else "xyz_ascii"
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if format == "xyz_ascii":
        return _read_xyz(path)
    if format == "ply_ascii":
        return _read_ply(path)
    raise ValueError(f"unknown cloud format {format!r}")


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def save_cloud(cloud: PointCloud, path, format: Optional[str] = None) -> None:
    path = Path(path)
    if format is None:
        format = "ply_ascii" if path.suffix.lower() == ".ply" else "xyz_ascii"
    data = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    body = "\n".join(" ".join(_fmt(v) for v in row) for row in data) + "\n"
    if format == "xyz_ascii":
        path.write_text(body)
    elif format == "ply_ascii":
        header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
        names = ["x", "y", "z"] + (["nx", "ny", "nz"] if cloud.has_normals else [])
        header += [f"property double {n}" for n in names]
        header.append("end_header")
        path.write_text("\n".join(header) + "\n" + body)
    else:
        raise ValueError(f"unknown cloud format {format!r}")


# ---------------------------------------------------------------------------
# normalization


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    """Translate the centroid to the origin and scale so the farthest point has
    norm 1.  Normals and scalars are carried over unchanged."""
    pts = cloud.points
    centered = pts - pts.mean(axis=0)
    scale = np.linalg.norm(centered, axis=1).max()
    if not scale > 0.0:
        raise ValueError("cannot normalize: all points coincide (zero scale)")
    out = centered / scale
    # second pass removes the O(eps) centroid drift of the first
    out = out - out.mean(axis=0)
    out = out / np.linalg.norm(out, axis=1).max()
    return PointCloud(out, cloud.normals, dict(cloud.scalars))


# ---------------------------------------------------------------------------
# synthetic fixtures


@dataclass(frozen=True)
class SamplingSpec:
    surface: str
    count: int
    density_exponent: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    with_normals: bool = False

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise ValueError(f"unknown surface {self.surface!r}; choose from {SURFACES}")
        if self.count <= 0:
            raise ValueError("count must be positive")
        if self.density_exponent < 0 or self.noise_sigma < 0:
            raise ValueError("density_exponent and noise_sigma must be >= 0")


def _unit_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _range_skewed_sphere(rng: np.random.Generator, n: int, exponent: float) -> np.ndarray:
    # rejection sampling: accept with probability (d_min / d)^exponent
    d_min = np.linalg.norm(SENSOR_POSITION) - 1.0
    chunks, have = [], 0
    while have < n:
        cand = _unit_sphere(rng, 2 * (n - have) + 64)
        d = np.linalg.norm(cand - SENSOR_POSITION, axis=1)
        keep = rng.random(cand.shape[0]) < (d_min / d) ** exponent
        chunks.append(cand[keep])
        have += int(keep.sum())
    return np.concatenate(chunks)[:n]


def generate_cloud(spec: SamplingSpec) -> PointCloud:
    """Sample a synthetic cloud; a pure function of ``spec``.

    Surfaces: plane (z=0 over [-1,1]^2), unit sphere, cylinder (radius 1, axis
    z, height 2), two Gaussian clusters of unequal spread, and a unit sphere
    whose density falls off as 1/dist^exponent from a sensor at (0, 0, 3).
    """
    rng = np.random.default_rng(spec.seed & 0xFFFF_FFFF_FFFF_FFFF)
    n = spec.count
    normals = None
    if spec.surface == "plane":
        xy = rng.uniform(-1.0, 1.0, size=(n, 2))
        pts = np.column_stack([xy, np.zeros(n)])
        normals = np.tile([0.0, 0.0, 1.0], (n, 1))
    elif spec.surface == "sphere":
        pts = _unit_sphere(rng, n)
        normals = pts.copy()
    elif spec.surface == "cylinder":
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
        z = rng.uniform(-1.0, 1.0, size=n)
        pts = np.column_stack([np.cos(phi), np.sin(phi), z])
        normals = np.column_stack([np.cos(phi), np.sin(phi), np.zeros(n)])
    elif spec.surface == "two-cluster":
        n_a = n // 2
        a = rng.normal([-1.0, 0.0, 0.0], 0.1, size=(n_a, 3))
        b = rng.normal([1.0, 0.0, 0.0], 0.4, size=(n - n_a, 3))
        pts = np.vstack([a, b])
    else:
        pts = _range_skewed_sphere(rng, n, spec.density_exponent)
        normals = pts.copy()

    if spec.noise_sigma > 0:
        pts = pts + spec.noise_sigma * rng.standard_normal(pts.shape)
    if not spec.with_normals:
        normals = None
    return PointCloud(pts, normals)
