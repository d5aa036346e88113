"""Point cloud I/O, synthetic sampling and bounding boxes.

Clouds are plain arrays of 3D points in meters. Bounding boxes come in two
flavors: axis aligned (used to place exterior points for surface fitting)
and PCA-oriented (used to place wrist seed poses around the object).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, FormatError, InsufficientDataError

MIN_POINTS = 4


@dataclass(frozen=True)
class PointCloud:
    """Observed 3D surface samples, optionally with unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None
    source: str = "synthetic"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (n, 3), got {pts.shape}")
        if len(pts) < MIN_POINTS:
            raise InsufficientDataError(
                f"need at least {MIN_POINTS} points, got {len(pts)}")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite coordinates")
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float)
            object.__setattr__(self, "normals", nrm)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points shape")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.abs(lengths - 1.0).max() > 1e-6:
                raise ValueError("normals must be unit length")

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class BoundingBox:
    """Oriented box: center, half extents along box axes, rotation world<-box."""

    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        h = np.asarray(self.half_extents, dtype=float)
        r = np.asarray(self.rotation, dtype=float)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "rotation", r)
        if np.any(h <= 0):
            raise DegenerateGeometryError(f"half extents must be positive: {h}")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9 or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")

    @property
    def longest_edge(self) -> float:
        return 2.0 * float(self.half_extents.max())

    @property
    def diagonal(self) -> float:
        return 2.0 * float(np.linalg.norm(self.half_extents))

    def corners(self) -> np.ndarray:
        """8 corners in world coordinates."""
        signs = np.array([[sx, sy, sz] for sx in (-1, 1)
                          for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.rotation.T

    def face_centers(self) -> np.ndarray:
        """6 face centers in world coordinates."""
        offsets = []
        for axis in range(3):
            for sign in (-1.0, 1.0):
                o = np.zeros(3)
                o[axis] = sign * self.half_extents[axis]
                offsets.append(o)
        return self.center + np.array(offsets) @ self.rotation.T


def _parse_rows(rows, normals_present, path, first_line):
    points, normals = [], []
    rejected = 0
    for offset, cols in enumerate(rows):
        vals = np.array(cols, dtype=float)
        if not np.isfinite(vals).all():
            rejected += 1
            continue
        points.append(vals[:3])
        if normals_present:
            normals.append(vals[3:6])
    if len(points) < MIN_POINTS:
        raise InsufficientDataError(
            f"{path}: only {len(points)} valid points (minimum {MIN_POINTS}, "
            f"{rejected} rejected)")
    pts = np.array(points)
    nrm = np.array(normals) if normals_present else None
    if nrm is not None:
        lengths = np.linalg.norm(nrm, axis=1)
        bad = np.abs(lengths - 1.0) > 1e-6
        if bad.any():
            nrm = nrm / np.where(lengths[:, None] > 0, lengths[:, None], 1.0)
    return pts, nrm, rejected


def _load_xyz(path):
    rows = []
    ncols = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.replace(",", " ").split()
            if len(cols) not in (3, 6):
                raise FormatError(f"expected 3 or 6 columns, got {len(cols)}",
                                  path=path, line=lineno)
            if ncols is None:
                ncols = len(cols)
            elif len(cols) != ncols:
                raise FormatError("inconsistent column count", path=path,
                                  line=lineno)
            try:
                rows.append([float(c) for c in cols])
            except ValueError:
                raise FormatError(f"non-numeric value in {cols}", path=path,
                                  line=lineno)
    return rows, (ncols == 6)


def _load_ascii_ply(path):
    with open(path) as fh:
        lines = fh.readlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic", path=path, line=1)
    n_vertex = None
    props = []
    in_vertex_element = False
    header_end = None
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise FormatError("only ascii PLY is supported", path=path,
                                  line=lineno)
        elif tok[0] == "element":
            in_vertex_element = tok[1] == "vertex"
            if in_vertex_element:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex_element:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = lineno
            break
    if n_vertex is None or header_end is None:
        raise FormatError("incomplete PLY header", path=path,
                          line=len(lines))
    for name in ("x", "y", "z"):
        if name not in props:
            raise FormatError(f"vertex property '{name}' missing", path=path,
                              line=header_end)
    has_normals = all(n in props for n in ("nx", "ny", "nz"))
    idx = [props.index(n) for n in ("x", "y", "z")]
    if has_normals:
        idx += [props.index(n) for n in ("nx", "ny", "nz")]
    rows = []
    for lineno in range(header_end, header_end + n_vertex):
        if lineno >= len(lines):
            raise FormatError("fewer vertex rows than declared", path=path,
                              line=lineno + 1)
        cols = lines[lineno].split()
        if len(cols) < len(props):
            raise FormatError("short vertex row", path=path, line=lineno + 1)
        try:
            rows.append([float(cols[i]) for i in idx])
        except ValueError:
            raise FormatError("non-numeric vertex value", path=path,
                              line=lineno + 1)
    return rows, has_normals


def load_point_cloud(path: str, fmt: str | None = None) -> PointCloud:
    """Load a cloud from ascii-PLY or xyz-csv; rejects non-finite rows.

    fmt is "ply" or "xyz"; inferred from the extension when None.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if fmt is None:
        fmt = "ply" if os.path.splitext(path)[1].lower() == ".ply" else "xyz"
    if fmt == "ply":
        rows, has_normals = _load_ascii_ply(path)
    elif fmt == "xyz":
        rows, has_normals = _load_xyz(path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    pts, nrm, rejected = _parse_rows(rows, has_normals, path, 1)
    cloud = PointCloud(pts, nrm, source="file")
    # stash the rejection count without breaking immutability semantics
    object.__setattr__(cloud, "rejected_rows", rejected)
    return cloud


def save_point_cloud(cloud: PointCloud, path: str, fmt: str | None = None):
    """Write a cloud with 9 significant digits (round-trip safe)."""
    if fmt is None:
        fmt = "ply" if os.path.splitext(path)[1].lower() == ".ply" else "xyz"
    cols = cloud.points
    if cloud.normals is not None:
        cols = np.hstack([cloud.points, cloud.normals])
    if fmt == "ply":
        names = ["x", "y", "z", "nx", "ny", "nz"][:cols.shape[1]]
        with open(path, "w") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(cloud)}\n")
            for n in names:
                fh.write(f"property float {n}\n")
            fh.write("end_header\n")
            np.savetxt(fh, cols, fmt="%.9g")
    elif fmt == "xyz":
        np.savetxt(path, cols, fmt="%.9g", delimiter=",")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def scaled_aabb(cloud: PointCloud, scale: float = 1.2) -> BoundingBox:
    """Axis-aligned box scaled about the cloud center."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    half = (hi - lo) / 2.0
    if np.all(half <= 0):
        raise DegenerateGeometryError("cloud has zero extent on every axis")
    half = np.maximum(half, 1e-9)  # keep flat clouds usable
    return BoundingBox(center=(lo + hi) / 2.0, half_extents=half * scale)


def oriented_bbox(cloud: PointCloud) -> BoundingBox:
    """PCA-oriented bounding box (used for seed placement)."""
    center = cloud.points.mean(axis=0)
    centered = cloud.points - center
    cov = centered.T @ centered / len(cloud)
    _, vecs = np.linalg.eigh(cov)
    rot = vecs[:, ::-1]  # principal axis first
    if np.linalg.det(rot) < 0:
        rot = rot.copy()
        rot[:, 2] = -rot[:, 2]
    local = centered @ rot
    lo, hi = local.min(axis=0), local.max(axis=0)
    half = np.maximum((hi - lo) / 2.0, 1e-9)
    box_center = center + rot @ ((lo + hi) / 2.0)
    return BoundingBox(center=box_center, half_extents=half, rotation=rot)


def voxel_downsample(cloud: PointCloud, voxel: float = 0.005) -> PointCloud:
    """Keep one averaged point per occupied voxel."""
    if voxel <= 0:
        raise ValueError("voxel edge must be positive")
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                   return_counts=True)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud.points)
    pts = sums / counts[:, None]
    if len(pts) < MIN_POINTS:
        return cloud
    normals = None
    if cloud.normals is not None:
        nsum = np.zeros((len(counts), 3))
        np.add.at(nsum, inverse, cloud.normals)
        norms = np.linalg.norm(nsum, axis=1)
        normals = nsum / np.where(norms > 1e-12, norms, 1.0)[:, None]
    return PointCloud(pts, normals, source=cloud.source)


def _sphere_sdf(p, r):
    return np.linalg.norm(p, axis=-1) - r


def _box_sdf(p, half):
    q = np.abs(p) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def _cylinder_sdf(p, r, h):
    # axis along z, centered at origin, half height h/2
    radial = np.linalg.norm(p[..., :2], axis=-1) - r
    axial = np.abs(p[..., 2]) - h / 2.0
    q = np.stack([radial, axial], axis=-1)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def analytic_sdf(shape: str, params: tuple):
    """Return the exact SDF callable for a synthetic shape."""
    if shape == "sphere":
        (r,) = params
        return lambda p: _sphere_sdf(np.asarray(p, dtype=float), r)
    if shape == "box":
        half = np.asarray(params, dtype=float) / 2.0
        return lambda p: _box_sdf(np.asarray(p, dtype=float), half)
    if shape == "cylinder":
        r, h = params
        return lambda p: _cylinder_sdf(np.asarray(p, dtype=float), r, h)
    raise ValueError(f"unknown shape {shape!r}")


def sample_synthetic(shape: str, params: tuple, n: int = 500,
                     noise_sigma: float = 0.0,
                     rng: np.random.Generator | None = None,
                     with_normals: bool = False) -> PointCloud:
    """Sample n points on an analytic surface, optionally noisy.

    shape is one of "sphere" (r,), "box" (ex, ey, ez) or "cylinder" (r, h).
    Noise is added along the surface normal so noiseless samples have exact
    SDF value zero.
    """
    if n < MIN_POINTS:
        raise InsufficientDataError(f"n must be >= {MIN_POINTS}")
    if any(p <= 0 for p in params):
        raise ValueError("shape parameters must be positive")
    rng = rng or np.random.default_rng(0)
    if shape == "sphere":
        (r,) = params
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        pts = r * dirs
        normals = dirs
    elif shape == "box":
        half = np.asarray(params, dtype=float) / 2.0
        areas = np.array([half[1] * half[2], half[0] * half[2],
                          half[0] * half[1]])
        areas = np.repeat(areas, 2)
        faces = rng.choice(6, size=n, p=areas / areas.sum())
        pts = rng.uniform(-half, half, size=(n, 3))
        normals = np.zeros((n, 3))
        for i, f in enumerate(faces):
            axis, sign = f // 2, 1.0 if f % 2 else -1.0
            pts[i, axis] = sign * half[axis]
            normals[i, axis] = sign
    elif shape == "cylinder":
        r, h = params
        side_area = 2 * np.pi * r * h
        cap_area = np.pi * r * r
        total = side_area + 2 * cap_area
        which = rng.uniform(size=n)
        pts = np.zeros((n, 3))
        normals = np.zeros((n, 3))
        for i in range(n):
            if which[i] < side_area / total:
                ang = rng.uniform(0, 2 * np.pi)
                pts[i] = [r * np.cos(ang), r * np.sin(ang),
                          rng.uniform(-h / 2, h / 2)]
                normals[i] = [np.cos(ang), np.sin(ang), 0.0]
            else:
                sign = 1.0 if which[i] < (side_area + cap_area) / total else -1.0
                rad = r * np.sqrt(rng.uniform())
                ang = rng.uniform(0, 2 * np.pi)
                pts[i] = [rad * np.cos(ang), rad * np.sin(ang), sign * h / 2]
                normals[i] = [0.0, 0.0, sign]
    else:
        raise ValueError(f"unknown shape {shape!r}")
    if noise_sigma > 0:
        offsets = np.clip(rng.normal(scale=noise_sigma, size=n), -4 * noise_sigma,
                          4 * noise_sigma)
        pts = pts + offsets[:, None] * normals
    return PointCloud(pts, normals if with_normals else None,
                      source="synthetic")
