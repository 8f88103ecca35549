"""Triangle meshes: a small Wavefront OBJ reader/writer and procedural primitives.

Meshes use a Y-up frame. Primitives are centered on the origin in XZ with their
resting face at y = 0 so they can be dropped straight onto a tray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SEGMENTS = 16


class ObjParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class ObjIndexError(IndexError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class EmptyMeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (V, 3) float64, meters
    triangles: np.ndarray  # (T, 3) int64, 0-based
    name: str = "mesh"

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) == 0:
            raise EmptyMeshError(f"mesh {self.name!r} has no triangles")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"mesh {self.name!r} has non-finite coordinates")
        if t.min() < 0 or t.max() >= len(v):
            raise IndexError(f"mesh {self.name!r} has triangle indices outside [0, {len(v)})")
        if np.count_nonzero(v.max(axis=0) - v.min(axis=0) > 0) < 2:
            raise ValueError(f"mesh {self.name!r} is degenerate (flat on two axes)")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def extent(self) -> np.ndarray:
        lo, hi = self.bounds
        return hi - lo

    def normalized(self) -> Mesh:
        """Recenter so the XZ bounding box is centered on the origin and min y is 0."""
        lo, hi = self.bounds
        offset = np.array([(lo[0] + hi[0]) / 2, lo[1], (lo[2] + hi[2]) / 2])
        return Mesh(self.vertices - offset, self.triangles, self.name)


@dataclass(frozen=True)
class RepoModel:
    mesh: Mesh
    label: str
    height_range: tuple[float, float]  # physical height in meters

    def __post_init__(self):
        lo, hi = self.height_range
        if not self.label:
            raise ValueError("class label must be a nonempty string")
        if not (0 < lo <= hi):
            raise ValueError(f"invalid height range {self.height_range}")


@dataclass(frozen=True)
class ModelRepository:
    models: tuple[RepoModel, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if not self.models:
            raise ValueError("model repository is empty")

    def __len__(self):
        return len(self.models)

    def __getitem__(self, i):
        return self.models[i]

    def subset(self, n: int) -> ModelRepository:
        """The first ``n`` models. Subsets of increasing size are nested."""
        if not 1 <= n <= len(self.models):
            raise ValueError(f"dictionary size {n} outside [1, {len(self.models)}]")
        return ModelRepository(self.models[:n])


def _parse_index(tok: str, nverts: int, lineno: int) -> int:
    head = tok.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ObjParseError(lineno, f"bad face index {tok!r}") from None
    if idx == 0:
        raise ObjIndexError(lineno, "face index 0 is not valid in OBJ")
    resolved = idx - 1 if idx > 0 else nverts + idx
    if not 0 <= resolved < nverts:
        raise ObjIndexError(lineno, f"face index {idx} out of range ({nverts} vertices defined)")
    return resolved


def parse_obj(text: str, name: str = "mesh") -> Mesh:
    """Parse the ``v``/``f`` subset of Wavefront OBJ.

    Polygons are fan-triangulated around their first vertex. Negative indices
    count back from the most recently defined vertex. Other statements
    (``vn``, ``vt``, ``mtllib``, ``usemtl``, groups, ...) are ignored.
    """
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        if toks[0] == "v":
            if len(toks) < 4:
                raise ObjParseError(lineno, "vertex needs 3 coordinates")
            try:
                xyz = tuple(float(t) for t in toks[1:4])
            except ValueError:
                raise ObjParseError(lineno, f"malformed vertex {raw.strip()!r}") from None
            if not all(math.isfinite(c) for c in xyz):
                raise ObjParseError(lineno, "non-finite vertex coordinate")
            verts.append(xyz)
        elif toks[0] == "f":
            if len(toks) < 4:
                raise ObjParseError(lineno, "face needs at least 3 indices")
            idx = [_parse_index(t, len(verts), lineno) for t in toks[1:]]
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    if not tris:
        raise EmptyMeshError("OBJ text contains no faces")
    return Mesh(np.array(verts, dtype=np.float64), np.array(tris, dtype=np.int64), name)


def serialize_obj(mesh: Mesh) -> str:
    lines = [f"o {mesh.name}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


def _box(w, h, d):
    x, z = w / 2, d / 2
    v = np.array([
        [-x, 0, -z], [x, 0, -z], [x, 0, z], [-x, 0, z],
        [-x, h, -z], [x, h, -z], [x, h, z], [-x, h, z],
    ], dtype=np.float64)
    # outward-facing, counter-clockwise seen from outside
    f = np.array([
        [0, 1, 2], [0, 2, 3],  # bottom
        [4, 6, 5], [4, 7, 6],  # top
        [0, 4, 5], [0, 5, 1],  # -z
        [3, 2, 6], [3, 6, 7],  # +z
        [0, 3, 7], [0, 7, 4],  # -x
        [1, 5, 6], [1, 6, 2],  # +x
    ])
    return v, f


def _lathe(rings, rx, rz, segments):
    """Surface of revolution from (y, radius-fraction) rings, closed by pole vertices.

    ``rings`` runs bottom to top; the first and last entries must have zero radius
    and become single pole vertices.
    """
    ang = 2 * np.pi * np.arange(segments) / segments
    # exact extremes at multiples of 90 degrees so the AABB hits the requested dims
    cos = np.round(np.cos(ang), 15)
    sin = np.round(np.sin(ang), 15)
    verts = [[0.0, rings[0][0], 0.0]]
    for y, frac in rings[1:-1]:
        for c, s in zip(cos, sin):
            verts.append([rx * frac * c, y, rz * frac * s])
    verts.append([0.0, rings[-1][0], 0.0])
    nring = len(rings) - 2
    top = len(verts) - 1
    faces = []
    for k in range(segments):
        k2 = (k + 1) % segments
        faces.append([0, 1 + k, 1 + k2])
    for r in range(nring - 1):
        a0 = 1 + r * segments
        b0 = a0 + segments
        for k in range(segments):
            k2 = (k + 1) % segments
            faces.append([a0 + k, b0 + k, b0 + k2])
            faces.append([a0 + k, b0 + k2, a0 + k2])
    last = 1 + (nring - 1) * segments
    for k in range(segments):
        k2 = (k + 1) % segments
        faces.append([top, last + k2, last + k])
    return np.array(verts), np.array(faces)


def make_primitive(kind: str, dims, segments: int = DEFAULT_SEGMENTS, cap_rings: int = 4) -> Mesh:
    """Closed primitive with axis-aligned bounding box exactly ``dims`` = (width, height, depth).

    ``kind`` is one of ``box``, ``cylinder``, ``capsule``. Round primitives use
    ``segments`` divisions around the y axis (a multiple of 4); their cross
    section is an ellipse with axes width and depth. Capsule end caps are
    half-ellipsoids whose vertical radius is half the smaller horizontal axis,
    shrunk to half the height for squat capsules.
    """
    w, h, d = (float(x) for x in dims)
    if not (w > 0 and h > 0 and d > 0) or not all(map(math.isfinite, (w, h, d))):
        raise ValueError(f"primitive dimensions must be positive and finite, got {dims}")
    if kind == "box":
        v, f = _box(w, h, d)
    elif kind in ("cylinder", "capsule"):
        if segments < 4 or segments % 4:
            raise ValueError("segments must be a positive multiple of 4")
        rx, rz = w / 2, d / 2
        if kind == "cylinder":
            rings = [(0.0, 0.0), (0.0, 1.0), (h, 1.0), (h, 0.0)]
        else:
            cap = min(min(rx, rz), h / 2)
            phis = np.linspace(0, np.pi / 2, cap_rings + 1)
            bottom = [(cap - cap * math.cos(p), math.sin(p)) for p in phis]
            top = [(h - cap + cap * math.sin(p), math.cos(p)) for p in phis]
            rings = bottom + top[1:] if cap == h / 2 else bottom + top
            rings[0] = (0.0, 0.0)
            rings[-1] = (h, 0.0)
        v, f = _lathe(rings, rx, rz, segments)
    else:
        raise ValueError(f"unknown primitive kind {kind!r}")
    return Mesh(v, f, name=kind)


# Nominal product shapes for the built-in repository: (name, primitive, (w, h, d) ranges, height range m)
_PRODUCT_KINDS = (
    ("can", "cylinder", ((0.055, 0.075), (0.09, 0.14)), (0.09, 0.14)),
    ("bottle", "capsule", ((0.06, 0.09), (0.18, 0.26)), (0.18, 0.26)),
    ("carton", "box", ((0.06, 0.10), (0.12, 0.22)), (0.12, 0.22)),
    ("jar", "cylinder", ((0.07, 0.10), (0.07, 0.12)), (0.07, 0.12)),
    ("tub", "box", ((0.08, 0.12), (0.05, 0.09)), (0.05, 0.09)),
)


def procedural_repository(size: int, seed: int = 616, label: str = "product") -> ModelRepository:
    """Deterministic repository of ``size`` product-like primitives.

    Prefixes are stable: ``procedural_repository(n)`` is the first ``n`` models
    of ``procedural_repository(m)`` for any ``m >= n``.
    """
    if size < 1:
        raise ValueError("repository size must be >= 1")
    models = []
    for i in range(size):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        name, kind, (wr, hr), height_range = _PRODUCT_KINDS[i % len(_PRODUCT_KINDS)]
        w = rng.uniform(*wr)
        depth = w if kind != "box" else rng.uniform(*wr)
        mesh = make_primitive(kind, (w, rng.uniform(*hr), depth))
        mesh = Mesh(mesh.vertices, mesh.triangles, f"{name}_{i:03d}")
        models.append(RepoModel(mesh, label, height_range))
    return ModelRepository(tuple(models))
