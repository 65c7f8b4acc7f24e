"""Object geometry and grasp-manifold templates.

Primitives are centred on the origin with their main axis along +X. A
primitive's grasp manifold is the segment between the two ends of that
axis; complex meshes carry a hand-authored keypoint sequence instead.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from .errors import AnnotationError, MeshFormatError, PreconditionError

SIMPLE_K = 2
COMPLEX_K = 10


@dataclass(frozen=True)
class Cuboid:
    length: float
    width: float
    height: float

    @property
    def main_axis_length(self) -> float:
        return self.length

    @property
    def dims(self) -> tuple[float, float, float]:
        return (self.length, self.width, self.height)


@dataclass(frozen=True)
class Cylinder:
    length: float
    radius: float

    @property
    def main_axis_length(self) -> float:
        return self.length


@dataclass(frozen=True)
class Capsule:
    """Cylinder of ``length`` capped by two hemispheres; total extent is length + 2r."""

    length: float
    radius: float

    @property
    def main_axis_length(self) -> float:
        return self.length


PrimitiveShape = Union[Cuboid, Cylinder, Capsule]
PRIMITIVE_TYPES = (Cuboid, Cylinder, Capsule)


def _validate_primitive(shape: PrimitiveShape) -> None:
    values = shape.dims if isinstance(shape, Cuboid) else (shape.length, shape.radius)
    if not all(v > 0 and math.isfinite(v) for v in values):
        raise PreconditionError(f"{shape!r}: dimensions must be positive")


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (N, 3) float
    triangles: np.ndarray  # (M, 3) int
    normals: np.ndarray = field(default=None)  # (M, 3) unit face normals

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float).reshape(-1, 3)
        tris = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(tris) == 0:
            raise MeshFormatError("mesh has no triangles")
        if tris.min() < 0 or tris.max() >= len(verts):
            raise MeshFormatError("triangle index out of range")
        normals = face_normals(verts, tris) if self.normals is None else np.array(self.normals, dtype=float)
        for arr in (verts, tris, normals):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "normals", normals)

    @classmethod
    def concatenate(cls, parts: Sequence[TriMesh]) -> TriMesh:
        verts, tris, offset = [], [], 0
        for part in parts:
            verts.append(part.vertices)
            tris.append(part.triangles + offset)
            offset += len(part.vertices)
        return cls(np.concatenate(verts), np.concatenate(tris))

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> TriMesh:
        return TriMesh(self.vertices @ np.asarray(rotation).T + np.asarray(translation), self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def face_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1)
    bad = np.flatnonzero(norm <= 1e-15)
    if len(bad):
        raise MeshFormatError(f"degenerate (zero-area) triangle at index {int(bad[0])}")
    return n / norm[:, None]


class ManifoldKind(enum.Enum):
    LINE = "line"
    SURFACE = "surface"


@dataclass(frozen=True, eq=False)
class GraspManifold:
    """Ordered keypoints (object frame, metres) spanning a line or surface."""

    keypoints: np.ndarray
    kind: ManifoldKind = ManifoldKind.LINE

    def __post_init__(self):
        kps = np.array(self.keypoints, dtype=float).reshape(-1, 3)
        kind = ManifoldKind(self.kind)
        if len(kps) < 2:
            raise AnnotationError(f"a grasp manifold needs at least 2 keypoints, got {len(kps)}")
        if kind is ManifoldKind.SURFACE and len(kps) < 3:
            raise AnnotationError(f"a surface manifold needs at least 3 keypoints, got {len(kps)}")
        diffs = np.linalg.norm(kps[:, None, :] - kps[None, :, :], axis=-1)
        np.fill_diagonal(diffs, np.inf)
        if diffs.min() == 0.0:
            raise AnnotationError("grasp manifold keypoints must be pairwise distinct")
        kps.setflags(write=False)
        object.__setattr__(self, "keypoints", kps)
        object.__setattr__(self, "kind", kind)

    def __len__(self) -> int:
        return len(self.keypoints)


@dataclass(frozen=True, eq=False)
class ObjectTemplate:
    category_name: str
    geometry: Union[PrimitiveShape, TriMesh]
    manifold: GraspManifold
    K: int

    def __post_init__(self):
        if len(self.manifold) > self.K:
            raise AnnotationError(
                f"{self.category_name}: manifold has {len(self.manifold)} keypoints, budget is {self.K}"
            )

    @property
    def is_primitive(self) -> bool:
        return isinstance(self.geometry, PRIMITIVE_TYPES)


def manifold_for_primitive(shape: PrimitiveShape) -> GraspManifold:
    _validate_primitive(shape)
    half = shape.main_axis_length / 2.0
    return GraspManifold(np.array([[-half, 0.0, 0.0], [half, 0.0, 0.0]]), ManifoldKind.LINE)


@dataclass(frozen=True)
class PrimitiveRanges:
    """Uniform sampling ranges (metres) for primitive dimensions."""

    cuboid_length: tuple[float, float] = (0.08, 0.25)
    cuboid_width: tuple[float, float] = (0.03, 0.08)
    cuboid_height: tuple[float, float] = (0.03, 0.08)
    cylinder_length: tuple[float, float] = (0.08, 0.25)
    cylinder_radius: tuple[float, float] = (0.015, 0.04)
    capsule_length: tuple[float, float] = (0.06, 0.2)
    capsule_radius: tuple[float, float] = (0.015, 0.04)
    p_cube: float = 0.05


def sample_primitive_dims(rng: np.random.Generator, ranges: PrimitiveRanges, variant: type) -> PrimitiveShape:
    """Draw a randomly sized primitive of class ``variant``.

    The main axis always ends up the longest dimension. With probability
    ``p_cube`` a cuboid becomes an exact cube, and a cylinder or capsule gets
    ``length == 2 * radius``.
    """

    def draw(bounds):
        return float(rng.uniform(bounds[0], bounds[1]))

    cube = rng.random() < ranges.p_cube
    if variant is Cuboid:
        dims = [draw(ranges.cuboid_length), draw(ranges.cuboid_width), draw(ranges.cuboid_height)]
        if cube:
            return Cuboid(dims[1], dims[1], dims[1])
        longest = int(np.argmax(dims))
        length = dims.pop(longest)
        return Cuboid(length, dims[0], dims[1])
    if variant is Cylinder:
        length, radius = draw(ranges.cylinder_length), draw(ranges.cylinder_radius)
        if cube:
            return Cylinder(2.0 * radius, radius)
        if length < 2.0 * radius:
            length, radius = 2.0 * radius, length / 2.0
        return Cylinder(length, radius)
    if variant is Capsule:
        length, radius = draw(ranges.capsule_length), draw(ranges.capsule_radius)
        return Capsule(2.0 * radius if cube else length, radius)
    raise TypeError(f"not a primitive type: {variant!r}")


# --- tessellation -----------------------------------------------------------

def box_mesh(size, center=(0.0, 0.0, 0.0)) -> TriMesh:
    hx, hy, hz = (s / 2.0 for s in size)
    corners = np.array(
        [[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    ) + np.asarray(center, dtype=float)
    # corner index = 4*ix + 2*iy + iz; faces wound counter-clockwise seen from outside
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return TriMesh(corners, tris)


def lathe_mesh(profile: Sequence[tuple[float, float]], segments: int) -> TriMesh:
    """Surface of revolution about the X axis.

    ``profile`` lists (x, radius) pairs from one end to the other. Radii of
    zero at either end become a single pole vertex; otherwise the end is
    closed with a fan around a centre vertex.
    """
    angles = 2.0 * math.pi * np.arange(segments) / segments
    ring_cos, ring_sin = np.cos(angles), np.sin(angles)
    verts: list = []
    tris: list = []
    rings: list = []  # each ring is either an int (pole) or an index array

    for x, r in profile:
        if r == 0.0:
            rings.append(len(verts))
            verts.append([x, 0.0, 0.0])
        else:
            start = len(verts)
            verts.extend(np.stack([np.full(segments, x), r * ring_cos, r * ring_sin], axis=1))
            rings.append(np.arange(start, start + segments))

    for a, b in zip(rings[:-1], rings[1:]):
        for i in range(segments):
            j = (i + 1) % segments
            if isinstance(a, int):
                tris.append((a, b[j], b[i]))
            elif isinstance(b, int):
                tris.append((a[i], a[j], b))
            else:
                tris.append((a[i], a[j], b[j]))
                tris.append((a[i], b[j], b[i]))

    for end, outward in ((0, -1.0), (len(profile) - 1, 1.0)):
        ring = rings[end]
        if isinstance(ring, int):
            continue
        center = len(verts)
        verts.append([profile[end][0], 0.0, 0.0])
        for i in range(segments):
            j = (i + 1) % segments
            tris.append((center, ring[i], ring[j]) if outward > 0 else (center, ring[j], ring[i]))
    return _orient_outward(TriMesh(np.array(verts, dtype=float), tris))


def _orient_outward(mesh: TriMesh) -> TriMesh:
    # lathe rings can wind either way depending on profile direction; flip all
    # faces if the signed volume comes out negative
    a, b, c = (mesh.vertices[mesh.triangles[:, i]] for i in range(3))
    volume = np.einsum("ij,ij->i", a, np.cross(b, c)).sum()
    if volume < 0:
        return TriMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


@lru_cache(maxsize=4096)
def tessellate(shape: PrimitiveShape, segments: int = 24) -> TriMesh:
    """Watertight triangle mesh of a primitive in its object frame."""
    if segments < 3:
        raise PreconditionError(f"segments must be >= 3, got {segments}")
    _validate_primitive(shape)
    if isinstance(shape, Cuboid):
        return box_mesh(shape.dims)
    half = shape.length / 2.0
    r = shape.radius
    if isinstance(shape, Cylinder):
        return lathe_mesh([(-half, r), (half, r)], segments)
    rings = max(2, segments // 4)
    # hemisphere latitudes from pole to equator, excluding the pole itself
    lats = [math.pi / 2 * k / rings for k in range(rings, -1, -1)]
    cap_neg = [(-half - r * math.sin(a), r * math.cos(a)) for a in lats]
    cap_pos = [(half + r * math.sin(a), r * math.cos(a)) for a in reversed(lats)]
    cap_neg[0] = (-half - r, 0.0)
    cap_pos[-1] = (half + r, 0.0)
    return lathe_mesh(cap_neg + cap_pos, segments)


# --- Wavefront OBJ ----------------------------------------------------------

def load_obj(text: str) -> TriMesh:
    """Parse the ``v``/``f`` subset of Wavefront OBJ.

    Polygonal faces are fan-triangulated; ``vt``, ``vn`` and grouping or
    material records are ignored. Face indices may be negative (relative).
    """
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, tuple[int, int, int]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag == "v":
            if len(tokens) < 4:
                raise MeshFormatError("vertex record needs 3 coordinates", lineno)
            try:
                xyz = tuple(float(t) for t in tokens[1:4])
            except ValueError:
                raise MeshFormatError(f"non-numeric vertex coordinate in {line!r}", lineno) from None
            if not all(math.isfinite(c) for c in xyz):
                raise MeshFormatError("non-finite vertex coordinate", lineno)
            vertices.append(xyz)
        elif tag == "f":
            if len(tokens) < 4:
                raise MeshFormatError("face record needs at least 3 vertices", lineno)
            idx = []
            for tok in tokens[1:]:
                try:
                    i = int(tok.split("/", 1)[0])
                except ValueError:
                    raise MeshFormatError(f"bad face index {tok!r}", lineno) from None
                if i == 0:
                    raise MeshFormatError("face index 0 is invalid (OBJ is 1-based)", lineno)
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            for k in range(1, len(idx) - 1):
                faces.append((lineno, (idx[0], idx[k], idx[k + 1])))
    if not faces:
        raise MeshFormatError("empty mesh: no faces")
    n = len(vertices)
    for lineno, tri in faces:
        if min(tri) < 0 or max(tri) >= n:
            raise MeshFormatError(f"face index out of range (mesh has {n} vertices)", lineno)
    return TriMesh(np.array(vertices, dtype=float), np.array([t for _, t in faces]))


def dump_obj(mesh: TriMesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    return "\n".join(lines) + "\n"


# --- keypoint annotations ---------------------------------------------------

def pad_keypoints(kps: Sequence[tuple], K: int) -> list[tuple]:
    """Pad ``(point, flag)`` entries with ``(origin, 0)`` up to length K."""
    if len(kps) > K:
        raise AnnotationError(f"{len(kps)} keypoints exceed the budget K={K}")
    out = list(kps)
    out.extend((np.zeros(3), 0) for _ in range(K - len(out)))
    return out


_ANNOTATION_KEYS = {"category", "kind", "keypoints"}


def parse_keypoint_annotation(doc: dict, K: int = COMPLEX_K) -> tuple[GraspManifold, str]:
    if not isinstance(doc, dict):
        raise AnnotationError("annotation must be a JSON object")
    missing = _ANNOTATION_KEYS - doc.keys()
    extra = doc.keys() - _ANNOTATION_KEYS
    if missing or extra:
        raise AnnotationError(f"annotation keys: missing {sorted(missing)}, unexpected {sorted(extra)}")
    category = doc["category"]
    if not isinstance(category, str) or not category:
        raise AnnotationError("category must be a non-empty string")
    try:
        kind = ManifoldKind(doc["kind"].lower() if isinstance(doc["kind"], str) else doc["kind"])
    except ValueError:
        raise AnnotationError(f"unknown manifold kind {doc['kind']!r}") from None
    kps = doc["keypoints"]
    if not isinstance(kps, list) or not all(
        isinstance(p, list) and len(p) == 3 and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)
        for p in kps
    ):
        raise AnnotationError("keypoints must be a list of [x, y, z] numbers")
    if not 2 <= len(kps) <= K:
        raise AnnotationError(f"keypoint count {len(kps)} outside [2, {K}]")
    return GraspManifold(np.array(kps, dtype=float), kind), category


def load_keypoint_annotation(text: str, K: int = COMPLEX_K) -> tuple[GraspManifold, str]:
    """Parse a ``.manifold.json`` sidecar into ``(manifold, category_name)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"invalid JSON: {exc}") from None
    return parse_keypoint_annotation(doc, K)


def dump_keypoint_annotation(manifold: GraspManifold, category: str) -> str:
    return json.dumps(
        {"category": category, "kind": manifold.kind.value, "keypoints": manifold.keypoints.tolist()}, indent=2
    )
