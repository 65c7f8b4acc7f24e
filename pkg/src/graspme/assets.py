"""Procedural stand-ins for the complex object set, plus template loaders.

The real complex-object meshes cannot be redistributed, so five shapes are
built here from boxes, lathes and tubes. Their manifold keypoints were
authored for this toolkit and are not the original annotations. Each mesh is
modelled so that its smallest bounding-box extent is along +Z, which makes
the largest bounding face the one it rests on.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import AnnotationError
from .shapes import (
    COMPLEX_K,
    SIMPLE_K,
    Capsule,
    Cuboid,
    Cylinder,
    GraspManifold,
    ManifoldKind,
    ObjectTemplate,
    TriMesh,
    box_mesh,
    lathe_mesh,
    load_keypoint_annotation,
    load_obj,
    manifold_for_primitive,
)


def _tube(centerline: np.ndarray, radii: np.ndarray, segments: int) -> TriMesh:
    """Closed tube of varying radius around a planar (XY) centerline."""
    tangents = np.gradient(centerline, axis=0)
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
    up = np.array([0.0, 0.0, 1.0])
    sides = np.cross(tangents, up)
    angles = 2.0 * math.pi * np.arange(segments) / segments
    verts = []
    for c, s, r in zip(centerline, sides, radii):
        verts.extend(c + r * (np.cos(a) * s + np.sin(a) * up) for a in angles)
    n_rings = len(centerline)
    tris = []
    for k in range(n_rings - 1):
        a0, b0 = k * segments, (k + 1) * segments
        for i in range(segments):
            j = (i + 1) % segments
            tris.append((a0 + i, b0 + i, b0 + j))
            tris.append((a0 + i, b0 + j, a0 + j))
    for ring, tip, flip in ((0, centerline[0] - tangents[0] * radii[0], False),
                            (n_rings - 1, centerline[-1] + tangents[-1] * radii[-1], True)):
        pole = len(verts)
        verts.append(tip)
        base = ring * segments
        for i in range(segments):
            j = (i + 1) % segments
            tris.append((pole, base + j, base + i) if flip else (pole, base + i, base + j))
    mesh = TriMesh(np.array(verts), tris)
    a, b, c = (mesh.vertices[mesh.triangles[:, i]] for i in range(3))
    if np.einsum("ij,ij->i", a, np.cross(b, c)).sum() < 0:
        mesh = TriMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def banana_mesh(segments: int = 16) -> TriMesh:
    s = np.linspace(-1.0, 1.0, 17)
    centerline = np.stack([0.095 * s, 0.035 * (1.0 - s**2) - 0.0175, np.zeros_like(s)], axis=1)
    radii = 0.004 + 0.016 * np.sqrt(np.clip(1.0 - s**2, 0.0, None))
    return _tube(centerline, radii, segments)


def banana_manifold() -> GraspManifold:
    s = np.array([-0.7, -0.35, 0.0, 0.35, 0.7])
    pts = np.stack([0.095 * s, 0.035 * (1.0 - s**2) - 0.0175, np.zeros_like(s)], axis=1)
    return GraspManifold(pts, ManifoldKind.LINE)


def bottle_mesh(segments: int = 20) -> TriMesh:
    profile = [(-0.11, 0.034), (0.03, 0.034), (0.055, 0.026), (0.07, 0.014), (0.11, 0.014)]
    return lathe_mesh(profile, segments)


def bottle_manifold() -> GraspManifold:
    return GraspManifold([[-0.08, 0.0, 0.0], [0.0, 0.0, 0.0], [0.09, 0.0, 0.0]], ManifoldKind.LINE)


def mug_mesh(segments: int = 20) -> TriMesh:
    up = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])  # lathe X axis -> world Z
    body = lathe_mesh([(-0.0375, 0.045), (0.0375, 0.045)], segments).transformed(up)
    handle = [
        box_mesh((0.032, 0.012, 0.01), center=(0.059, 0.0, 0.022)),
        box_mesh((0.032, 0.012, 0.01), center=(0.059, 0.0, -0.022)),
        box_mesh((0.01, 0.012, 0.054), center=(0.07, 0.0, 0.0)),
    ]
    return TriMesh.concatenate([body, *handle])


def mug_manifold() -> GraspManifold:
    return GraspManifold([[0.06, 0.0, 0.022], [0.07, 0.0, 0.0], [0.06, 0.0, -0.022]], ManifoldKind.LINE)


def gun_mesh(segments: int = 16) -> TriMesh:
    # lies on its side: the thin Y extent is modelled along Z
    barrel = box_mesh((0.18, 0.04, 0.03), center=(0.02, 0.03, 0.0))
    grip = box_mesh((0.035, 0.09, 0.03), center=(-0.05, -0.02, 0.0))
    return TriMesh.concatenate([barrel, grip])


def gun_manifold() -> GraspManifold:
    return GraspManifold([[-0.05, 0.01, 0.0], [-0.05, -0.055, 0.0]], ManifoldKind.LINE)


def camera_mesh(segments: int = 20) -> TriMesh:
    body = box_mesh((0.12, 0.05, 0.075))
    to_y = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])  # lathe X axis -> world Y
    lens = lathe_mesh([(0.025, 0.022), (0.055, 0.022)], segments).transformed(to_y)
    return TriMesh.concatenate([body, lens])


def camera_manifold() -> GraspManifold:
    return GraspManifold(
        [[-0.05, 0.0, -0.028], [0.05, 0.0, -0.028], [0.05, 0.0, 0.028], [-0.05, 0.0, 0.028]],
        ManifoldKind.SURFACE,
    )


STANDIN_BUILDERS = {
    "banana": (banana_mesh, banana_manifold),
    "bottle": (bottle_mesh, bottle_manifold),
    "mug": (mug_mesh, mug_manifold),
    "gun": (gun_mesh, gun_manifold),
    "camera": (camera_mesh, camera_manifold),
}


def simple_templates() -> list[ObjectTemplate]:
    """Nominal cuboid/cylinder/capsule templates; sizes are re-drawn per instance."""
    shapes = [("cuboid", Cuboid(0.15, 0.05, 0.05)), ("cylinder", Cylinder(0.15, 0.025)), ("capsule", Capsule(0.12, 0.025))]
    return [ObjectTemplate(name, shape, manifold_for_primitive(shape), SIMPLE_K) for name, shape in shapes]


def standin_templates() -> list[ObjectTemplate]:
    return [
        ObjectTemplate(name, mesh(), manifold(), COMPLEX_K) for name, (mesh, manifold) in STANDIN_BUILDERS.items()
    ]


def load_mesh_templates(directory: str | Path, K: int = COMPLEX_K) -> list[ObjectTemplate]:
    """Load every ``<name>.obj`` with a ``<name>.manifold.json`` sidecar, sorted by name."""
    directory = Path(directory)
    templates = []
    for obj_path in sorted(directory.glob("*.obj")):
        sidecar = obj_path.with_name(obj_path.stem + ".manifold.json")
        if not sidecar.exists():
            raise AnnotationError(f"{obj_path.name}: missing sidecar {sidecar.name}")
        mesh = load_obj(obj_path.read_text())
        manifold, category = load_keypoint_annotation(sidecar.read_text(), K)
        templates.append(ObjectTemplate(category, mesh, manifold, K))
    return templates


def family_templates(family: str, mesh_dir: str | Path | None = None) -> list[ObjectTemplate]:
    if family == "simple":
        return simple_templates()
    if family == "complex":
        templates = standin_templates()
        if mesh_dir is not None:
            templates += load_mesh_templates(mesh_dir)
        names = [t.category_name for t in templates]
        if len(set(names)) != len(names):
            raise AnnotationError(f"duplicate category names among templates: {names}")
        return templates
    raise ValueError(f"unknown family {family!r}")
