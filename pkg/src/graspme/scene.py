"""Domain-randomised tabletop scene composition.

Objects are not dropped with a physics engine. Each one gets an analytic
stable rest pose on the z=0 table plane and an XY position drawn by rejection
sampling so that no two objects' vertical bounding cylinders intersect.
Projected (visual) overlap is still allowed, which keeps occlusion in the
renders.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence, Union

import numpy as np

from .errors import SceneError, SchemaError
from .geometry import Camera, CameraIntrinsics, Pose, rotation_about_axis, sample_hemisphere_camera
from .shapes import (
    Capsule,
    Cuboid,
    Cylinder,
    GraspManifold,
    ObjectTemplate,
    PrimitiveRanges,
    PrimitiveShape,
    TriMesh,
    manifold_for_primitive,
    sample_primitive_dims,
    tessellate,
)

Range = tuple[float, float]


@dataclass(frozen=True)
class GenerationConfig:
    object_count: tuple[int, int] = (1, 6)
    cuboid_length: Range = (0.08, 0.25)
    cuboid_width: Range = (0.03, 0.08)
    cuboid_height: Range = (0.03, 0.08)
    cylinder_length: Range = (0.08, 0.25)
    cylinder_radius: Range = (0.015, 0.04)
    capsule_length: Range = (0.06, 0.2)
    capsule_radius: Range = (0.015, 0.04)
    p_cube: float = 0.05
    p_lying: float = 0.8
    mesh_jitter_deg: float = 10.0
    object_color: Range = (0.0, 1.0)
    table_color: Range = (0.0, 1.0)
    table_extent: Range = (1.0, 1.0)
    light_distance: Range = (2.0, 4.0)
    light_elevation_deg: Range = (20.0, 90.0)
    light_intensity: Range = (0.5, 1.5)
    light_ambient: Range = (0.2, 0.4)
    camera_distance: Range = (0.8, 1.2)
    camera_elevation_deg: Range = (40.0, 85.0)
    vertical_fov_deg: float = 60.0
    image_size: tuple[int, int] = (512, 512)
    max_retries: int = 50
    segments: int = 20

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (list, tuple)):
                if len(value) != 2:
                    raise SchemaError("expected a [min, max] pair", f.name)
                if f.name != "image_size" and value[0] > value[1]:
                    raise SchemaError(f"range is not ordered: {list(value)}", f.name)
                object.__setattr__(self, f.name, tuple(value))
        if self.object_count[0] < 1:
            raise SchemaError("object count must be at least 1", "object_count")
        if self.max_retries < 1:
            raise SchemaError("must be >= 1", "max_retries")
        if self.segments < 3:
            raise SchemaError("must be >= 3", "segments")
        for name in ("cuboid_length", "cuboid_width", "cuboid_height", "cylinder_length", "cylinder_radius",
                     "capsule_length", "capsule_radius", "table_extent", "light_distance", "light_intensity",
                     "camera_distance", "image_size"):
            if min(getattr(self, name)) <= 0:
                raise SchemaError("values must be positive", name)
        for name in ("p_cube", "p_lying"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SchemaError("probability must lie in [0, 1]", name)
        for name in ("object_color", "table_color", "light_ambient"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi > 1:
                raise SchemaError("values must lie in [0, 1]", name)
        lo, hi = self.camera_elevation_deg
        if lo < 0 or hi > 90:
            raise SchemaError("elevation must lie in [0, 90] degrees", "camera_elevation_deg")
        if not 0 < self.vertical_fov_deg < 180:
            raise SchemaError("must lie in (0, 180)", "vertical_fov_deg")

    @classmethod
    def from_dict(cls, doc: dict) -> GenerationConfig:
        if not isinstance(doc, dict):
            raise SchemaError("config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise SchemaError(f"unknown config keys: {unknown}")
        kwargs = {}
        for key, value in doc.items():
            default = known[key].default
            if isinstance(default, tuple):
                if not (isinstance(value, list) and all(_is_number(v) for v in value)):
                    raise SchemaError("expected a [min, max] list of numbers", key)
                if isinstance(default[0], int) and not all(isinstance(v, int) for v in value):
                    raise SchemaError("expected integers", key)
                value = tuple(value)
            elif isinstance(default, int):
                if not isinstance(value, int) or isinstance(value, bool):
                    raise SchemaError("expected an integer", key)
            elif not _is_number(value):
                raise SchemaError("expected a number", key)
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> GenerationConfig:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def primitive_ranges(self) -> PrimitiveRanges:
        return PrimitiveRanges(
            cuboid_length=self.cuboid_length,
            cuboid_width=self.cuboid_width,
            cuboid_height=self.cuboid_height,
            cylinder_length=self.cylinder_length,
            cylinder_radius=self.cylinder_radius,
            capsule_length=self.capsule_length,
            capsule_radius=self.capsule_radius,
            p_cube=self.p_cube,
        )

    def intrinsics(self) -> CameraIntrinsics:
        width, height = self.image_size
        return CameraIntrinsics.from_fov(width, height, self.vertical_fov_deg)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


@dataclass(frozen=True)
class Light:
    position: tuple[float, float, float]
    intensity: float
    ambient: float


@dataclass(frozen=True)
class Footprint:
    """Vertical bounding cylinder of a placed object."""

    x: float
    y: float
    radius: float
    z_min: float
    z_max: float


def footprints_overlap(a: Footprint, b: Footprint) -> bool:
    if a.z_max < b.z_min or b.z_max < a.z_min:
        return False
    return math.hypot(a.x - b.x, a.y - b.y) < a.radius + b.radius


@dataclass(frozen=True, eq=False)
class SceneObject:
    template: ObjectTemplate
    instance_shape: Union[PrimitiveShape, TriMesh]
    pose: Pose  # object -> world
    color: tuple[float, float, float]
    instance_id: int

    @property
    def is_primitive(self) -> bool:
        return not isinstance(self.instance_shape, TriMesh)

    @property
    def manifold(self) -> GraspManifold:
        if self.is_primitive:
            return manifold_for_primitive(self.instance_shape)
        return self.template.manifold

    @property
    def K(self) -> int:
        return self.template.K

    def mesh(self, segments: int = 20) -> TriMesh:
        if self.is_primitive:
            return tessellate(self.instance_shape, segments)
        return self.instance_shape

    def world_vertices(self, segments: int = 20) -> np.ndarray:
        return self.pose.apply(self.mesh(segments).vertices)

    def footprint(self, segments: int = 20) -> Footprint:
        return _footprint(self.world_vertices(segments), self.pose.translation)


def _footprint(world_vertices: np.ndarray, center: np.ndarray) -> Footprint:
    radius = float(np.max(np.hypot(world_vertices[:, 0] - center[0], world_vertices[:, 1] - center[1])))
    return Footprint(float(center[0]), float(center[1]), radius,
                     float(world_vertices[:, 2].min()), float(world_vertices[:, 2].max()))


def overlap_test(a: SceneObject, b: SceneObject, segments: int = 20) -> bool:
    """True when the objects' vertical bounding cylinders intersect."""
    return footprints_overlap(a.footprint(segments), b.footprint(segments))


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple[SceneObject, ...]
    table_color: tuple[float, float, float]
    table_extent: tuple[float, float]
    light: Light
    camera: Camera
    seed: int | None = None

    def object_by_id(self, instance_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.instance_id == instance_id:
                return obj
        raise KeyError(instance_id)

    def to_dict(self) -> dict:
        """Plain-data description, mainly for reproducibility checks and debugging."""
        def shape_dict(shape):
            if isinstance(shape, TriMesh):
                return {"type": "mesh", "vertices": len(shape.vertices), "triangles": len(shape.triangles)}
            return {"type": type(shape).__name__.lower(), **asdict(shape)}

        k = self.camera.intrinsics
        return {
            "seed": self.seed,
            "table_color": list(self.table_color),
            "table_extent": list(self.table_extent),
            "light": asdict(self.light),
            "camera": {
                "intrinsics": asdict(k),
                "rotation": self.camera.extrinsic.rotation.tolist(),
                "translation": self.camera.extrinsic.translation.tolist(),
            },
            "objects": [
                {
                    "instance_id": o.instance_id,
                    "category": o.template.category_name,
                    "shape": shape_dict(o.instance_shape),
                    "rotation": o.pose.rotation.tolist(),
                    "translation": o.pose.translation.tolist(),
                    "color": list(o.color),
                }
                for o in self.objects
            ],
        }


# object axis a -> world +Z
_AXIS_UP = (
    np.array([[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
    np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
    np.eye(3),
)
_FLIP = np.diag([1.0, -1.0, -1.0])


def rest_pose(shape, rng: np.random.Generator, p_lying: float = 0.8, jitter_deg: float = 10.0) -> Pose:
    """Statically stable pose on the z=0 plane with its origin above (0, 0).

    Cuboids sit on one of their three face pairs (uniform), cylinders lie on
    their side with probability ``p_lying`` and stand otherwise, capsules
    always lie. Meshes rest on the largest face of their bounding box, tilted
    by up to ``jitter_deg`` about both horizontal axes. Yaw is uniform.
    """
    tilt = np.eye(3)
    if isinstance(shape, Cuboid):
        axis = int(rng.integers(3))
        up = _AXIS_UP[axis]
        flip = rng.random() < 0.5
        height = shape.dims[axis] / 2.0
    elif isinstance(shape, Cylinder):
        lying = rng.random() < p_lying
        flip = rng.random() < 0.5
        up = np.eye(3) if lying else _AXIS_UP[0]
        height = shape.radius if lying else shape.length / 2.0
    elif isinstance(shape, Capsule):
        flip = rng.random() < 0.5
        up = np.eye(3)
        height = shape.radius
    elif isinstance(shape, TriMesh):
        lo, hi = shape.bounds()
        up = _AXIS_UP[int(np.argmin(hi - lo))]
        flip = rng.random() < 0.5
        jitter = np.radians(rng.uniform(-jitter_deg, jitter_deg, size=2))
        tilt = rotation_about_axis([1.0, 0.0, 0.0], jitter[0]) @ rotation_about_axis([0.0, 1.0, 0.0], jitter[1])
        height = None
    else:
        raise TypeError(f"unsupported shape {shape!r}")

    yaw = rng.uniform(0.0, 2.0 * math.pi)
    rot = rotation_about_axis([0.0, 0.0, 1.0], yaw) @ tilt @ (_FLIP if flip else np.eye(3)) @ up
    if height is None:
        height = -float((shape.vertices @ rot.T)[:, 2].min())
    return Pose(rot, np.array([0.0, 0.0, height]))


def _sample_light(rng: np.random.Generator, config: GenerationConfig) -> Light:
    dist = rng.uniform(*config.light_distance)
    elev = math.radians(rng.uniform(*config.light_elevation_deg))
    azim = rng.uniform(0.0, 2.0 * math.pi)
    pos = dist * np.array([math.cos(elev) * math.cos(azim), math.cos(elev) * math.sin(azim), math.sin(elev)])
    return Light(tuple(float(c) for c in pos), float(rng.uniform(*config.light_intensity)),
                 float(rng.uniform(*config.light_ambient)))


def generate_scene(rng: np.random.Generator, config: GenerationConfig, templates: Sequence[ObjectTemplate],
                   seed: int | None = None) -> Scene:
    """Sample one randomised scene. Objects that cannot be placed are skipped."""
    if not templates:
        raise SceneError("no object templates given")
    ranges = config.primitive_ranges()
    half_x, half_y = config.table_extent[0] / 2.0, config.table_extent[1] / 2.0
    count = int(rng.integers(config.object_count[0], config.object_count[1] + 1))

    placed: list[SceneObject] = []
    footprints: list[Footprint] = []
    for _ in range(count):
        template = templates[int(rng.integers(len(templates)))]
        if template.is_primitive:
            shape = sample_primitive_dims(rng, ranges, type(template.geometry))
        else:
            shape = template.geometry
        color = tuple(float(c) for c in rng.uniform(*config.object_color, size=3))
        pose = rest_pose(shape, rng, config.p_lying, config.mesh_jitter_deg)
        mesh = tessellate(shape, config.segments) if template.is_primitive else shape
        local = mesh.vertices @ pose.rotation.T + pose.translation  # origin above (0, 0)
        base = _footprint(local, np.zeros(3))
        span_x = max(half_x - min(base.radius, half_x), 0.0)
        span_y = max(half_y - min(base.radius, half_y), 0.0)

        for _attempt in range(config.max_retries):
            x, y = rng.uniform(-span_x, span_x), rng.uniform(-span_y, span_y)
            candidate = Footprint(float(x), float(y), base.radius, base.z_min, base.z_max)
            if not any(footprints_overlap(candidate, other) for other in footprints):
                break
        else:
            continue
        world_pose = Pose(pose.rotation, pose.translation + np.array([x, y, 0.0]))
        placed.append(SceneObject(template, shape, world_pose, color, instance_id=len(placed) + 1))
        footprints.append(candidate)

    if not placed:
        raise SceneError("every object placement failed")

    table_color = tuple(float(c) for c in rng.uniform(*config.table_color, size=3))
    light = _sample_light(rng, config)
    camera = sample_hemisphere_camera(
        rng,
        center=(0.0, 0.0, 0.0),
        r_min=config.camera_distance[0],
        r_max=config.camera_distance[1],
        elev_min=math.radians(config.camera_elevation_deg[0]),
        elev_max=math.radians(config.camera_elevation_deg[1]),
        intrinsics=config.intrinsics(),
    )
    return Scene(tuple(placed), table_color, tuple(config.table_extent), light, camera, seed)


def scene_rng(master_seed: int, scene_index: int) -> np.random.Generator:
    """Independent per-scene stream, identical no matter which worker draws it."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(scene_index)]))
