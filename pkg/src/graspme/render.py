"""Software z-buffer rasterizer and per-object 2D annotation.

One sample per pixel at (i + 0.5, j + 0.5), no anti-aliasing, no back-face
culling. Depth is interpolated perspective-correctly (1/z is affine in screen
space) and stored as camera-frame Z. When two fragments land at exactly the
same depth the lower instance id wins, and the table (id 0) is drawn first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import project_points
from .scene import Scene, SceneObject
from .shapes import ManifoldKind, pad_keypoints

# max (triangle, pixel) candidates evaluated in one vectorised batch
_CHUNK = 1 << 22


@dataclass(frozen=True)
class RenderSettings:
    segments: int = 20
    near: float = 1e-3
    background: tuple[int, int, int] = (0, 0, 0)


@dataclass(frozen=True, eq=False)
class FrameBuffers:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64, +inf where nothing was drawn
    instance_id: np.ndarray  # (H, W) int32, 0 = table/background

    @property
    def shape(self) -> tuple[int, int]:
        return self.instance_id.shape


@dataclass(frozen=True, eq=False)
class AnnotatedObject:
    instance_id: int
    category_name: str
    bbox: tuple[int, int, int, int]
    mask: np.ndarray  # (H, W) bool
    keypoints: list[tuple[float, float, int]]
    kind: ManifoldKind

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass
class TriangleSoup:
    """World-space triangles with per-triangle owner id and base colour."""

    vertices: np.ndarray  # (T, 3, 3)
    ids: np.ndarray  # (T,)
    colors: np.ndarray  # (T, 3) float in [0, 1]


def scene_triangles(scene: Scene, segments: int = 20) -> TriangleSoup:
    """Table quad followed by every object, in ascending instance id."""
    hx, hy = scene.table_extent[0] / 2.0, scene.table_extent[1] / 2.0
    corners = np.array([[-hx, -hy, 0.0], [hx, -hy, 0.0], [hx, hy, 0.0], [-hx, hy, 0.0]])
    parts = [corners[[[0, 1, 2], [0, 2, 3]]]]
    ids = [np.zeros(2, dtype=np.int32)]
    colors = [np.tile(scene.table_color, (2, 1))]
    for obj in sorted(scene.objects, key=lambda o: o.instance_id):
        mesh = obj.mesh(segments)
        world = obj.pose.apply(mesh.vertices)
        parts.append(world[mesh.triangles])
        ids.append(np.full(len(mesh.triangles), obj.instance_id, dtype=np.int32))
        colors.append(np.tile(obj.color, (len(mesh.triangles), 1)))
    return TriangleSoup(np.concatenate(parts), np.concatenate(ids), np.concatenate(colors))


def shade(soup: TriangleSoup, eye: np.ndarray, light) -> np.ndarray:
    """Flat Lambert shading per triangle, returned as (T, 3) uint8.

    Normals are flipped towards the camera, so winding does not matter.
    """
    v = soup.vertices
    normals = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)
    centroids = v.mean(axis=1)
    facing = np.einsum("ij,ij->i", normals, eye - centroids)
    normals[facing < 0] *= -1.0
    to_light = np.asarray(light.position) - centroids
    to_light /= np.linalg.norm(to_light, axis=1, keepdims=True)
    lambert = np.maximum(0.0, np.einsum("ij,ij->i", normals, to_light))
    value = soup.colors * (light.ambient + light.intensity * lambert)[:, None]
    return np.rint(np.clip(value, 0.0, 1.0) * 255.0).astype(np.uint8)


def _clip_near(tri: np.ndarray, near: float) -> list[np.ndarray]:
    """Clip one camera-space triangle against z >= near (Sutherland-Hodgman)."""
    out = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        a_in, b_in = a[2] >= near, b[2] >= near
        if a_in:
            out.append(a)
        if a_in != b_in:
            t = (near - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return [np.stack([out[0], out[k], out[k + 1]]) for k in range(1, len(out) - 1)]


def rasterize(scene: Scene, settings: RenderSettings | None = None) -> FrameBuffers:
    settings = settings or RenderSettings()
    cam = scene.camera
    k = cam.intrinsics
    width, height = k.width, k.height

    soup = scene_triangles(scene, settings.segments)
    colors = shade(soup, cam.eye, scene.light)
    rot, trans = cam.extrinsic.rotation, cam.extrinsic.translation
    tris = soup.vertices @ rot.T + trans  # camera frame, (T, 3, 3)
    ids = soup.ids

    z = tris[:, :, 2]
    inside = (z >= settings.near).all(axis=1)
    partial = ~inside & (z >= settings.near).any(axis=1)
    if partial.any():
        extra, extra_src = [], []
        for t in np.flatnonzero(partial):
            for piece in _clip_near(tris[t], settings.near):
                extra.append(piece)
                extra_src.append(t)
        keep = np.flatnonzero(inside)
        src = np.concatenate([keep, np.array(extra_src, dtype=np.int64)])
        # keep the original triangle order so depth ties resolve identically
        order = np.argsort(src, kind="stable")
        tris = np.concatenate([tris[keep], np.array(extra).reshape(-1, 3, 3)])[order]
        src = src[order]
    else:
        src = np.flatnonzero(inside)
        tris = tris[src]

    depth = np.full(height * width, np.inf)
    winner = np.full(height * width, -1, dtype=np.int64)
    if len(tris):
        _scan(tris, k, width, height, depth, winner)

    tri_id = np.append(ids[src], 0)  # index -1 -> background id 0
    instance_id = tri_id[winner].reshape(height, width).astype(np.int32)
    palette = np.vstack([colors[src], np.array(settings.background, dtype=np.uint8)])
    rgb = palette[winner].reshape(height, width, 3)
    return FrameBuffers(rgb, depth.reshape(height, width), instance_id)


def _scan(tris: np.ndarray, k, width: int, height: int, depth: np.ndarray, winner: np.ndarray) -> None:
    """Rasterize camera-space triangles into flat depth/winner buffers in place."""
    zs = tris[:, :, 2]
    us = k.cx + k.fx * tris[:, :, 0] / zs
    vs = k.cy + k.fy * tris[:, :, 1] / zs

    # pixel i is covered when its sample point i + 0.5 lies in [min, max]
    x0 = np.maximum(np.ceil(us.min(axis=1) - 0.5), 0)
    x1 = np.minimum(np.floor(us.max(axis=1) - 0.5), width - 1)
    y0 = np.maximum(np.ceil(vs.min(axis=1) - 0.5), 0)
    y1 = np.minimum(np.floor(vs.max(axis=1) - 0.5), height - 1)

    # edge function E_ab(p) = (b - a) x (p - a), written as A*px + B*py + C
    area = (us[:, 1] - us[:, 0]) * (vs[:, 2] - vs[:, 0]) - (vs[:, 1] - vs[:, 0]) * (us[:, 2] - us[:, 0])
    ok = (x0 <= x1) & (y0 <= y1) & (np.abs(area) > 1e-12) & np.isfinite(area)
    idx = np.flatnonzero(ok)
    if not len(idx):
        return
    x0, x1, y0, y1 = (np.where(ok, a, 0).astype(np.int64) for a in (x0, x1, y0, y1))
    bw = (x1[idx] - x0[idx] + 1).astype(np.int64)
    bh = (y1[idx] - y0[idx] + 1).astype(np.int64)
    counts = bw * bh

    coef = np.empty((len(idx), 3, 3))  # [triangle, barycentric slot, (A, B, C)]
    for slot, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
        ua, va, ub, vb = us[idx, a], vs[idx, a], us[idx, b], vs[idx, b]
        inv = 1.0 / area[idx]
        coef[:, slot, 0] = -(vb - va) * inv
        coef[:, slot, 1] = (ub - ua) * inv
        coef[:, slot, 2] = ((vb - va) * ua - (ub - ua) * va) * inv
    inv_z = 1.0 / zs[idx]

    start = 0
    while start < len(idx):
        cum = np.cumsum(counts[start:])
        stop = start + max(1, int(np.searchsorted(cum, _CHUNK, side="right")))
        sl = slice(start, stop)
        _scan_chunk(idx[sl], x0[idx[sl]], y0[idx[sl]], bw[sl], counts[sl], coef[sl], inv_z[sl],
                    width, depth, winner)
        start = stop


def _scan_chunk(tri_idx, x0, y0, bw, counts, coef, inv_z, width, depth, winner) -> None:
    total = int(counts.sum())
    local = np.repeat(np.arange(len(tri_idx)), counts)
    offset = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    px = x0[local] + offset % bw[local]
    py = y0[local] + offset // bw[local]
    sx, sy = px + 0.5, py + 0.5

    c = coef[local]
    l0 = c[:, 0, 0] * sx + c[:, 0, 1] * sy + c[:, 0, 2]
    l1 = c[:, 1, 0] * sx + c[:, 1, 1] * sy + c[:, 1, 2]
    l2 = c[:, 2, 0] * sx + c[:, 2, 1] * sy + c[:, 2, 2]
    hit = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
    if not hit.any():
        return
    local, l0, l1, l2 = local[hit], l0[hit], l1[hit], l2[hit]
    iz = inv_z[local]
    frag_depth = 1.0 / (l0 * iz[:, 0] + l1 * iz[:, 1] + l2 * iz[:, 2])
    pix = (py[hit] * width + px[hit]).astype(np.int64)
    tri = tri_idx[local]

    # fragments arrive in triangle order; a stable sort keeps that order among
    # equal depths, so the lowest triangle (hence lowest id) wins ties
    order = np.lexsort((frag_depth, pix))
    pix, frag_depth, tri = pix[order], frag_depth[order], tri[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    pix, frag_depth, tri = pix[first], frag_depth[first], tri[first]

    cur_d, cur_t = depth[pix], winner[pix]
    better = (frag_depth < cur_d) | ((frag_depth == cur_d) & ((cur_t < 0) | (tri < cur_t)))
    depth[pix[better]] = frag_depth[better]
    winner[pix[better]] = tri[better]


# --- annotation ---------------------------------------------------------------

def pixel_index(coord: float) -> int:
    """Pixel whose sample point (index + 0.5) is nearest to ``coord``.

    Equivalent to rounding ``coord - 0.5`` half-up, i.e. ``floor(coord)``.
    """
    return math.floor(coord)


def bbox_from_mask(instance_id: np.ndarray, obj_id: int) -> tuple[int, int, int, int] | None:
    """``(x_min, y_min, x_max - x_min, y_max - y_min)`` of a mask, or None if empty."""
    rows = np.flatnonzero((instance_id == obj_id).any(axis=1))
    if not len(rows):
        return None
    cols = np.flatnonzero((instance_id == obj_id).any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1] - cols[0]), int(rows[-1] - rows[0])


def annotate_keypoints(scene: Scene, buffers: FrameBuffers, obj: SceneObject) -> list[tuple[float, float, int]]:
    """Project the object's manifold keypoints and assign COCO visibility flags.

    2: projects onto a pixel owned by this object; 1: exists but is occluded,
    behind the camera or outside the frame; 0: padding slot.
    """
    manifold = obj.manifold
    padded = pad_keypoints([(p, 1) for p in manifold.keypoints], obj.K)
    points = np.array([p for p, _ in padded])
    uvz, valid = project_points(scene.camera, obj.pose.apply(points))
    height, width = buffers.shape
    out = []
    for (u, v, _), ok, (_, exists) in zip(uvz, valid, padded):
        if not ok:
            out.append((0.0, 0.0, 1 if exists else 0))
            continue
        u, v = float(u), float(v)
        if not exists:
            out.append((u, v, 0))
            continue
        px, py = pixel_index(u), pixel_index(v)
        seen = 0 <= px < width and 0 <= py < height and buffers.instance_id[py, px] == obj.instance_id
        out.append((u, v, 2 if seen else 1))
    return out


def apply_simple_swap(keypoints: list) -> list:
    """Move a visible second keypoint into the first slot when the first is not visible."""
    if len(keypoints) != 2:
        raise ValueError(f"swap applies to exactly 2 keypoints, got {len(keypoints)}")
    first, second = keypoints
    if first[-1] != 2 and second[-1] == 2:
        return [second, first]
    return list(keypoints)


def annotate_scene(scene: Scene, buffers: FrameBuffers) -> list[AnnotatedObject]:
    """One annotation per object with at least one visible pixel, in id order."""
    out = []
    for obj in sorted(scene.objects, key=lambda o: o.instance_id):
        mask = buffers.instance_id == obj.instance_id
        if not mask.any():
            continue
        bbox = bbox_from_mask(buffers.instance_id, obj.instance_id)
        kps = annotate_keypoints(scene, buffers, obj)
        if obj.is_primitive:
            kps = apply_simple_swap(kps)
        out.append(AnnotatedObject(obj.instance_id, obj.template.category_name, bbox, mask, kps,
                                   obj.manifold.kind))
    return out
