"""Flat-shaded z-buffer rasterizer producing RGB, depth and instance-id maps.

Pixels are sampled at their centers with a top-left fill rule. Depth is the
camera-space z of the nearest surface, interpolated perspective-correctly.
Ties in depth go to the triangle listed first (fridge before objects, objects
in instance order), so output does not depend on rasterization order.

Shading per pixel is ``albedo * (ambient + sum_l max(0, n.l) * I_l / (1 + d_l^2))``
clamped to [0, 1] and gamma-encoded with exponent 1/2.2. Surfaces are two-sided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .composer import Scene

NEAR_PLANE = 0.01
GAMMA = 2.2
BACKGROUND_DEPTH = np.inf
TRAY_SHADE = 0.85  # tray albedo relative to the walls
_CHUNK_SAMPLES = 1 << 20
_BATCH_MAX = 64


@dataclass(eq=False)
class RenderOutput:
    """Render buffers over a pixel window whose top-left pixel is ``origin`` in image coordinates."""

    rgb: np.ndarray | None  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64 meters, +inf where nothing was hit
    instance: np.ndarray  # (H, W) uint16, 0 = fridge or background
    origin: tuple[int, int] = (0, 0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.instance.shape

    def pixel_count(self, instance_id: int, frame: tuple[int, int] | None = None) -> int:
        """Pixels carrying ``instance_id``, optionally only those inside a ``(width, height)`` frame at (0, 0)."""
        mask = self.instance == instance_id
        if frame is not None:
            ox, oy = self.origin
            h, w = mask.shape
            x0, y0 = max(0, -ox), max(0, -oy)
            x1, y1 = min(w, frame[0] - ox), min(h, frame[1] - oy)
            if x1 <= x0 or y1 <= y0:
                return 0
            mask = mask[y0:y1, x0:x1]
        return int(np.count_nonzero(mask))


def fridge_triangles(fridge) -> tuple[np.ndarray, np.ndarray]:
    """World-space fridge triangles (T, 3, 3) and a per-triangle flag marking tray surfaces."""
    w, h, d = fridge.width / 2, fridge.height, fridge.depth
    quads = [
        [(-w, 0, d), (w, 0, d), (w, h, d), (-w, h, d)],  # back wall
        [(-w, 0, 0), (-w, 0, d), (-w, h, d), (-w, h, 0)],  # left
        [(w, 0, 0), (w, h, 0), (w, h, d), (w, 0, d)],  # right
        [(-w, 0, 0), (w, 0, 0), (w, 0, d), (-w, 0, d)],  # floor
        [(-w, h, 0), (-w, h, d), (w, h, d), (w, h, 0)],  # ceiling
    ]
    tray = []
    th = fridge.tray_thickness
    for y in fridge.trays:
        lo, hi = y - th, y
        tray += [
            [(-w, hi, 0), (-w, hi, d), (w, hi, d), (w, hi, 0)],
            [(-w, lo, 0), (w, lo, 0), (w, lo, d), (-w, lo, d)],
            [(-w, lo, 0), (-w, hi, 0), (w, hi, 0), (w, lo, 0)],  # front edge
        ]
    tris, is_tray = [], []
    for k, q in enumerate(quads + tray):
        q = np.array(q, dtype=np.float64)
        tris += [q[[0, 1, 2]], q[[0, 2, 3]]]
        is_tray += [k >= len(quads)] * 2
    return np.array(tris), np.array(is_tray)


def _clip_near(tris: np.ndarray, near: float) -> tuple[np.ndarray, np.ndarray]:
    """Clip camera-space triangles against z = near; returns (triangles, source index)."""
    inside = tris[:, :, 2] >= near
    n_in = inside.sum(axis=1)
    keep = np.nonzero(n_in == 3)[0]
    out = [tris[keep]]
    src = [keep]
    for i in np.nonzero((n_in > 0) & (n_in < 3))[0]:
        poly = []
        for k in range(3):
            a, b = tris[i, k], tris[i, (k + 1) % 3]
            ina, inb = a[2] >= near, b[2] >= near
            if ina:
                poly.append(a)
            if ina != inb:
                s = (near - a[2]) / (b[2] - a[2])
                p = a + s * (b - a)
                p[2] = near
                poly.append(p)
        for k in range(1, len(poly) - 1):
            out.append(np.array([[poly[0], poly[k], poly[k + 1]]]))
            src.append(np.array([i]))
    return np.concatenate(out).reshape(-1, 3, 3), np.concatenate(src).astype(np.int64)


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _top_left(ax, ay, bx, by):
    dy = by - ay
    return (dy < 0) | ((dy == 0) & (bx > ax))


class _ZBuffer:
    def __init__(self, w: int, h: int):
        self.depth = np.full(h * w, np.inf)
        self.tri = np.full(h * w, -1, dtype=np.int64)
        self.w, self.h = w, h

    def merge(self, pix, depth, tri):
        """Keep the lexicographically smallest (depth, tri) per pixel."""
        if pix.size == 0:
            return
        order = np.lexsort((tri, depth, pix))
        pix, depth, tri = pix[order], depth[order], tri[order]
        first = np.ones(pix.size, dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, depth, tri = pix[first], depth[first], tri[first]
        cd, ct = self.depth[pix], self.tri[pix]
        win = (depth < cd) | ((depth == cd) & (tri < ct))
        self.depth[pix[win]] = depth[win]
        self.tri[pix[win]] = tri[win]


def rasterize(uv: np.ndarray, z: np.ndarray, region: tuple[int, int, int, int]):
    """Z-buffer triangles given projected vertices ``uv`` (T,3,2) and depths ``z`` (T,3).

    ``region`` is (x0, y0, width, height) in pixel coordinates. Returns the
    depth buffer and the index of the winning triangle per pixel (-1 if none).
    """
    x0, y0, rw, rh = region
    zb = _ZBuffer(rw, rh)
    if len(uv) == 0 or rw <= 0 or rh <= 0:
        return zb.depth.reshape(rh, rw), zb.tri.reshape(rh, rw)
    ax, ay = uv[:, 0, 0], uv[:, 0, 1]
    bx, by = uv[:, 1, 0].copy(), uv[:, 1, 1].copy()
    cx, cy = uv[:, 2, 0].copy(), uv[:, 2, 1].copy()
    za, zb_, zc = z[:, 0], z[:, 1].copy(), z[:, 2].copy()
    area = _edge(ax, ay, bx, by, cx, cy)
    flip = area < 0
    bx[flip], cx[flip] = cx[flip], bx[flip].copy()
    by[flip], cy[flip] = cy[flip], by[flip].copy()
    zb_[flip], zc[flip] = zc[flip], zb_[flip].copy()
    area = np.abs(area)

    with np.errstate(invalid="ignore"):
        umin = np.minimum(np.minimum(ax, bx), cx)
        umax = np.maximum(np.maximum(ax, bx), cx)
        vmin = np.minimum(np.minimum(ay, by), cy)
        vmax = np.maximum(np.maximum(ay, by), cy)
        ix0 = np.maximum(np.ceil(np.clip(umin, x0 - 1, x0 + rw + 1) - 0.5), x0).astype(np.int64)
        ix1 = np.minimum(np.floor(np.clip(umax, x0 - 1, x0 + rw + 1) - 0.5), x0 + rw - 1).astype(np.int64)
        iy0 = np.maximum(np.ceil(np.clip(vmin, y0 - 1, y0 + rh + 1) - 0.5), y0).astype(np.int64)
        iy1 = np.minimum(np.floor(np.clip(vmax, y0 - 1, y0 + rh + 1) - 0.5), y0 + rh - 1).astype(np.int64)
    live = (area > 0) & (ix1 >= ix0) & (iy1 >= iy0) & np.isfinite(area)
    size = np.maximum(ix1 - ix0, iy1 - iy0) + 1
    tl0 = _top_left(bx, by, cx, cy)
    tl1 = _top_left(cx, cy, ax, ay)
    tl2 = _top_left(ax, ay, bx, by)

    def cover(idx, px, py, valid):
        # px, py: pixel centers broadcast against idx[:, None, None]
        sl = (idx,) + (None,) * (px.ndim - 1)
        e0 = _edge(bx[sl], by[sl], cx[sl], cy[sl], px, py)
        e1 = _edge(cx[sl], cy[sl], ax[sl], ay[sl], px, py)
        e2 = _edge(ax[sl], ay[sl], bx[sl], by[sl], px, py)
        inside = valid
        inside &= (e0 > 0) | ((e0 == 0) & tl0[sl])
        inside &= (e1 > 0) | ((e1 == 0) & tl1[sl])
        inside &= (e2 > 0) | ((e2 == 0) & tl2[sl])
        a = area[sl]
        invz = (e0 / a) / za[sl] + (e1 / a) / zb_[sl] + (e2 / a) / zc[sl]
        return inside, 1.0 / invz

    small = np.nonzero(live & (size <= _BATCH_MAX))[0]
    if small.size:
        bins = np.maximum(1, 1 << np.ceil(np.log2(size[small])).astype(np.int64))
        for s in np.unique(bins):
            members = small[bins == s]
            off = np.arange(s)
            per = max(1, _CHUNK_SAMPLES // (s * s))
            for c in range(0, members.size, per):
                idx = members[c:c + per]
                gx = ix0[idx][:, None, None] + off[None, None, :]
                gy = iy0[idx][:, None, None] + off[None, :, None]
                valid = (gx <= ix1[idx][:, None, None]) & (gy <= iy1[idx][:, None, None])
                inside, depth = cover(idx, gx + 0.5, gy + 0.5, valid)
                k, r, q = np.nonzero(inside)
                pix = (gy[k, r, 0] - y0) * rw + (gx[k, 0, q] - x0)
                zb.merge(pix, depth[k, r, q], idx[k])
    for t in np.nonzero(live & (size > _BATCH_MAX))[0]:
        gx = np.arange(ix0[t], ix1[t] + 1)[None, :]
        gy = np.arange(iy0[t], iy1[t] + 1)[:, None]
        valid = np.ones((gy.size, gx.size), dtype=bool)
        inside, depth = cover(np.array(t), gx + 0.5, gy + 0.5, valid)
        r, q = np.nonzero(inside)
        pix = (gy[r, 0] - y0) * rw + (gx[0, q] - x0)
        zb.merge(pix, depth[r, q], np.full(pix.size, t, dtype=np.int64))
    return zb.depth.reshape(rh, rw), zb.tri.reshape(rh, rw)


class Rasterizer:
    """Scene geometry prepared for one camera; renders the full frame or single-object windows."""

    def __init__(self, scene: Scene, camera_index: int):
        if not 0 <= camera_index < len(scene.cameras):
            raise IndexError(f"camera index {camera_index} out of range")
        self.scene = scene
        self.camera = cam = scene.cameras[camera_index]
        wall = np.array(scene.wall_albedo(camera_index))

        ftris, is_tray = fridge_triangles(scene.fridge)
        world = [ftris]
        owner = [np.zeros(len(ftris), dtype=np.int64)]
        albedo = [np.where(is_tray[:, None], wall * TRAY_SHADE, wall)]
        for obj in scene.objects:
            v = obj.world_vertices()
            world.append(v[obj.mesh.triangles])
            owner.append(np.full(len(obj.mesh.triangles), obj.instance_id, dtype=np.int64))
            albedo.append(np.broadcast_to(np.array(obj.albedo, dtype=np.float64), (len(obj.mesh.triangles), 3)))
        world = np.concatenate(world)
        self.owner = np.concatenate(owner)
        self.albedo = np.concatenate(albedo)
        n = np.cross(world[:, 1] - world[:, 0], world[:, 2] - world[:, 0])
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        self.normal = np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

        camtris = cam.to_camera(world.reshape(-1, 3)).reshape(-1, 3, 3)
        clipped, self.src = _clip_near(camtris, NEAR_PLANE)
        z = clipped[:, :, 2]
        self.uv = np.stack([cam.fx * clipped[:, :, 0] / z + cam.cx, cam.fy * clipped[:, :, 1] / z + cam.cy], axis=-1)
        self.z = z
        self.clip_owner = self.owner[self.src]

    @property
    def frame(self) -> tuple[int, int, int, int]:
        return (0, 0, self.camera.width, self.camera.height)

    @property
    def extended_frame(self) -> tuple[int, int, int, int]:
        w, h = self.camera.width, self.camera.height
        return (-w, -h, 3 * w, 3 * h)

    def _render(self, select: np.ndarray, region, shade: bool) -> RenderOutput:
        idx = np.nonzero(select)[0]
        depth, local = rasterize(self.uv[idx], self.z[idx], region)
        hit = local >= 0
        tri = np.full(local.shape, -1, dtype=np.int64)
        tri[hit] = self.src[idx[local[hit]]]
        instance = np.zeros(local.shape, dtype=np.uint16)
        instance[hit] = self.owner[tri[hit]]
        rgb = self._shade(tri, depth, region) if shade else None
        return RenderOutput(rgb, depth, instance, (region[0], region[1]))

    def _shade(self, tri, depth, region) -> np.ndarray:
        scene, cam = self.scene, self.camera
        h, w = tri.shape
        rgb = np.zeros((h, w, 3), dtype=np.uint8)
        hit = tri >= 0
        if not hit.any():
            return rgb
        ys, xs = np.nonzero(hit)
        z = depth[ys, xs]
        u = xs + region[0] + 0.5
        v = ys + region[1] + 0.5
        pc = np.stack([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z], axis=1)
        p = (pc - cam.pose.translation) @ cam.pose.rotation
        t = tri[ys, xs]
        n = self.normal[t]
        eye = cam.center
        facing = np.einsum("ij,ij->i", n, eye - p)
        n = np.where(facing[:, None] < 0, -n, n)
        light = np.full((len(t), 3), scene.ambient, dtype=np.float64)
        for lt in scene.lights:
            l = np.asarray(lt.position) - p
            d2 = np.einsum("ij,ij->i", l, l)
            d = np.sqrt(d2)
            ndotl = np.maximum(0.0, np.einsum("ij,ij->i", n, l) / np.maximum(d, 1e-12))
            light += (ndotl / (1.0 + d2))[:, None] * np.asarray(lt.intensity)
        c = np.clip(self.albedo[t] * light, 0.0, 1.0)
        rgb[ys, xs] = np.round(255.0 * c ** (1.0 / GAMMA)).astype(np.uint8)
        return rgb

    def full(self, shade: bool = True) -> RenderOutput:
        return self._render(np.ones(len(self.src), dtype=bool), self.frame, shade)

    def _known(self, instance_id: int):
        if instance_id <= 0 or not np.any(self.owner == instance_id):
            raise KeyError(f"no object with instance id {instance_id} in scene")

    def solo(self, instance_id: int, extended: bool = False, shade: bool = True) -> RenderOutput:
        """Render one object plus the fridge.

        With ``extended`` the window covers the object's projected extent on a
        canvas three times the image size (same camera, centered on the frame),
        so silhouette pixels outside the frame are counted too.
        """
        self._known(instance_id)
        mine = self.clip_owner == instance_id
        select = mine | (self.clip_owner == 0)
        if not extended:
            return self._render(select, self.frame, shade)
        ex0, ey0, ew, eh = self.extended_frame
        if not mine.any():
            return self._render(select, (0, 0, 0, 0), shade)
        pts = self.uv[mine].reshape(-1, 2)
        with np.errstate(invalid="ignore"):
            x0 = int(max(ex0, np.floor(np.clip(pts[:, 0].min(), ex0 - 1, ex0 + ew + 1))))
            y0 = int(max(ey0, np.floor(np.clip(pts[:, 1].min(), ey0 - 1, ey0 + eh + 1))))
            x1 = int(min(ex0 + ew, np.ceil(np.clip(pts[:, 0].max(), ex0 - 1, ex0 + ew + 1))))
            y1 = int(min(ey0 + eh, np.ceil(np.clip(pts[:, 1].max(), ey0 - 1, ey0 + eh + 1))))
        region = (x0, y0, max(0, x1 - x0), max(0, y1 - y0))
        return self._render(select, region, shade)


def render(scene: Scene, camera_index: int) -> RenderOutput:
    return Rasterizer(scene, camera_index).full()


def render_solo(scene: Scene, camera_index: int, instance_id: int, extended: bool = False) -> RenderOutput:
    return Rasterizer(scene, camera_index).solo(instance_id, extended=extended)
