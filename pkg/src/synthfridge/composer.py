"""Seeded composition of refrigerator scenes.

World frame: y up, the fridge interior spans x in [-W/2, W/2], y in [0, H],
z in [0, D] with the open front at z = 0 and the back wall at z = D. Cameras
stand in front of the opening (z < 0) and look into the fridge.

Seeding: a scene seed is expanded with ``numpy.random.SeedSequence(seed,
spawn_key=(axis,))`` into one independent stream per randomization axis
(objects, placement, lights, cameras, materials). Adding draws to one axis
never shifts another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .geometry import Camera, Pose
from .meshio import Mesh, ModelRepository

SCENE_FORMAT_VERSION = 1
PATTERNS = ("grid", "random", "binpack")
MIN_OBJECTS, MAX_OBJECTS = 5, 25
_EPS = 1e-9

# seed stream ids; append only
AXIS_OBJECTS, AXIS_PLACEMENT, AXIS_LIGHTS, AXIS_CAMERAS, AXIS_MATERIALS = range(5)


class CapacityError(RuntimeError):
    pass


class OversizeError(ValueError):
    def __init__(self, index: int, footprint):
        super().__init__(f"footprint {index} ({footprint[0]:.3f} x {footprint[1]:.3f} m) does not fit any tray")
        self.index = index


def child_rng(seed: int, axis: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(axis,)))


def split_seed(master: int, index: int) -> int:
    """64-bit child seed number ``index`` of ``master``."""
    lo, hi = np.random.SeedSequence(int(master), spawn_key=(int(index),)).generate_state(2, dtype=np.uint32)
    return int(hi) << 32 | int(lo)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle on the XZ plane."""

    x0: float
    z0: float
    x1: float
    z1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def depth(self) -> float:
        return self.z1 - self.z0

    @property
    def area(self) -> float:
        return self.width * self.depth

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2, (self.z0 + self.z1) / 2)

    @classmethod
    def around(cls, center, size) -> Rect:
        (x, z), (w, d) = center, size
        return cls(x - w / 2, z - d / 2, x + w / 2, z + d / 2)

    def contains(self, other: Rect, tol: float = 1e-9) -> bool:
        return (other.x0 >= self.x0 - tol and other.z0 >= self.z0 - tol
                and other.x1 <= self.x1 + tol and other.z1 <= self.z1 + tol)

    def overlaps(self, other: Rect, tol: float = 1e-9) -> bool:
        """Positive-area intersection; touching edges do not count."""
        return (min(self.x1, other.x1) - max(self.x0, other.x0) > tol
                and min(self.z1, other.z1) - max(self.z0, other.z0) > tol)


@dataclass(frozen=True)
class Placement:
    tray: int
    x: float
    z: float


@dataclass(frozen=True)
class FridgeSpec:
    width: float = 0.60
    depth: float = 0.50
    height: float = 0.96
    trays: tuple[float, ...] = (0.04, 0.34, 0.64)  # tray top heights
    tray_thickness: float = 0.02
    tray_margin: float = 0.02
    wall_albedo: tuple[tuple[float, float, float], tuple[float, float, float]] = ((0.45, 0.45, 0.45), (0.95, 0.95, 0.95))

    def __post_init__(self):
        object.__setattr__(self, "trays", tuple(float(t) for t in self.trays))
        object.__setattr__(self, "wall_albedo", tuple(tuple(float(c) for c in a) for a in self.wall_albedo))
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("fridge dimensions must be positive")
        if not self.trays:
            raise ValueError("fridge needs at least one tray")
        if any(not (self.tray_thickness < t < self.height) for t in self.trays):
            raise ValueError("trays must lie strictly inside the interior height")
        if 2 * self.tray_margin >= min(self.width, self.depth):
            raise ValueError("tray margin leaves no usable area")
        lo, hi = self.wall_albedo
        if any(not (0 <= a <= b <= 1) for a, b in zip(lo, hi)):
            raise ValueError("wall albedo range must be an interval inside [0, 1]")

    def tray_rect(self, i: int) -> Rect:
        m = self.tray_margin
        return Rect(-self.width / 2 + m, m, self.width / 2 - m, self.depth - m)

    @property
    def tray_rects(self) -> list[Rect]:
        return [self.tray_rect(i) for i in range(len(self.trays))]


@dataclass(frozen=True, eq=False)
class SceneObject:
    model_index: int
    mesh: Mesh
    pose: Pose
    scale: float
    albedo: tuple[float, float, float]
    instance_id: int
    label: str
    tray: int = -1

    def world_vertices(self) -> np.ndarray:
        return self.pose.apply(self.scale * self.mesh.vertices)

    def footprint(self) -> Rect:
        v = self.world_vertices()
        return Rect(v[:, 0].min(), v[:, 2].min(), v[:, 0].max(), v[:, 2].max())


@dataclass(frozen=True)
class Light:
    position: tuple[float, float, float]
    intensity: tuple[float, float, float]


@dataclass(eq=False)
class Scene:
    fridge: FridgeSpec
    objects: list[SceneObject]
    lights: list[Light]
    cameras: list[Camera]
    seed: int = 0
    pattern: str = "grid"
    ambient: float = 0.1
    wall_albedos: list[tuple[float, float, float]] = field(default_factory=list)  # one per camera

    def object_by_id(self, instance_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.instance_id == instance_id:
                return obj
        raise KeyError(f"no object with instance id {instance_id}")

    def wall_albedo(self, camera_index: int) -> tuple[float, float, float]:
        if camera_index < len(self.wall_albedos):
            return self.wall_albedos[camera_index]
        lo, hi = self.fridge.wall_albedo
        return tuple((a + b) / 2 for a, b in zip(lo, hi))

    def validate(self, check_counts: bool = True) -> None:
        """Raise ValueError if a composed-scene invariant is violated."""
        ids = [o.instance_id for o in self.objects]
        if len(set(ids)) != len(ids) or any(i <= 0 for i in ids):
            raise ValueError("instance ids must be unique and positive")
        if check_counts and not MIN_OBJECTS <= len(self.objects) <= MAX_OBJECTS:
            raise ValueError(f"object count {len(self.objects)} outside [{MIN_OBJECTS}, {MAX_OBJECTS}]")
        if not self.lights or not self.cameras:
            raise ValueError("scene needs at least one light and one camera")
        feet = [o.footprint() for o in self.objects]
        for o, fp in zip(self.objects, feet):
            if not self.fridge.tray_rect(o.tray).contains(fp, tol=1e-6):
                raise ValueError(f"object {o.instance_id} footprint leaves its tray")
        for i in range(len(feet)):
            for j in range(i + 1, len(feet)):
                if self.objects[i].tray == self.objects[j].tray and feet[i].overlaps(feet[j], tol=1e-6):
                    raise ValueError(f"objects {ids[i]} and {ids[j]} overlap")

    def to_dict(self) -> dict:
        def cam(c: Camera):
            return {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy, "width": c.width, "height": c.height,
                    "rotation": c.pose.rotation.tolist(), "translation": c.pose.translation.tolist()}

        return {
            "version": SCENE_FORMAT_VERSION,
            "seed": self.seed,
            "pattern": self.pattern,
            "ambient": self.ambient,
            "fridge": {f.name: getattr(self.fridge, f.name) for f in fields(self.fridge)},
            "objects": [{
                "instance_id": o.instance_id, "model_index": o.model_index, "mesh": o.mesh.name,
                "label": o.label, "tray": o.tray, "scale": o.scale, "albedo": list(o.albedo),
                "rotation": o.pose.rotation.tolist(), "translation": o.pose.translation.tolist(),
            } for o in self.objects],
            "lights": [{"position": list(l.position), "intensity": list(l.intensity)} for l in self.lights],
            "cameras": [cam(c) for c in self.cameras],
            "wall_albedos": [list(a) for a in self.wall_albedos],
        }


@dataclass(frozen=True)
class SceneConfig:
    min_objects: int = MIN_OBJECTS
    max_objects: int = MAX_OBJECTS
    pattern_weights: dict = field(default_factory=lambda: {"grid": 1.0, "random": 1.0, "binpack": 1.0})
    grid_pitch: float = 0.12
    binpack_gap: float = 0.01
    random_attempts: int = 100
    fridge: FridgeSpec = field(default_factory=FridgeSpec)
    light_count: tuple[int, int] = (1, 3)
    light_intensity: tuple[float, float] = (0.08, 1.2)  # log-uniform; low end is a dim fridge
    ambient: tuple[float, float] = (0.02, 0.25)
    camera_count: tuple[int, int] = (1, 4)
    camera_x: tuple[float, float] = (-0.25, 0.25)
    camera_rise: tuple[float, float] = (0.10, 0.45)  # above the target tray
    camera_z: tuple[float, float] = (-0.85, -0.45)
    focal: float = 450.0
    image_size: int = 512
    object_albedo: tuple[float, float] = (0.05, 1.0)

    def __post_init__(self):
        if not MIN_OBJECTS <= self.min_objects <= self.max_objects <= MAX_OBJECTS:
            raise ValueError(f"object count range must lie within [{MIN_OBJECTS}, {MAX_OBJECTS}]")
        w = self.pattern_weights
        if set(w) - set(PATTERNS) or any(v < 0 for v in w.values()) or sum(w.values()) <= 0:
            raise ValueError(f"pattern weights must be nonnegative over {PATTERNS} with positive sum")
        for name in ("light_count", "camera_count"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 1 <= lo <= hi")
        for name in ("light_intensity", "ambient", "camera_x", "camera_rise", "camera_z", "object_albedo"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range is inverted")
        if self.light_intensity[0] <= 0 or self.ambient[0] < 0:
            raise ValueError("light intensities must be positive and ambient nonnegative")
        if self.camera_z[1] >= 0:
            raise ValueError("cameras must stand in front of the fridge (z < 0)")
        if self.grid_pitch <= 0 or self.binpack_gap < 0 or self.random_attempts < 1:
            raise ValueError("invalid placement parameters")
        if self.focal <= 0 or self.image_size < 1:
            raise ValueError("invalid camera intrinsics")

    def camera(self, pose: Pose) -> Camera:
        c = self.image_size / 2
        return Camera(self.focal, self.focal, c, c, self.image_size, self.image_size, pose)


def _as_trays(trays) -> list[Rect]:
    return [trays] if isinstance(trays, Rect) else list(trays)


def _check_fits(footprints, trays):
    for i, (w, d) in enumerate(footprints):
        if not any(w <= t.width + _EPS and d <= t.depth + _EPS for t in trays):
            raise OversizeError(i, (w, d))


def grid_shape(n: int, max_cols: int, max_rows: int) -> tuple[int, int]:
    cols = min(max_cols, max(math.ceil(math.sqrt(n)), math.ceil(n / max_rows)))
    return cols, math.ceil(n / cols)


def place_grid(footprints: Sequence, trays, pitch: float) -> list[Placement]:
    """Lattice placement centered on each tray, filled row-major.

    The lattice spacing is ``pitch`` (raised to the largest footprint so
    neighbors never overlap). A tray holding ``n`` objects gets a near-square
    lattice centered on the tray; rows run along +z and columns along +x.
    Objects beyond a tray's capacity overflow onto the next tray.
    """
    trays = _as_trays(trays)
    n = len(footprints)
    if n == 0:
        return []
    if any(t.area <= 0 for t in trays):
        raise ValueError("tray area must be positive")
    _check_fits(footprints, trays)
    step = max(pitch, max(max(w, d) for w, d in footprints))
    caps = [(int(math.floor(t.width / step + 1e-9)), int(math.floor(t.depth / step + 1e-9))) for t in trays]
    total = sum(c * r for c, r in caps)
    if n > total:
        raise CapacityError(f"{n} objects exceed grid capacity {total} at pitch {step:.3f} m")
    out: list[Placement] = []
    remaining = n
    for ti, (tray, (mc, mr)) in enumerate(zip(trays, caps)):
        k = min(remaining, mc * mr)
        if k == 0:
            continue
        cols, rows = grid_shape(k, mc, mr)
        cx, cz = tray.center
        for j in range(k):
            r, c = divmod(j, cols)
            out.append(Placement(ti, cx + (c - (cols - 1) / 2) * step, cz + (r - (rows - 1) / 2) * step))
        remaining -= k
        if remaining == 0:
            break
    return out


def place_random(footprints: Sequence, trays, rng: np.random.Generator,
                 attempts: int = 100) -> list[Optional[Placement]]:
    """Rejection-sample each footprint onto a uniformly chosen tray; ``None`` when it never fits."""
    trays = _as_trays(trays)
    if any(t.area <= 0 for t in trays):
        raise ValueError("tray area must be positive")
    placed: list[list[Rect]] = [[] for _ in trays]
    out: list[Optional[Placement]] = []
    for w, d in footprints:
        result = None
        for _ in range(attempts):
            ti = int(rng.integers(len(trays)))
            t = trays[ti]
            if w > t.width or d > t.depth:
                continue
            x = rng.uniform(t.x0 + w / 2, t.x1 - w / 2)
            z = rng.uniform(t.z0 + d / 2, t.z1 - d / 2)
            r = Rect.around((x, z), (w, d))
            if not any(r.overlaps(o) for o in placed[ti]):
                placed[ti].append(r)
                result = Placement(ti, float(x), float(z))
                break
        out.append(result)
    return out


def place_binpack(footprints: Sequence, trays, gap: float = 0.0) -> list[Optional[Placement]]:
    """Shelf packing, next-fit decreasing height.

    Footprints are sorted by decreasing depth (the shelf "height") and laid
    left to right from the tray's (x0, z0) corner with ``gap`` clearance; a new
    shelf opens behind the current one when the row is full, and the next tray
    is opened when shelves run out. Items that no longer fit get ``None``.
    """
    trays = _as_trays(trays)
    if any(t.area <= 0 for t in trays):
        raise ValueError("tray area must be positive")
    _check_fits(footprints, trays)
    out: list[Optional[Placement]] = [None] * len(footprints)
    order = sorted(range(len(footprints)), key=lambda i: (-footprints[i][1], i))
    ti = 0
    cursor = shelf_z = shelf_h = None
    for i in order:
        w, d = footprints[i]
        while ti < len(trays):
            t = trays[ti]
            if cursor is None:
                cursor, shelf_z, shelf_h = t.x0, t.z0, d
            if cursor + w <= t.x1 + _EPS and shelf_z + d <= t.z1 + _EPS:
                break
            # open a new shelf behind the current one
            if cursor > t.x0:
                nz = shelf_z + shelf_h + gap
                if nz + d <= t.z1 + _EPS and t.x0 + w <= t.x1 + _EPS:
                    cursor, shelf_z, shelf_h = t.x0, nz, d
                    break
            ti += 1
            cursor = None
        if ti == len(trays):
            break
        out[i] = Placement(ti, cursor + w / 2, shelf_z + d / 2)
        cursor += w + gap
    return out


def _sample_models(repo, cfg, rng):
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    picks = []
    for _ in range(n):
        mi = int(rng.integers(len(repo)))
        model = repo[mi]
        height = rng.uniform(*model.height_range)
        yaw = int(rng.integers(4))
        picks.append((mi, height / model.mesh.extent[1], yaw))
    return picks


def compose_scene(repo: ModelRepository, config, seed: int) -> Scene:
    """Build one scene; a pure function of (repo, config, seed)."""
    cfg: SceneConfig = getattr(config, "scene", config)
    fridge = cfg.fridge
    rng_obj = child_rng(seed, AXIS_OBJECTS)
    rng_place = child_rng(seed, AXIS_PLACEMENT)
    rng_light = child_rng(seed, AXIS_LIGHTS)
    rng_cam = child_rng(seed, AXIS_CAMERAS)
    rng_mat = child_rng(seed, AXIS_MATERIALS)

    picks = _sample_models(repo, cfg, rng_obj)
    albedos = [tuple(float(a) for a in rng_mat.uniform(*cfg.object_albedo, 3)) for _ in picks]
    # enclosing square of the XZ extent so any quarter-turn yaw stays inside it
    feet = []
    for mi, s, _ in picks:
        ext = repo[mi].mesh.extent * s
        side = max(ext[0], ext[2])
        feet.append((side, side))

    weights = np.array([cfg.pattern_weights.get(p, 0.0) for p in PATTERNS], dtype=np.float64)
    pattern = PATTERNS[int(rng_place.choice(len(PATTERNS), p=weights / weights.sum()))]
    start = int(rng_place.integers(len(fridge.trays)))
    tray_order = [(start + k) % len(fridge.trays) for k in range(len(fridge.trays))]
    rects = [fridge.tray_rect(t) for t in tray_order]

    if pattern == "grid":
        step = max(cfg.grid_pitch, max(f[0] for f in feet))
        cap = sum(int(math.floor(r.width / step + 1e-9)) * int(math.floor(r.depth / step + 1e-9)) for r in rects)
        keep = min(len(feet), cap)
        placements = place_grid(feet[:keep], rects, cfg.grid_pitch) + [None] * (len(feet) - keep)
    elif pattern == "random":
        placements = place_random(feet, rects, rng_place, cfg.random_attempts)
    else:
        placements = place_binpack(feet, rects, cfg.binpack_gap)

    objects = []
    for (mi, s, yaw), alb, pl in zip(picks, albedos, placements):
        if pl is None:
            continue
        tray = tray_order[pl.tray]
        pose = Pose.from_yaw(yaw * math.pi / 2, (pl.x, fridge.trays[tray], pl.z))
        model = repo[mi]
        objects.append(SceneObject(mi, model.mesh, pose, float(s), alb, len(objects) + 1, model.label, tray))
    if len(objects) < cfg.min_objects:
        raise CapacityError(f"only {len(objects)} objects could be placed ({pattern}); need {cfg.min_objects}")

    lights = []
    for _ in range(int(rng_light.integers(cfg.light_count[0], cfg.light_count[1] + 1))):
        pos = (rng_light.uniform(-0.45, 0.45) * fridge.width,
               rng_light.uniform(0.05, 0.95) * fridge.height,
               rng_light.uniform(0.05, 0.6) * fridge.depth)
        level = math.exp(rng_light.uniform(math.log(cfg.light_intensity[0]), math.log(cfg.light_intensity[1])))
        tint = rng_light.uniform(0.8, 1.0, 3)
        lights.append(Light(tuple(float(p) for p in pos), tuple(float(level * c) for c in tint)))
    ambient = float(rng_light.uniform(*cfg.ambient))

    occupied = sorted({o.tray for o in objects})
    cameras = []
    for _ in range(int(rng_cam.integers(cfg.camera_count[0], cfg.camera_count[1] + 1))):
        tray = occupied[int(rng_cam.integers(len(occupied)))]
        r = fridge.tray_rect(tray)
        target = (rng_cam.uniform(r.x0, r.x1), fridge.trays[tray], rng_cam.uniform(r.z0, r.z1))
        eye = (rng_cam.uniform(*cfg.camera_x),
               fridge.trays[tray] + rng_cam.uniform(*cfg.camera_rise),
               rng_cam.uniform(*cfg.camera_z))
        cameras.append(cfg.camera(Pose.look_at(eye, target)))
    lo, hi = fridge.wall_albedo
    wall_albedos = [tuple(float(rng_mat.uniform(a, b)) for a, b in zip(lo, hi)) for _ in cameras]

    return Scene(fridge, objects, lights, cameras, int(seed), pattern, ambient, wall_albedos)
