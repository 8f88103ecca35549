import numpy as np
import pytest

from synthfridge.composer import FridgeSpec, Light, Scene, SceneObject
from synthfridge.geometry import Camera, Pose
from synthfridge.meshio import make_primitive, procedural_repository

TRAY_Y = 0.34  # middle tray of the default fridge


def place(mesh, x, z, iid, y=TRAY_Y, tray=1, albedo=(0.6, 0.4, 0.3)):
    return SceneObject(0, mesh, Pose(np.eye(3), (x, y, z)), 1.0, albedo, iid, "product", tray)


def front_camera(eye, target, size=512, focal=450.0, cx=None, cy=None):
    c = size / 2
    return Camera(focal, focal, c if cx is None else cx, c if cy is None else cy, size, size,
                  Pose.look_at(eye, target))


def make_scene(objects, camera, ambient=0.3, lights=None):
    lights = [Light((0.0, 0.8, 0.2), (0.8, 0.8, 0.8))] if lights is None else lights
    return Scene(FridgeSpec(), list(objects), lights, [camera], seed=0, pattern="grid",
                 ambient=ambient, wall_albedos=[(0.8, 0.8, 0.8)])


@pytest.fixture(scope="session")
def repo():
    return procedural_repository(60)


@pytest.fixture
def unit_box():
    return make_primitive("box", (0.2, 0.2, 0.1))


def views(scene, cam=0):
    """Full render plus extended solo renders for every object."""
    from synthfridge.renderer import Rasterizer
    ras = Rasterizer(scene, cam)
    full = ras.full(shade=False)
    solos = {o.instance_id: ras.solo(o.instance_id, extended=True, shade=False) for o in scene.objects}
    return full, solos


PLATE_Z, OCCLUDER_Z, EYE_Z = 0.4, 0.2, -0.5


def occluded_plate_scene(visible):
    """A 0.2 m plate whose left part is hidden behind a nearer plate; ``visible`` is the analytic fraction left."""
    plate = make_primitive("box", (0.2, 0.2, 0.002))
    # the occluder's near face sets its silhouette; project its right edge onto the plate's near face
    d_plate = PLATE_Z - 0.001 - EYE_Z
    d_occ = OCCLUDER_Z - 0.001 - EYE_Z
    edge_on_plate = 0.1 - 0.2 * visible
    x_r = edge_on_plate * d_occ / d_plate
    occluder = make_primitive("box", (x_r + 0.3, 0.3, 0.002))
    back = place(plate, 0.0, PLATE_Z, 1)
    front = place(occluder, (x_r - 0.3) / 2, OCCLUDER_Z, 2, y=TRAY_Y - 0.05)
    cam = front_camera((0.0, TRAY_Y + 0.1, EYE_Z), (0.0, TRAY_Y + 0.1, PLATE_Z))
    return make_scene([back, front], cam)


def truncated_box_scene(size=0.2):
    """A box viewed head-on whose silhouette center sits on the right image edge."""
    box = make_primitive("box", (size, size, size))
    obj = place(box, 0.0, 0.25, 1)
    eye, target = (0.0, TRAY_Y + size / 2, EYE_Z), (0.0, TRAY_Y + size / 2, 0.25)
    cam = front_camera(eye, target, cx=512.0)
    return make_scene([obj], cam)


def counted_dataset(tp, fp, fn, images=3):
    """Ground truth and detections spread over images with exactly the requested counts."""
    from synthfridge.annotate import ObjectAnnotation
    from synthfridge.detector_math import Detection
    from synthfridge.geometry import BBox2D
    gts = {f"{i:06d}_0": [] for i in range(images)}
    dets = {k: [] for k in gts}
    keys = sorted(gts)

    def box(k):
        # disjoint 20 px squares on a lattice
        return BBox2D(30 * (k % 16), 30 * (k // 16), 30 * (k % 16) + 20, 30 * (k // 16) + 20)

    slot = 0
    for kind, n in (("tp", tp), ("fn", fn), ("fp", fp)):
        for j in range(n):
            img = keys[j % images]
            b = box(slot)
            slot += 1
            if kind != "fp":
                gts[img].append(ObjectAnnotation("product", b))
            if kind != "fn":
                dets[img].append(Detection(b, 0.5 + 0.01 * (j % 40)))
    return dets, gts
