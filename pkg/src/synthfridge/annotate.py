"""Per-object boxes, truncation and occlusion from instance maps, plus KITTI label I/O."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .composer import Scene
from .geometry import BBox2D
from .renderer import RenderOutput

DONTCARE = "DontCare"
# sentinels for the KITTI fields this toolkit does not estimate
ALPHA_NA = -10.0
DIM_NA = -1.0
LOC_NA = -1.0
ROT_NA = -10.0
OCC_UNKNOWN = 3


class IncompleteOracleError(KeyError):
    pass


class KittiParseError(ValueError):
    def __init__(self, lineno: int, msg: str, column: int | None = None):
        where = f"line {lineno}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{where}: {msg}")
        self.lineno = lineno
        self.column = column


class KittiArityError(KittiParseError):
    pass


@dataclass(frozen=True)
class AnnotateConfig:
    """Neglect rule: ignore when truncation > max_truncation, occlusion state 2, or < min_pixels visible."""

    max_truncation: float = 0.3
    min_pixels: int = 25
    visible_full: float = 0.9  # v >= this -> occlusion 0
    visible_partial: float = 0.5  # v >= this -> occlusion 1, else 2

    def __post_init__(self):
        if not 0 <= self.max_truncation <= 1:
            raise ValueError("max_truncation must lie in [0, 1]")
        if self.min_pixels < 0:
            raise ValueError("min_pixels must be nonnegative")
        if not 0 < self.visible_partial <= self.visible_full <= 1:
            raise ValueError("need 0 < visible_partial <= visible_full <= 1")

    def occlusion_state(self, visibility: float) -> int:
        if visibility >= self.visible_full:
            return 0
        if visibility >= self.visible_partial:
            return 1
        return 2


@dataclass(frozen=True)
class ObjectAnnotation:
    label: str
    bbox: BBox2D
    truncation: float = 0.0
    occlusion: int = 0
    ignore: bool = False
    instance_id: int = 0
    visibility: float = 1.0

    def __post_init__(self):
        if not 0 <= self.truncation <= 1:
            raise ValueError(f"truncation {self.truncation} outside [0, 1]")
        if self.occlusion not in (0, 1, 2, OCC_UNKNOWN):
            raise ValueError(f"invalid occlusion state {self.occlusion}")


def pixel_bbox(mask: np.ndarray, origin=(0, 0)) -> BBox2D | None:
    """Tight continuous box around the True pixels of ``mask``."""
    ys = np.nonzero(mask.any(axis=1))[0]
    if ys.size == 0:
        return None
    xs = np.nonzero(mask.any(axis=0))[0]
    ox, oy = origin
    return BBox2D(float(xs[0] + ox), float(ys[0] + oy), float(xs[-1] + 1 + ox), float(ys[-1] + 1 + oy))


def annotate_scene(scene: Scene, camera_index: int, full: RenderOutput,
                   solos: Mapping[int, RenderOutput], config: AnnotateConfig = AnnotateConfig()) -> list[ObjectAnnotation]:
    """Annotate every visible object of one rendered view, in instance-id order.

    ``solos`` maps instance id to a single-object render of the same camera;
    it must cover the extended canvas (``Rasterizer.solo(..., extended=True)``)
    for truncation to be measured. Objects with no visible pixel are dropped.
    """
    cam = scene.cameras[camera_index]
    frame = (cam.width, cam.height)
    missing = [o.instance_id for o in scene.objects if o.instance_id not in solos]
    if missing:
        raise IncompleteOracleError(f"no solo render for instance ids {missing}")
    out = []
    for obj in sorted(scene.objects, key=lambda o: o.instance_id):
        iid = obj.instance_id
        mask = full.instance == iid
        visible = int(np.count_nonzero(mask))
        if visible == 0:
            continue
        solo = solos[iid]
        solo_total = solo.pixel_count(iid)
        solo_frame = solo.pixel_count(iid, frame)
        visibility = min(1.0, visible / solo_frame) if solo_frame else 0.0
        truncation = 1.0 - solo_frame / solo_total if solo_total else 0.0
        occ = config.occlusion_state(visibility)
        ignore = truncation > config.max_truncation or occ == 2 or visible < config.min_pixels
        out.append(ObjectAnnotation(obj.label, pixel_bbox(mask, full.origin), float(truncation), occ,
                                    bool(ignore), iid, float(visibility)))
    return out


def _fmt(x: float) -> str:
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def kitti_line(a: ObjectAnnotation, extra: Sequence[float] = ()) -> str:
    b = a.bbox
    fields = [DONTCARE if a.ignore else a.label, _fmt(a.truncation), str(a.occlusion), _fmt(ALPHA_NA),
              _fmt(b.x1), _fmt(b.y1), _fmt(b.x2), _fmt(b.y2),
              _fmt(DIM_NA), _fmt(DIM_NA), _fmt(DIM_NA), _fmt(LOC_NA), _fmt(LOC_NA), _fmt(LOC_NA), _fmt(ROT_NA)]
    fields += [_fmt(e) for e in extra]
    return " ".join(fields)


def write_kitti(annotations: Sequence[ObjectAnnotation]) -> str:
    """KITTI label text: one 15-field line per object, ignored objects typed ``DontCare``."""
    ordered = sorted(annotations, key=lambda a: a.instance_id)
    return "".join(kitti_line(a) + "\n" for a in ordered)


def _float(tok: str, lineno: int, col: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise KittiParseError(lineno, f"expected a number, got {tok!r}", col) from None
    if not np.isfinite(v):
        raise KittiParseError(lineno, f"non-finite value {tok!r}", col)
    return v


def parse_kitti_line(line: str, lineno: int = 1) -> tuple[ObjectAnnotation, list[str]]:
    """Parse one label line; also returns the fields after the 15 standard ones."""
    toks = line.split()
    if len(toks) < 8:
        raise KittiArityError(lineno, f"expected at least 8 fields, got {len(toks)}")
    label = toks[0]
    trunc = _float(toks[1], lineno, 2)
    occ_raw = _float(toks[2], lineno, 3)
    for c in range(4, min(len(toks), 15) + 1):
        _float(toks[c - 1], lineno, c)
    x1, y1, x2, y2 = (_float(toks[k], lineno, k + 1) for k in range(4, 8))
    occ = int(occ_raw) if occ_raw in (0, 1, 2) else OCC_UNKNOWN
    try:
        box = BBox2D(x1, y1, x2, y2)
    except ValueError as e:
        raise KittiParseError(lineno, str(e), 5) from None
    ann = ObjectAnnotation(label, box, float(min(1.0, max(0.0, trunc))), occ, label == DONTCARE)
    return ann, toks[15:]


def parse_kitti(text: str) -> list[ObjectAnnotation]:
    """Inverse of ``write_kitti``. Extra trailing fields are tolerated; ``DontCare`` sets ``ignore``."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            out.append(parse_kitti_line(line, lineno)[0])
    return out
