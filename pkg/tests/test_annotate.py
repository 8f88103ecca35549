import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synthfridge.annotate import (AnnotateConfig, IncompleteOracleError, KittiArityError, KittiParseError,
                                  ObjectAnnotation, annotate_scene, kitti_line, parse_kitti, parse_kitti_line,
                                  pixel_bbox, write_kitti)
from synthfridge.composer import SceneConfig, compose_scene
from synthfridge.geometry import BBox2D
from synthfridge.meshio import make_primitive

from conftest import front_camera, make_scene, occluded_plate_scene, place, truncated_box_scene, views, TRAY_Y

GOLDEN = "product 0.00 0 -10.00 10.00 20.00 110.00 220.00 -1.00 -1.00 -1.00 -1.00 -1.00 -1.00 -10.00"


def annotate(scene, config=AnnotateConfig()):
    full, solos = views(scene)
    return {a.instance_id: a for a in annotate_scene(scene, 0, full, solos, config)}


def test_unobstructed_box():
    box = make_primitive("box", (0.2, 0.2, 0.2))
    scene = make_scene([place(box, 0.0, 0.25, 1)], front_camera((0.0, TRAY_Y + 0.1, -0.5), (0.0, TRAY_Y + 0.1, 0.25)))
    (a,) = annotate(scene).values()
    assert (a.truncation, a.occlusion, a.ignore, a.visibility) == (0.0, 0, False, 1.0)
    assert a.label == "product"


def test_half_truncated():
    (a,) = annotate(truncated_box_scene()).values()
    assert a.truncation == pytest.approx(0.5, abs=0.02)
    assert a.ignore and a.occlusion == 0
    assert a.bbox.x2 == 512


@pytest.mark.parametrize("visible, state", [(0.4, 2), (0.7, 1), (0.95, 0)])
def test_occlusion_states(visible, state):
    a = annotate(occluded_plate_scene(visible))[1]
    assert a.visibility == pytest.approx(visible, abs=0.02)
    assert a.occlusion == state
    assert a.ignore == (state == 2)


def test_visibility_threshold_flips_exactly():
    scene = occluded_plate_scene(0.7)
    v = annotate(scene)[1].visibility
    at = AnnotateConfig(visible_full=1.0, visible_partial=v)
    above = AnnotateConfig(visible_full=1.0, visible_partial=math.nextafter(v, 1.0))
    assert not annotate(scene, at)[1].ignore
    assert annotate(scene, above)[1].ignore


def test_truncation_threshold_flips_exactly():
    scene = truncated_box_scene()
    t = annotate(scene)[1].truncation
    assert not annotate(scene, AnnotateConfig(max_truncation=t))[1].ignore
    assert annotate(scene, AnnotateConfig(max_truncation=math.nextafter(t, 0.0)))[1].ignore


def test_min_pixels_threshold_flips_exactly():
    scene = occluded_plate_scene(0.95)
    full, _ = views(scene)
    n = int(np.count_nonzero(full.instance == 1))
    assert not annotate(scene, AnnotateConfig(min_pixels=n))[1].ignore
    assert annotate(scene, AnnotateConfig(min_pixels=n + 1))[1].ignore


def test_visibility_monotone_in_occluder():
    vs = [annotate(occluded_plate_scene(v))[1].visibility for v in (0.2, 0.4, 0.6, 0.8)]
    assert vs == sorted(vs)


def test_bbox_contains_every_pixel(repo):
    scene = compose_scene(repo, SceneConfig(), 17)
    full, solos = views(scene)
    for a in annotate_scene(scene, 0, full, solos):
        ys, xs = np.nonzero(full.instance == a.instance_id)
        assert a.bbox.x1 <= xs.min() and xs.max() + 1 <= a.bbox.x2
        assert a.bbox.y1 <= ys.min() and ys.max() + 1 <= a.bbox.y2
        assert (a.bbox.x1, a.bbox.y1) == (xs.min(), ys.min())


def test_missing_solo_render():
    scene = occluded_plate_scene(0.5)
    full, solos = views(scene)
    del solos[2]
    with pytest.raises(IncompleteOracleError):
        annotate_scene(scene, 0, full, solos)


def test_pixel_bbox():
    m = np.zeros((5, 6), dtype=bool)
    m[1:3, 2:5] = True
    assert pixel_bbox(m) == BBox2D(2, 1, 5, 3)
    assert pixel_bbox(m, (10, 20)) == BBox2D(12, 21, 15, 23)
    assert pixel_bbox(np.zeros((3, 3), bool)) is None


# --- KITTI ------------------------------------------------------------------

def test_golden_line():
    a = ObjectAnnotation("product", BBox2D(10, 20, 110, 220))
    assert kitti_line(a) == GOLDEN
    assert write_kitti([a]) == GOLDEN + "\n"


def test_ignored_written_as_dontcare():
    a = ObjectAnnotation("product", BBox2D(10, 20, 110, 220), truncation=0.5, ignore=True)
    line = kitti_line(a)
    assert line.split()[0] == "DontCare"
    back = parse_kitti(line)[0]
    assert back.ignore and back.truncation == 0.5


def test_write_orders_by_instance():
    a = ObjectAnnotation("product", BBox2D(0, 0, 1, 1), instance_id=2)
    b = ObjectAnnotation("product", BBox2D(5, 5, 6, 6), instance_id=1)
    assert parse_kitti(write_kitti([a, b]))[0].bbox == b.bbox


def test_arity_error():
    with pytest.raises(KittiArityError):
        parse_kitti("product 0.00 0 -10.00 10.00")


def test_bad_number_reports_line_and_column():
    text = GOLDEN + "\n" + GOLDEN.replace("110.00", "abc")
    with pytest.raises(KittiParseError) as e:
        parse_kitti(text)
    assert e.value.lineno == 2 and e.value.column == 7


def test_extra_fields_tolerated():
    ann, extra = parse_kitti_line(GOLDEN + " 0.875")
    assert extra == ["0.875"] and ann.bbox == BBox2D(10, 20, 110, 220)


def test_unknown_occlusion_and_blank_lines():
    text = "\n" + GOLDEN.replace("product 0.00 0", "product 0.00 7") + "\n\n"
    (a,) = parse_kitti(text)
    assert a.occlusion == 3


annotations = st.builds(
    lambda x, y, w, h, t, occ, ign, lab: ObjectAnnotation(lab, BBox2D(x, y, x + w, y + h), t, occ, ign),
    st.integers(0, 50000).map(lambda v: v / 100), st.integers(0, 50000).map(lambda v: v / 100),
    st.integers(1, 50000).map(lambda v: v / 100), st.integers(1, 50000).map(lambda v: v / 100),
    st.integers(0, 100).map(lambda v: v / 100), st.integers(0, 2), st.booleans(),
    st.sampled_from(["product", "can", "bottle"]))


@settings(max_examples=100, deadline=None)
@given(st.lists(annotations, max_size=12))
def test_round_trip(anns):
    back = parse_kitti(write_kitti(anns))
    assert len(back) == len(anns)
    for a, b in zip(anns, back):
        np.testing.assert_allclose(b.bbox.as_tuple(), a.bbox.as_tuple(), atol=0.01)
        assert (b.occlusion, b.ignore, b.truncation) == (a.occlusion, a.ignore, a.truncation)
        assert b.label == ("DontCare" if a.ignore else a.label)


def test_empty_list_writes_empty_file():
    assert write_kitti([]) == "" and parse_kitti("") == []


def test_dontcare_sentinel_line():
    (a,) = parse_kitti("DontCare -1 -1 -10 0 0 50 50 -1 -1 -1 -1 -1 -1 -10")
    assert a.ignore and a.truncation == 0.0 and a.occlusion == 3
