import json

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from synthfridge.annotate import KittiParseError, ObjectAnnotation
from synthfridge.detector_math import Detection
from synthfridge.evalkit import (EvalReport, evaluate, match_detections, parse_detections, report_document,
                                 write_detections)
from synthfridge.geometry import BBox2D, iou

from conftest import counted_dataset


def gt(x1, y1, x2, y2, ignore=False):
    return ObjectAnnotation("product", BBox2D(x1, y1, x2, y2), ignore=ignore)


def det(x1, y1, x2, y2, c=0.9):
    return Detection(BBox2D(x1, y1, x2, y2), c)


GTS = [gt(0, 0, 50, 50), gt(100, 100, 160, 180), gt(300, 10, 400, 90)]


def test_perfect():
    m = match_detections([Detection(g.bbox, 1.0) for g in GTS], GTS)
    assert (m.tp, m.fp, m.fn) == (3, 0, 0)
    r = evaluate({"a": [Detection(g.bbox, 1.0) for g in GTS]}, {"a": GTS})
    assert (r.precision, r.recall, r.map) == (1.0, 1.0, 1.0)


def test_no_detections():
    m = match_detections([], GTS)
    assert (m.tp, m.fp, m.fn) == (0, 0, 3)


def _brute_two_on_one(dets, g, thresh):
    # enumerate which detection (if any) takes the single GT; greedy must give it to the most confident qualifier
    best = None
    for owner in (None, 0, 1):
        if owner is not None and iou(dets[owner].bbox, g.bbox) < thresh:
            continue
        rank = -1 if owner is None else dets[owner].confidence
        if best is None or rank > best[1]:
            best = (owner, rank)
    owner = best[0]
    tp = int(owner is not None)
    return tp, len(dets) - tp, 1 - tp, owner


def test_two_detections_one_gt():
    g = gt(0, 0, 100, 100)
    dets = [det(2, 2, 100, 100, 0.6), det(0, 0, 98, 101, 0.8)]
    m = match_detections(dets, [g])
    tp, fp, fn, owner = _brute_two_on_one(dets, g, 0.5)
    assert (m.tp, m.fp, m.fn) == (tp, fp, fn) == (1, 1, 0)
    assert m.assignment == {owner: 0} == {1: 0}


def test_constructed_counts():
    dets, gts = counted_dataset(12, 8, 18)
    r = evaluate(dets, gts)
    assert (r.tp, r.fp, r.fn) == (12, 8, 18)
    assert (r.precision, r.recall, r.map) == (0.6, 0.4, 0.24)
    assert r.to_dict()["map_x100"] == pytest.approx(24.0)


def test_empty_dataset():
    r = evaluate({}, {})
    assert (r.tp, r.fp, r.fn, r.precision, r.recall, r.map) == (0, 0, 0, 0.0, 0.0, 0.0)


def test_mismatched_ids():
    with pytest.raises(KeyError) as e:
        evaluate({"a": [], "x": []}, {"a": [], "b": []})
    assert "'x'" in str(e.value) and "'b'" in str(e.value)


def test_ignored_gt_discards_overlapping_detection():
    gts = [gt(0, 0, 100, 100, ignore=True), gt(200, 200, 300, 300)]
    m = match_detections([det(0, 0, 100, 100), det(400, 400, 450, 450)], gts)
    assert (m.tp, m.fp, m.fn) == (0, 1, 1)
    assert m.discarded == [0]


def test_threshold_validation():
    with pytest.raises(ValueError):
        match_detections([], [], iou_thresh=1.0)


def test_micro_not_macro():
    # micro PR pools counts: 2/4, where averaging per image would give (1 + 1/3)/2
    dets = {"a": [det(0, 0, 10, 10)], "b": [det(50, 50, 60, 60), det(70, 70, 80, 80), det(90, 90, 99, 99)]}
    gts = {"a": [gt(0, 0, 10, 10)], "b": [gt(50, 50, 60, 60)]}
    r = evaluate(dets, gts)
    assert r.precision == 2 / 4
    assert [(p.tp, p.fp) for p in r.per_image] == [(1, 0), (1, 2)]


boxes = st.tuples(st.integers(0, 400), st.integers(0, 400), st.integers(10, 100), st.integers(10, 100)).map(
    lambda t: BBox2D(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(boxes, st.booleans()), max_size=8),
       st.lists(st.tuples(boxes, st.floats(0, 1)), max_size=8))
def test_invariants(gt_spec, det_spec):
    gts = [ObjectAnnotation("product", b, ignore=i) for b, i in gt_spec]
    dets = [Detection(b, c) for b, c in det_spec]
    m = match_detections(dets, gts)
    assert m.tp + m.fn == sum(not g.ignore for g in gts)
    assert m.tp + m.fp + len(m.discarded) == len(dets)
    if m.assignment:
        d0, g0 = next(iter(m.assignment.items()))
        others = [g for k, g in enumerate(gts) if k != g0]
        # a true duplicate: the copy has no other ground truth it could claim
        assume(all(iou(g.bbox, gts[g0].bbox) < 0.5 for g in others))
        dup = dets + [Detection(gts[g0].bbox, 0.0)]
        m2 = match_detections(dup, gts)
        assert m2.tp == m.tp
        assert m2.fp == m.fp + 1
    fps = [i for i in range(len(dets)) if i not in m.assignment and i not in m.discarded]
    if fps:
        pruned = [d for i, d in enumerate(dets) if i != fps[0]]
        before = evaluate({"x": dets}, {"x": gts}).map
        assert evaluate({"x": pruned}, {"x": gts}).map >= before


def test_detection_file_round_trip():
    dets = [det(10.25, 20.5, 110, 220, 0.875), det(1, 2, 3, 4, 0.1234567)]
    text = write_detections(dets)
    assert text.splitlines()[0].split()[15] == "0.875000"
    back = parse_detections(text)
    assert back[0].bbox.as_tuple() == pytest.approx((10.25, 20.5, 110, 220)) and back[0].confidence == 0.875
    assert back[1].confidence == 0.123457


def test_detection_requires_confidence():
    with pytest.raises(KittiParseError):
        parse_detections("product 0.00 0 -10.00 10.00 20.00 110.00 220.00 -1.00 -1.00 -1.00 -1.00 -1.00 -1.00 -10.00")


def test_report_document():
    dets, gts = counted_dataset(3, 1, 2)
    doc = report_document(evaluate(dets, gts), {"iou": 0.5})
    json.dumps(doc)
    assert doc["tp"] == 3 and doc["config"] == {"iou": 0.5} and len(doc["per_image"]) == 3
    csv = evaluate(dets, gts).per_image_csv()
    assert csv.splitlines()[0] == "image_id,tp,fp,fn" and len(csv.splitlines()) == 4
