import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maskattack.core import BinaryMask, PointPrompt, ValidationError
from maskattack.metrics import EvalRecord, evaluate_pair, iou, miou, success

from oracles import iou_loop

masks = arrays(bool, (5, 6))
P = PointPrompt(0, 0)


def rec(v, **kw):
    return EvalRecord("img", P, v, kw.pop("area_clean", 10), kw.pop("area_adv", 10), **kw)


def test_identical_and_disjoint():
    a = np.zeros((4, 4), dtype=bool)
    a[:2] = True
    assert iou(BinaryMask(a), BinaryMask(a)) == 1.0
    assert iou(BinaryMask(a), BinaryMask(~a)) == 0.0


def test_overlap_two_of_three():
    a = np.zeros((1, 4), dtype=bool)
    b = np.zeros((1, 4), dtype=bool)
    a[0, :3] = True
    b[0, 1:] = True
    assert iou(BinaryMask(a), BinaryMask(b)) == 0.5


def test_both_empty_is_one():
    e = BinaryMask(np.zeros((3, 3), dtype=bool))
    assert iou(e, e) == 1.0


def test_shape_mismatch():
    with pytest.raises(ValidationError):
        iou(BinaryMask(np.zeros((2, 2))), BinaryMask(np.zeros((3, 2))))


@given(masks, masks)
def test_iou_properties(a, b):
    ma, mb = BinaryMask(a), BinaryMask(b)
    v = iou(ma, mb)
    assert v == iou(mb, ma)
    assert 0.0 <= v <= 1.0
    assert iou(ma, ma) == 1.0
    assert v == pytest.approx(iou_loop(a.tolist(), b.tolist()), abs=1e-12)


def test_miou():
    assert miou([rec(1.0), rec(0.0)]) == 0.5
    assert miou([rec(0.3)] * 7) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValidationError):
        miou([])


def test_miou_recomputed_from_masks():
    rng = np.random.default_rng(2)
    pairs = [(rng.random((6, 6)) > 0.5, rng.random((6, 6)) > 0.4) for _ in range(40)]
    records = [evaluate_pair("x", P, BinaryMask(a), BinaryMask(b), "removal") for a, b in pairs]
    independent = sum(iou_loop(a.tolist(), b.tolist()) for a, b in pairs) / len(pairs)
    assert abs(miou(records) - independent) < 1e-12


def test_success_rules():
    assert success(rec(0.0487), "removal")
    assert not success(rec(1.0), "removal")
    assert success(rec(0.5, area_clean=100, area_adv=5), "removal")
    assert success(rec(0.2, iou_target_adv=0.5), "target_shape")
    assert not success(rec(0.2, iou_target_adv=0.49), "target_shape")
    assert success(rec(0.3, area_clean=10, area_adv=20), "enlarge")
    assert not success(rec(0.3, area_clean=10, area_adv=19), "enlarge")
    with pytest.raises(ValidationError):
        success(rec(0.2), "flip_replace")


def test_record_range_checked():
    with pytest.raises(ValidationError):
        rec(1.5)


def test_record_dict_round_trip():
    r = rec(0.25, iou_target_adv=0.75, success=True)
    assert EvalRecord.from_dict(r.to_dict()) == r
