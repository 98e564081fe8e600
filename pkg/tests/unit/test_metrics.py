import numpy as np
import pydantic
import pytest

from frustumseg.exceptions import ShapeMismatchError
from frustumseg.metrics import ConfusionCounts, EvalReport, confusion, dsc, evaluate, score_volume, vs
from frustumseg.volume import MaskVolume


def brute_force(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(pred.reshape(-1), gt.reshape(-1)):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def test_counts_match_a_voxel_loop(rng):
    for _ in range(200):
        density = rng.uniform(0.05, 0.5)
        pred = (rng.uniform(size=(16, 16, 16)) < density).astype(np.uint8)
        gt = (rng.uniform(size=(16, 16, 16)) < density).astype(np.uint8)
        counts = confusion(pred, gt)
        tp, fp, fn, tn = brute_force(pred, gt)
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == (tp, fp, fn, tn)
        assert dsc(counts) == 2 * tp / (2 * tp + fp + fn)
        assert vs(counts) == 1 - abs(fn - fp) / (2 * tp + fp + fn)


def test_hand_cases():
    assert round(dsc(ConfusionCounts(tp=10, fp=5, fn=5, tn=0)), 4) == 0.6667
    assert round(vs(ConfusionCounts(tp=10, fp=8, fn=2, tn=0)), 4) == 0.8


def test_identical_and_disjoint_masks():
    mask = np.zeros((4, 4, 4), dtype=np.uint8)
    mask[1:3, 1:3, 1:3] = 1
    assert dsc(confusion(mask, mask)) == 1.0
    assert vs(confusion(mask, mask)) == 1.0
    assert dsc(confusion(mask, 1 - mask)) == 0.0


def test_both_empty_scores_one():
    empty = MaskVolume.empty((3, 3, 3))
    counts = confusion(empty, empty)
    assert counts.total == 27
    assert dsc(counts) == 1.0 and vs(counts) == 1.0


def test_volume_similarity_ignores_position():
    pred = np.zeros((6, 6, 6), dtype=np.uint8)
    gt = np.zeros((6, 6, 6), dtype=np.uint8)
    pred[0, 0, :4] = 1
    gt[5, 5, :4] = 1
    counts = confusion(pred, gt)
    assert dsc(counts) == 0.0
    assert vs(counts) == 1.0


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        confusion(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


def test_negative_counts_are_rejected():
    with pytest.raises(pydantic.ValidationError):
        ConfusionCounts(tp=-1, fp=0, fn=0, tn=0)


def test_evaluate_report():
    gt = np.zeros((4, 4, 4), dtype=np.uint8)
    gt[:2] = 1
    half = gt.copy()
    half[1] = 0
    report = evaluate({"b": half, "a": gt}, {"a": gt, "b": gt}, label="proposed")
    assert [s.id for s in report.scores] == ["a", "b"]
    assert report.summary["dsc_mean"] == pytest.approx((1.0 + 2 / 3) / 2)
    assert report.summary["dsc_std"] == pytest.approx((1.0 - 2 / 3) / 2)

    df = report.to_df()
    assert list(df["id"]) == ["a", "b", "mean", "std"]
    assert len(report.to_df(include_summary=False)) == 2
    table = report.to_table()
    assert "100.0" in table
    assert "mean±std" in table


def test_evaluate_needs_ground_truth_for_every_prediction():
    mask = np.zeros((2, 2, 2))
    with pytest.raises(KeyError, match="missing"):
        evaluate({"missing": mask}, {"other": mask})


def test_empty_report_summary_is_nan():
    assert np.isnan(EvalReport().summary["dsc_mean"])
    assert EvalReport().to_df().empty


def test_score_volume_keeps_counts():
    score = score_volume("x", np.ones((2, 2, 2)), np.ones((2, 2, 2)))
    assert (score.tp, score.fp, score.fn) == (8, 0, 0)
