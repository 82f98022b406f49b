import math

import numpy as np
import pytest

import hybridtrack as ht


def test_geometry():
    box = np.array([0.0, 0.0, 0.0, 2.0, 4.0, 1.5, 0.3])
    assert ht.iou_3d(box, box) == pytest.approx(1.0)
    assert ht.bev_intersection_area(box, box) == pytest.approx(8.0)
    other = box + np.array([1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0])
    assert ht.ciou_3d(box, other) == pytest.approx(ht.ciou_3d(other, box), abs=1e-12)
    far = box + np.array([100.0, 0, 0, 0, 0, 0, 0])
    assert ht.iou_3d(box, far) == 0.0


def test_matching():
    costs = np.array([[0.5, 0.6], [0.1, 0.9]])
    assert ht.greedy_match(costs, 1.0) == [(0, 1), (1, 0)]
    assert ht.hungarian_match(np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0]])) == [(0, 1), (1, 0)]
    assert ht.greedy_match(np.array([[2.0]]), 1.2) == []


def test_perfect_evaluation():
    truth, _ = ht.simulate(seed=3, n_agents=5, n_frames=30)
    report = ht.evaluate(truth, truth)
    for key in ("hota", "deta", "assa", "mota", "idf1"):
        assert report[key] == pytest.approx(100.0)
    assert report["id_switches"] == 0


def test_tracking_pipeline():
    truth, detections = ht.simulate(seed=4, n_agents=6, n_frames=60)
    assert len(truth) == len(detections) == 60
    tracker = ht.Tracker(filter="cv-kalman")
    predicted = [tracker.step(k, boxes) for k, boxes in enumerate(detections)]
    report = ht.evaluate(truth, predicted)
    assert 0.0 < report["hota"] <= 100.0
    assert not math.isnan(report["mota"])


def test_untrained_hybrid_tracker_reports_births():
    tracker = ht.Tracker()
    boxes = np.array([[0.0, 0.0, 0.0, 1.8, 4.0, 1.5, 0.0]])
    ids, states = tracker.step(0, boxes)
    assert ids == [] and states.shape == (0, 7)
    ids, states = tracker.step(1, boxes)
    assert ids == [0]
    assert np.allclose(states[0], boxes[0])
    assert tracker.live == 1


def test_errors():
    tracker = ht.Tracker()
    tracker.step(0, np.zeros((0, 7)))
    with pytest.raises(ht.ContractViolation):
        tracker.step(0, np.zeros((0, 7)))
    with pytest.raises(ht.ConfigError):
        ht.Tracker(cost="manhattan")
    with pytest.raises(ht.ShapeError):
        ht.Tracker().step(0, np.zeros((2, 7)), np.ones(3))
    with pytest.raises(ht.Error):
        ht.simulate(n_agents=-1)


def test_cli():
    code, out, _ = ht.run_cli(["--help"])
    assert code == 0 and "simulate" in out
    code, _, err = ht.run_cli(["frobnicate"])
    assert code == 2 and err
