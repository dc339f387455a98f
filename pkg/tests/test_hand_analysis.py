import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from ehpskit.body_model import FullPoseState, forward_batch, gen_toy_model
from ehpskit.data_store import InstanceRecord, gen_synthetic_records
from ehpskit.errors import EmptyInput, InvalidArgument
from ehpskit.hand_analysis import (
    BIN_EDGES_MM,
    HandStats,
    dataset_hand_stats,
    hand_samples,
    histogram,
    median,
    quantile,
    rank_by_median,
    relaxed_distance,
    stats_to_csv,
    stats_to_json,
)


@pytest.fixture(scope="module")
def model():
    return gen_toy_model(6, 160, 55)


def test_zero_hand_pose_is_zero(model):
    assert relaxed_distance(model, np.zeros((15, 3)), "left") == 0.0
    assert relaxed_distance(model, np.zeros((15, 3)), "right") == 0.0


def _direct(model, hand, side):
    joints = model.hand_joints(side)
    mask = model.part_vertex_masks[f"{side}_hand"]
    posed = np.zeros((1, 55, 3))
    posed[0, joints] = hand
    a, ja = forward_batch(model, posed, np.zeros((1, 10)))
    b, jb = forward_batch(model, np.zeros((1, 55, 3)), np.zeros((1, 10)))
    w = model.wrist(side)
    return oracles.mean_l2_mm(a[0, mask] - (ja[0, w] - jb[0, w]), b[0, mask])


@given(st.integers(0, 2**32), st.sampled_from(["left", "right"]))
def test_matches_two_pass_oracle(seed, side):
    m = gen_toy_model(6, 160, 55)
    hand = np.random.default_rng(seed).normal(0, 0.4, (15, 3))
    assert abs(relaxed_distance(m, hand, side) - _direct(m, hand, side)) < 1e-9


def test_canonical_frame_ignores_body_and_camera(model):
    rng = np.random.default_rng(1)
    theta = rng.normal(0, 0.3, (55, 3))
    hand = theta[model.hand_joints("left")]
    d = relaxed_distance(model, hand, "left")
    rec_a = InstanceRecord("a", FullPoseState(theta, rng.normal(size=10), translation=[1.0, 2.0, 3.0]))
    theta_b = theta.copy()
    theta_b[0] = [0.0, 2.0, 0.0]
    rec_b = InstanceRecord("b", FullPoseState(theta_b))
    samples = hand_samples([rec_a, rec_b], model)
    assert samples[0] == pytest.approx(d, abs=1e-12)
    assert samples[2] == pytest.approx(d, abs=1e-12)


def test_raw_frame_uses_instance_shape(model):
    rng = np.random.default_rng(2)
    theta = rng.normal(0, 0.3, (55, 3))
    state = FullPoseState(theta, rng.normal(0, 2, 10))
    hand = theta[model.hand_joints("right")]
    raw = relaxed_distance(model, hand, "right", frame="raw", state=state)
    assert raw > 0 and raw != pytest.approx(relaxed_distance(model, hand, "right"), abs=1e-9)
    with pytest.raises(InvalidArgument):
        relaxed_distance(model, hand, "right", frame="raw")
    with pytest.raises(InvalidArgument):
        relaxed_distance(model, hand, "right", frame="camera")


def test_wrong_hand_shape(model):
    with pytest.raises(InvalidArgument):
        relaxed_distance(model, np.zeros((14, 3)), "left")
    with pytest.raises(InvalidArgument):
        relaxed_distance(model, np.zeros((15, 3)), "middle")


@given(st.lists(st.floats(0, 100), min_size=1, max_size=300))
def test_median_matches_sort_oracle(values):
    assert median(values) == oracles.sorted_median(values)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=300))
def test_quartiles_match_numpy_linear(values):
    v = sorted(values)
    assert quantile(v, 0.25) == pytest.approx(np.percentile(v, 25), abs=1e-9)
    assert quantile(v, 0.75) == pytest.approx(np.percentile(v, 75), abs=1e-9)
    s = HandStats.from_samples("x", values)
    assert s.q1_mm <= s.median_mm <= s.q3_mm
    assert sum(s.histogram) == s.n == len(values)


def test_histogram_bins():
    assert len(BIN_EDGES_MM) == 17 and BIN_EDGES_MM[-1] == 40.0
    counts = histogram([0.0, 2.49, 2.5, 39.99, 40.0, 1000.0])
    assert counts[0] == 2 and counts[1] == 1 and counts[15] == 1 and counts[16] == 2
    with pytest.raises(EmptyInput):
        HandStats.from_samples("x", [])


def test_ranking_descends_with_name_tiebreak():
    a = HandStats.from_samples("a", [5.0] * 4)
    b = HandStats.from_samples("b", [20.0] * 4)
    c = HandStats.from_samples("c", [20.0] * 4)
    assert [s.dataset_id for s in rank_by_median([a, c, b])] == ["b", "c", "a"]


def test_smpl_records_are_skipped(model):
    recs = gen_synthetic_records(1, 4, "x")
    recs[1].model_format = "smpl"
    assert hand_samples(recs, model).size == 6
    recs = [r for r in recs if r.model_format == "smpl"]
    with pytest.raises(EmptyInput):
        dataset_hand_stats(recs, model)


def test_stats_are_order_and_jobs_invariant(model):
    recs = gen_synthetic_records(5, 40, "x", "mixed")
    base = dataset_hand_stats(recs, model, "x")
    assert dataset_hand_stats(list(reversed(recs)), model, "x") == base
    chunked = HandStats.from_samples("x", np.concatenate(
        [hand_samples(recs[:13], model), hand_samples(recs[13:], model)]))
    assert chunked == base
    assert np.array_equal(hand_samples(recs, model, jobs=4, chunk=7), hand_samples(recs, model))


def test_exports(model):
    stats = [dataset_hand_stats(gen_synthetic_records(1, 5, "x", lv), model, lv) for lv in ("low", "high")]
    text = stats_to_csv(rank_by_median(stats))
    assert text.splitlines()[0] == "dataset_id,n,median_mm,q1_mm,q3_mm"
    assert text.splitlines()[1].startswith("high,10,")
    doc = json.loads(stats_to_json(stats))
    assert doc["datasets"][0]["bin_edges_mm"][:3] == [0.0, 2.5, 5.0]
    assert len(doc["datasets"][0]["histogram"]) == 17
