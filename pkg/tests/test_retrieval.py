import numpy as np
import pytest

from hoisynth.body import body_sdf, skin
from hoisynth.fixtures import arms_forward_pose, grasp_box, gripped_object_pose
from hoisynth.geometry import RigidTransform, kabsch_fit, make_icosphere
from hoisynth.retrieval import (
    ContactMap,
    FitSettings,
    InteractionDB,
    RetrievalError,
    RetrievalResult,
    RetrievalWeights,
    fit_initial_pose,
    ingest_frame,
    load_db,
    part_key,
    retrieve_initial_state,
    save_db,
    select_pose,
)


@pytest.fixture(scope="module")
def grip(rig):
    mesh, center = grasp_box()
    db = InteractionDB(rig.part_names, {"box": mesh})
    pose = arms_forward_pose(rig, pitch=-0.2)
    truth = gripped_object_pose(rig, pose, center)
    cmap = ingest_frame(db, skin(rig, pose), truth, ["left_hand", "right_hand"], "box", source_id="g0")
    return db, mesh, pose, truth, cmap


def test_part_key_is_order_free():
    assert part_key(["right_hand", "left_hand"]) == part_key("left_hand+right_hand") == "left_hand+right_hand"


def test_ingest_records_every_vertex_within_threshold(grip, rig):
    db, mesh, pose, truth, cmap = grip
    verts = skin(rig, pose)
    posed = truth.apply(mesh.vertices)
    d = np.linalg.norm(verts[:, None] - posed[None], axis=2)
    expected = {(int(h), int(np.argmin(d[h]))) for h in np.flatnonzero(d.min(axis=1) <= 0.03)}
    assert set(cmap.pairs) == expected
    assert len(cmap.pairs) == 12  # the palm lattice vertices


def test_ingest_far_object_stores_nothing(grip, rig):
    db, mesh, pose, truth, _ = grip
    far = RigidTransform(truth.rotation, truth.translation + [5.0, 0, 0])
    n = len(db)
    assert ingest_frame(db, skin(rig, pose), far, "right_hand", "box") is None
    assert len(db) == n


def test_query_by_part_and_category(grip):
    db, *_ = grip
    assert len(db.query(["right_hand", "left_hand"], "Box")) == 1
    assert db.query("right_hand", "box") == []


def test_unknown_part_and_category_raise(grip):
    db, *_ = grip
    with pytest.raises(RetrievalError):
        db.add(ContactMap("tail", "box", ((0, 0),)))
    with pytest.raises(RetrievalError):
        db.template("piano")


def test_db_round_trip(grip, tmp_path):
    db, *_ = grip
    save_db(db, tmp_path / "db")
    back = load_db(tmp_path / "db")
    assert back.entries == db.entries
    assert np.array_equal(back.template("box").vertices, db.template("box").vertices)


def test_recorded_configuration_is_a_fixed_point(grip, rig):
    _, mesh, pose, truth, cmap = grip
    res = fit_initial_pose(cmap, skin(rig, pose), mesh, init=truth)
    assert res.e_fit < 1e-4
    assert np.abs(res.object_state.translation - truth.translation).max() < 1e-3


@pytest.mark.parametrize("seed", [0, 4, 7])
def test_fit_only_matches_registration_oracle(rig, seed):
    rng = np.random.default_rng(seed)
    mesh, _ = grasp_box()
    ids = np.array([0, 57, 140])
    g = RigidTransform.from_rotvec(rng.normal(size=3) * 0.3, rng.normal(size=3))
    body = np.zeros((rig.n_vertices, 3))
    body[:3] = g.apply(mesh.vertices[ids])
    cmap = ContactMap("right_hand", "box", tuple(zip(range(3), ids.tolist())))
    oracle, _ = kabsch_fit(mesh.vertices[ids], body[:3])
    turn = RigidTransform.from_rotvec(rng.normal(size=3) * 0.1).rotation
    start = RigidTransform(turn @ oracle.rotation, oracle.translation + rng.normal(size=3) * 0.03)
    res = fit_initial_pose(cmap, body, mesh, RetrievalWeights(1.0, 0.0, 0.0), init=start,
                           settings=FitSettings(iterations=3000))
    assert np.allclose(res.object_state.translation, oracle.translation, atol=1e-3)
    assert np.allclose(res.object_state.rotation, oracle.rotation, atol=1e-3)


def test_object_started_inside_body_is_pushed_out():
    # A sphere "body" with one contact vertex on its surface; the object starts inside it.
    from hoisynth.geometry import build_sdf

    body = make_icosphere(0.3, 3)
    grid = build_sdf(body, 0.02, padding=0.1)
    obj = make_icosphere(0.05, 1)
    top = int(np.argmax(body.vertices[:, 1]))
    bottom = int(np.argmin(obj.vertices[:, 1]))
    cmap = ContactMap("right_hand", "ball", ((top, bottom),))
    res = fit_initial_pose(cmap, body.vertices, obj, init=RigidTransform(np.eye(3), [0.0, 0.1, 0.0]),
                           body_grid=grid, contact_ids=[top], settings=FitSettings(iterations=600))
    assert res.e_pene == 0.0


def test_trace_never_increases(grip, rig):
    _, mesh, pose, truth, cmap = grip
    start = RigidTransform(truth.rotation, truth.translation + [0.01, -0.01, 0.005])
    res = fit_initial_pose(cmap, skin(rig, pose), mesh, init=start, body_grid=body_sdf(rig, pose))
    assert all(b < a for a, b in zip(res.trace, res.trace[1:]))


def _result(e_cont, e_pene=0.0, tag=""):
    return RetrievalResult(RigidTransform.identity(), 0.0, e_cont, e_pene, tag)


def test_select_pose_frequencies_follow_scores():
    cands = [_result(1.0, tag="a"), _result(0.5, tag="b"), _result(0.25, tag="c")]
    rng = np.random.default_rng(0)
    counts = {"a": 0, "b": 0, "c": 0}
    for _ in range(3000):
        counts[select_pose(cands, rng).source_id] += 1
    assert counts["a"] / 3000 == pytest.approx(1 / 7, abs=0.03)
    assert counts["c"] / 3000 == pytest.approx(4 / 7, abs=0.03)


def test_select_pose_edge_cases():
    with pytest.raises(RetrievalError):
        select_pose([])
    assert select_pose([_result(0.1, 0.2, "x"), _result(0.1, 0.05, "y")]).source_id == "y"
    assert select_pose([_result(1.0, tag="a"), _result(0.1, tag="b")], mode="argmax").source_id == "b"
    assert select_pose([_result(1.0, 0.3, "p"), _result(2.0, tag="q")], 0).source_id == "q"


def test_retrieve_initial_state_without_maps(grip, rig):
    db, _, pose, *_ = grip
    with pytest.raises(RetrievalError, match="no contact map"):
        retrieve_initial_state(db, ["right_foot"], "box", skin(rig, pose), None)


def test_retrieve_initial_state_recovers_grip(grip, rig):
    db, _, pose, truth, _ = grip
    chosen, results = retrieve_initial_state(db, ["left_hand", "right_hand"], "box", skin(rig, pose),
                                             body_sdf(rig, pose), np.random.default_rng(0))
    assert len(results) == 1 and chosen.e_pene == 0.0
    assert np.abs(chosen.object_state.translation - truth.translation).max() < 1e-6
