import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from gaitcontour import contour_pose as cp
from gaitcontour.errors import FormatError, InvalidKeypointCount, LengthMismatch, TooFewContourPoints
from gaitcontour.geometry import ApproxContour, trace_border, approximate_dominant_points


def approx(points):
    pts = np.asarray(points, dtype=float)
    return ApproxContour(pts, len(pts), np.arange(len(pts)))


def circle_points(n=360, r=100.0, c=(150.0, 150.0)):
    a = np.deg2rad(np.arange(n) * 360.0 / n)
    return np.rint(np.stack([c[0] + r * np.cos(a), c[1] + r * np.sin(a)], axis=1))


def random_pose(rng, lo=0, hi=300):
    return cp.PoseFrame(rng.uniform(lo, hi, size=(15, 2)))


def oracle_select(contour, kp):
    """Brute force: sort every contour point by (squared distance, index), take ten,
    then order by (angle, distance, index)."""
    rows = []
    for i, (x, y) in enumerate(contour):
        dx, dy = x - kp[0], y - kp[1]
        rows.append((dx * dx + dy * dy, i))
    chosen = [i for _, i in sorted(rows)[:10]]
    keyed = []
    for i in chosen:
        dx, dy = contour[i][0] - kp[0], contour[i][1] - kp[1]
        keyed.append((np.arctan2(dy, dx), dx * dx + dy * dy, i))
    return [i for *_, i in sorted(keyed)]


# reduce_head -------------------------------------------------------------------------

def test_reduce_head_drops_eyes():
    coco = np.arange(34, dtype=float).reshape(17, 2)
    coco[1] = coco[2] = -999.0
    pose = cp.reduce_head(coco)
    assert pose.keypoints.shape == (15, 2)
    assert not (pose.keypoints == -999.0).any()
    assert np.array_equal(pose.keypoints, np.delete(coco, [1, 2], axis=0))


def test_reduce_head_keeps_confidence():
    coco = np.ones((17, 3))
    coco[:, 2] = np.linspace(0, 1, 17)
    pose = cp.reduce_head(coco)
    assert np.array_equal(pose.confidence, np.delete(coco[:, 2], [1, 2]))


def test_reduce_head_rejects_15():
    with pytest.raises(InvalidKeypointCount):
        cp.reduce_head(np.zeros((15, 2)))


def test_pose_frame_invariants():
    with pytest.raises(InvalidKeypointCount):
        cp.PoseFrame(np.zeros((14, 2)))
    with pytest.raises(ValueError):
        cp.PoseFrame(np.full((15, 2), np.nan))


# build_contour_pose ------------------------------------------------------------------

def test_circle_center_matches_brute_force():
    pts = circle_points()
    kp = np.array([150.0, 150.0])
    pose = cp.PoseFrame(np.tile(kp, (15, 1)))
    frame = cp.build_contour_pose(approx(pts), pose)
    expected = oracle_select(pts.tolist(), kp)
    assert frame.selected[0].tolist() == expected
    assert np.array_equal(frame.points[1:11], pts[expected])


def test_random_keypoints_match_brute_force():
    rng = np.random.default_rng(4)
    pts = circle_points(200, 80)
    pose = random_pose(rng, 50, 250)
    frame = cp.build_contour_pose(approx(pts), pose)
    for k in range(15):
        assert frame.selected[k].tolist() == oracle_select(pts.tolist(), pose.keypoints[k])


def test_layout_and_shape():
    rng = np.random.default_rng(0)
    pose = random_pose(rng)
    frame = cp.build_contour_pose(approx(circle_points()), pose)
    assert frame.points.shape == (165, 2)
    assert np.array_equal(frame.points[::11], pose.keypoints)


def test_translation():
    rng = np.random.default_rng(1)
    pts = circle_points()
    pose = random_pose(rng)
    a = cp.build_contour_pose(approx(pts), pose)
    b = cp.build_contour_pose(approx(pts + [7, -3]), cp.PoseFrame(pose.keypoints + [7, -3]))
    assert np.array_equal(a.selected, b.selected)
    assert np.array_equal(b.points, a.points + [7, -3])


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([0.25, 0.5, 2.0, 4.0]), st.integers(-50, 50), st.integers(-50, 50), st.integers(0, 10_000))
def test_similarity_equivariance(scale, cx, cy, seed):
    # dyadic scales and integer centres keep every distance exact, so ties survive

    rng = np.random.default_rng(seed)
    pts = rng.integers(0, 200, size=(60, 2)).astype(float)
    pose = cp.PoseFrame(rng.integers(0, 200, size=(15, 2)).astype(float))
    center = np.array([cx, cy])
    moved = lambda p: (p - center) * scale + center
    a = cp.build_contour_pose(approx(pts), pose)
    b = cp.build_contour_pose(approx(moved(pts)), cp.PoseFrame(moved(pose.keypoints)))
    assert np.array_equal(a.selected, b.selected)


def test_clockwise_invariant(walker):
    seq = cp.extract_sequence(walker.silhouettes[:3], walker.poses[:3])
    for frame in seq.points:
        for k in range(15):
            d = frame[11 * k + 1:11 * k + 11] - frame[11 * k]
            ang = np.arctan2(d[:, 1], d[:, 0])
            assert np.all(np.diff(ang) >= 0)


def test_too_few_contour_points():
    with pytest.raises(TooFewContourPoints):
        cp.build_contour_pose(approx(circle_points(9)), cp.PoseFrame(np.zeros((15, 2))))


def test_shared_points_allowed():
    pts = circle_points(12, 10, (0, 0))
    frame = cp.build_contour_pose(approx(pts), cp.PoseFrame(np.zeros((15, 2))))
    assert len(np.unique(frame.selected)) == 10  # every keypoint picks the same ten


# graph -------------------------------------------------------------------------------

def test_edge_structure():
    edges = cp.CONTOUR_POSE_EDGES
    assert len({tuple(sorted(e)) for e in edges.tolist()}) == len(edges) == 15 * 19
    adj = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(165, 165))
    n, labels = connected_components(adj, directed=False)
    assert n == 15
    for k in range(15):
        members = np.nonzero(labels == labels[11 * k])[0]
        assert members.tolist() == list(range(11 * k, 11 * k + 11))
        deg = np.bincount(edges[np.isin(edges[:, 0], members)].ravel(), minlength=165)
        assert deg[11 * k] == 10  # fan centre
        assert deg[11 * k + 1] == deg[11 * k + 10] == 2  # path ends
        assert (deg[11 * k + 2:11 * k + 10] == 3).all()


# sequences ---------------------------------------------------------------------------

def test_sequence_single_frame():
    pts = approx(circle_points())
    pose = random_pose(np.random.default_rng(2))
    seq = cp.build_sequence([pts], [pose], subject_id="S1", view_id="side")
    assert len(seq) == 1 and seq.subject_id == "S1" and seq.view_id == "side"
    assert np.array_equal(seq.points[0], cp.build_contour_pose(pts, pose).points)


def test_sequence_static():
    pts = approx(circle_points())
    pose = random_pose(np.random.default_rng(3))
    seq = cp.build_sequence([pts] * 30, [pose] * 30)
    assert (seq.points == seq.points[0]).all()


def test_sequence_length_mismatch():
    with pytest.raises(LengthMismatch):
        cp.build_sequence([approx(circle_points())], [])


def test_missing_keypoints_filled():
    pts = approx(circle_points())
    rng = np.random.default_rng(5)
    poses = [random_pose(rng) for _ in range(4)]
    for p in poses:
        p.confidence[3] = 0.0
    poses[2].confidence[3] = 0.9
    poses[0].confidence[0] = 0.01
    seq = cp.build_sequence([pts] * 4, poses)
    for t in range(4):
        assert np.array_equal(seq.points[t, 33], poses[2].keypoints[3])
    assert np.array_equal(seq.points[0, 0], poses[1].keypoints[0])


def test_missing_everywhere_uses_centroid():
    pts = approx(circle_points())
    pose = random_pose(np.random.default_rng(6))
    pose.confidence[:] = 0.0
    seq = cp.build_sequence([pts], [pose])
    assert np.allclose(seq.points[0, ::11], pts.points.mean(axis=0))


def test_temporal_consistency(walker):
    contours = cp.extract_contours(walker.silhouettes)
    seq = cp.build_sequence(contours, [cp.reduce_head(p) for p in walker.poses])
    k = cp.KEYPOINT_NAMES.index("l_ankle")
    joints = seq.points[:, ::11]
    max_disp = np.linalg.norm(np.diff(joints, axis=0), axis=-1).max()
    spacing = max(np.linalg.norm(np.diff(np.vstack([c.points, c.points[:1]]), axis=0), axis=1).max()
                  for c in contours)
    for t in range(len(seq) - 1):
        a = seq.points[t, 11 * k + 1:11 * k + 11]
        b = seq.points[t + 1, 11 * k + 1:11 * k + 11]
        d = np.linalg.norm(a[:, None] - b[None], axis=-1)
        hausdorff = max(d.min(axis=0).max(), d.min(axis=1).max())
        assert hausdorff <= max_disp + spacing


# ablation inputs ---------------------------------------------------------------------

def test_uniform_every_third():
    pts = circle_points(336)
    ring = cp.sample_uniform_contour(approx(pts), 112)
    assert np.array_equal(ring.points, pts[::3])
    assert len(ring.edges) == 112
    assert ring.edges[-1].tolist() == [111, 0]


def test_uniform_identity_and_square():
    pts = circle_points(40)
    assert np.array_equal(cp.sample_uniform_contour(approx(pts), 40).points, pts)
    sq = approx([[0, 0], [9, 0], [9, 9], [0, 9]])
    ring = cp.sample_uniform_contour(sq, 4)
    assert ring.edges.tolist() == [[0, 1], [1, 2], [2, 3], [3, 0]]
    with pytest.raises(TooFewContourPoints):
        cp.sample_uniform_contour(sq, 5)


def test_shuffle_ordering():
    frame = cp.build_contour_pose(approx(circle_points()), random_pose(np.random.default_rng(7)))
    a = cp.shuffle_ordering(frame, 3)
    b = cp.shuffle_ordering(frame, 3)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.points[::11], frame.points[::11])
    for k in range(15):
        grp = slice(11 * k + 1, 11 * k + 11)
        assert sorted(map(tuple, a.points[grp].tolist())) == sorted(map(tuple, frame.points[grp].tolist()))
        assert np.array_equal(frame.points[grp][np.argsort(frame.selected[k])],
                              a.points[grp][np.argsort(a.selected[k])])
    assert not np.array_equal(a.points, frame.points)


def test_resort_undoes_shuffle(walker):
    seq = cp.extract_sequence(walker.silhouettes[:2], walker.poses[:2])
    shuffled = cp.shuffle_sequence(seq, 11)
    assert np.array_equal(cp.resort_groups(shuffled.points), seq.points)


# normalization and persistence -------------------------------------------------------

def test_normalize(walker):
    seq = cp.extract_sequence(walker.silhouettes[:4], walker.poses[:4])
    n = cp.normalize_points(seq.points)
    kp = lambda name: n[:, 11 * cp.KEYPOINT_NAMES.index(name)]
    assert np.allclose((kp("l_hip") + kp("r_hip")) / 2, 0)
    torso = np.linalg.norm((kp("l_shoulder") + kp("r_shoulder")) / 2, axis=1)
    assert np.isclose(torso.mean(), 1.0)
    assert np.allclose(cp.normalize_points(n), n)


def test_cpz_round_trip(tmp_path, walker):
    seq = cp.extract_sequence(walker.silhouettes[:3], walker.poses[:3], subject_id="S007", view_id="side")
    seq.points = seq.points.astype(np.float32).astype(float)
    path = tmp_path / "a.cpz"
    cp.save_cpz(path, seq)
    back = cp.load_cpz(path)
    assert back.points.dtype == np.float32
    assert np.array_equal(back.points, seq.points)
    assert np.array_equal(back.selected, seq.selected)
    assert np.array_equal(back.edges, seq.edges)
    assert (back.subject_id, back.view_id, back.kind) == ("S007", "side", "contour_pose")
    blob = path.read_bytes()
    assert blob[:4] == b"CPZ1" and len(blob) == 16 + 3 * 165 * 2 * 4
    cp.save_cpz(tmp_path / "b.cpz", back)
    assert (tmp_path / "b.cpz").read_bytes() == blob
    assert json.loads(cp.sidecar_path(path).read_text())["kind"] == "contour_pose"


def test_cpz_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.cpz"
    path.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(FormatError):
        cp.load_cpz(path)
