"""Contour-Pose construction: keypoints anchored by their nearest contour points.

Point layout per frame (165 points): for keypoint ``k`` in
:data:`KEYPOINT_NAMES` order, index ``11 * k`` is the keypoint and
``11 * k + 1 ... 11 * k + 10`` are its contour points in clockwise order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidKeypointCount, LengthMismatch, TooFewContourPoints
from .geometry import ApproxConfig, ApproxContour, approximate_dominant_points, trace_border, uniform_indices
from .io import cpz_dumps, cpz_loads

KEYPOINT_NAMES = ("nose", "l_ear", "r_ear", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
                  "l_wrist", "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle")
NUM_KEYPOINTS = len(KEYPOINT_NAMES)
CONTOUR_PER_KEYPOINT = 10
GROUP_SIZE = CONTOUR_PER_KEYPOINT + 1
POINTS_PER_FRAME = NUM_KEYPOINTS * GROUP_SIZE

COCO_EYES = (1, 2)
MIN_CONFIDENCE = 0.05

# left/right partner of every keypoint, used by horizontal flips
FLIP_PERMUTATION = tuple(
    KEYPOINT_NAMES.index(n.replace("l_", "\0").replace("r_", "l_").replace("\0", "r_"))
    for n in KEYPOINT_NAMES
)


def _build_edges() -> np.ndarray:
    edges = []
    for k in range(NUM_KEYPOINTS):
        base = GROUP_SIZE * k
        edges += [(base, base + j) for j in range(1, GROUP_SIZE)]
        edges += [(base + j, base + j + 1) for j in range(1, CONTOUR_PER_KEYPOINT)]
    return np.array(edges, dtype=np.int64)


CONTOUR_POSE_EDGES = _build_edges()


@dataclass
class PoseFrame:
    keypoints: np.ndarray  # (15, 2)
    confidence: np.ndarray = None  # (15,)

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float)
        if self.keypoints.shape != (NUM_KEYPOINTS, 2):
            raise InvalidKeypointCount(f"expected {NUM_KEYPOINTS} keypoints, got {self.keypoints.shape}")
        if not np.isfinite(self.keypoints).all():
            raise ValueError("keypoint coordinates must be finite")
        if self.confidence is None:
            self.confidence = np.ones(NUM_KEYPOINTS)
        self.confidence = np.asarray(self.confidence, dtype=float)


@dataclass
class ContourPoseFrame:
    points: np.ndarray  # (165, 2)
    selected: np.ndarray  # (15, 10) indices into the approximated contour
    edges: np.ndarray = field(default_factory=lambda: CONTOUR_POSE_EDGES.copy())


@dataclass
class ContourPoseSequence:
    points: np.ndarray  # (T, 165, 2)
    selected: np.ndarray | None = None  # (T, 15, 10)
    edges: np.ndarray = field(default_factory=lambda: CONTOUR_POSE_EDGES.copy())
    subject_id: str | None = None
    view_id: str | None = None
    kind: str = "contour_pose"
    normalized: bool = False

    def __len__(self) -> int:
        return len(self.points)

    @property
    def frames(self) -> list[ContourPoseFrame]:
        sel = self.selected if self.selected is not None else [None] * len(self.points)
        return [ContourPoseFrame(p, s, self.edges) for p, s in zip(self.points, sel)]


@dataclass
class RingGraph:
    """Uniformly sampled contour with each point linked to its two ring neighbours."""

    points: np.ndarray  # (n, 2)
    edges: np.ndarray  # (n, 2)
    source_indices: np.ndarray


def reduce_head(pose17) -> PoseFrame:
    """COCO-17 keypoints (``[x, y]`` or ``[x, y, conf]`` rows) to the 15-point layout."""
    arr = np.asarray(pose17, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != 17 or arr.shape[1] not in (2, 3):
        raise InvalidKeypointCount(f"expected 17 COCO keypoints, got shape {arr.shape}")
    kept = np.delete(arr, COCO_EYES, axis=0)
    conf = kept[:, 2] if arr.shape[1] == 3 else None
    return PoseFrame(kept[:, :2], conf)


def clockwise_order(center: np.ndarray, pts: np.ndarray, tiebreak: np.ndarray) -> np.ndarray:
    """Permutation sorting ``pts`` clockwise on screen about ``center``.

    Starts at the smallest ``atan2`` angle in (-pi, pi]; with y pointing down,
    ascending angle is clockwise.  Ties go to the nearer point, then the
    smaller ``tiebreak`` value.
    """
    d = pts - center
    ang = np.arctan2(d[:, 1], d[:, 0])
    dist = d[:, 0] ** 2 + d[:, 1] ** 2
    return np.lexsort((tiebreak, dist, ang))


def build_contour_pose(contour: ApproxContour, pose: PoseFrame) -> ContourPoseFrame:
    cpts = np.asarray(contour.points, dtype=float)
    m = len(cpts)
    if m < CONTOUR_PER_KEYPOINT:
        raise TooFewContourPoints(f"need at least {CONTOUR_PER_KEYPOINT} contour points, got {m}")
    order = np.arange(m)
    points = np.empty((POINTS_PER_FRAME, 2))
    selected = np.empty((NUM_KEYPOINTS, CONTOUR_PER_KEYPOINT), dtype=np.int64)
    for k, kp in enumerate(pose.keypoints):
        diff = cpts - kp
        dist = diff[:, 0] ** 2 + diff[:, 1] ** 2
        nearest = np.lexsort((order, dist))[:CONTOUR_PER_KEYPOINT]
        nearest = nearest[clockwise_order(kp, cpts[nearest], nearest)]
        selected[k] = nearest
        base = GROUP_SIZE * k
        points[base] = kp
        points[base + 1:base + GROUP_SIZE] = cpts[nearest]
    return ContourPoseFrame(points, selected)


def fill_missing_keypoints(poses: list[PoseFrame], centroids: np.ndarray,
                           min_conf: float = MIN_CONFIDENCE) -> list[PoseFrame]:
    """Replace low-confidence keypoints with the same keypoint from the
    nearest frame where it is valid, falling back to that frame's body centroid."""
    kps = np.array([p.keypoints for p in poses])
    valid = np.array([p.confidence >= min_conf for p in poses])
    out = kps.copy()
    T = len(poses)
    for k in range(NUM_KEYPOINTS):
        good = np.nonzero(valid[:, k])[0]
        for t in np.nonzero(~valid[:, k])[0]:
            if good.size:
                src = good[np.argmin(np.abs(good - t))]
                out[t, k] = kps[src, k]
            else:
                out[t, k] = centroids[t]
    return [PoseFrame(out[t], np.where(valid[t], poses[t].confidence, min_conf)) for t in range(T)]


def build_sequence(contours: list[ApproxContour], poses: list[PoseFrame], subject_id: str | None = None,
                   view_id: str | None = None) -> ContourPoseSequence:
    if len(contours) != len(poses):
        raise LengthMismatch(f"{len(contours)} contours vs {len(poses)} poses")
    if not contours:
        raise LengthMismatch("empty sequence")
    if any((p.confidence < MIN_CONFIDENCE).any() for p in poses):
        centroids = np.array([np.asarray(c.points, dtype=float).mean(axis=0) for c in contours])
        poses = fill_missing_keypoints(poses, centroids)
    frames = [build_contour_pose(c, p) for c, p in zip(contours, poses)]
    return ContourPoseSequence(np.stack([f.points for f in frames]), np.stack([f.selected for f in frames]),
                               subject_id=subject_id, view_id=view_id)


def sample_uniform_contour(contour: ApproxContour, n: int) -> RingGraph:
    pts = np.asarray(contour.points)
    if n < 3 or len(pts) < n:
        raise TooFewContourPoints(f"cannot sample {n} ring points from {len(pts)}")
    idx = uniform_indices(len(pts), n)
    ring = np.arange(n)
    return RingGraph(pts[idx].astype(float), np.stack([ring, (ring + 1) % n], axis=1), idx)


def shuffle_ordering(frame: ContourPoseFrame, seed) -> ContourPoseFrame:
    """Randomly permute each keypoint's 10 contour slots (keypoint slots stay)."""
    rng = np.random.default_rng(seed)
    points = frame.points.copy()
    selected = None if frame.selected is None else frame.selected.copy()
    for k in range(NUM_KEYPOINTS):
        perm = rng.permutation(CONTOUR_PER_KEYPOINT)
        base = GROUP_SIZE * k + 1
        points[base:base + CONTOUR_PER_KEYPOINT] = frame.points[base:base + CONTOUR_PER_KEYPOINT][perm]
        if selected is not None:
            selected[k] = frame.selected[k][perm]
    return ContourPoseFrame(points, selected, frame.edges)


def shuffle_sequence(seq: ContourPoseSequence, seed) -> ContourPoseSequence:
    """Frame-wise :func:`shuffle_ordering` with an independent stream per frame."""
    key = np.atleast_1d(seed).tolist()
    frames = [shuffle_ordering(f, key + [t]) for t, f in enumerate(seq.frames)]
    selected = None if seq.selected is None else np.stack([f.selected for f in frames])
    return ContourPoseSequence(np.stack([f.points for f in frames]), selected, seq.edges.copy(),
                               seq.subject_id, seq.view_id, seq.kind, seq.normalized)


def resort_groups(points: np.ndarray) -> np.ndarray:
    """Re-apply the clockwise rule to every keypoint group of ``(..., 165, 2)`` points."""
    out = np.array(points, dtype=float, copy=True)
    flat = out.reshape(-1, POINTS_PER_FRAME, 2)
    slots = np.arange(CONTOUR_PER_KEYPOINT)
    for frame in flat:
        for k in range(NUM_KEYPOINTS):
            base = GROUP_SIZE * k
            group = frame[base + 1:base + GROUP_SIZE].copy()
            frame[base + 1:base + GROUP_SIZE] = group[clockwise_order(frame[base], group, slots)]
    return out


def normalize_points(points: np.ndarray) -> np.ndarray:
    """Mid-hip to the origin per frame, scaled by the mean torso length.

    Torso length is the mid-shoulder to mid-hip distance.
    """
    pts = np.asarray(points, dtype=float)
    kp = lambda name: pts[:, GROUP_SIZE * KEYPOINT_NAMES.index(name)]
    mid_hip = 0.5 * (kp("l_hip") + kp("r_hip"))
    mid_shoulder = 0.5 * (kp("l_shoulder") + kp("r_shoulder"))
    torso = float(np.mean(np.linalg.norm(mid_shoulder - mid_hip, axis=1)))
    if not torso > 0:
        raise ValueError("degenerate torso length")
    return (pts - mid_hip[:, None, :]) / torso


# extraction -----------------------------------------------------------------------------

def extract_contours(masks: np.ndarray, cfg: ApproxConfig | None = None) -> list[ApproxContour]:
    return [approximate_dominant_points(trace_border(m), cfg) for m in masks]


def extract_sequence(masks: np.ndarray, pose17: np.ndarray, cfg: ApproxConfig | None = None,
                     subject_id: str | None = None, view_id: str | None = None) -> ContourPoseSequence:
    """Silhouettes ``(T, H, W)`` + COCO keypoints ``(T, 17, 2|3)`` -> Contour-Pose."""
    if len(masks) != len(pose17):
        raise LengthMismatch(f"{len(masks)} masks vs {len(pose17)} pose frames")
    contours = extract_contours(masks, cfg)
    return build_sequence(contours, [reduce_head(p) for p in pose17], subject_id, view_id)


def extract_ring_sequence(masks: np.ndarray, n: int = 112, cfg: ApproxConfig | None = None,
                          subject_id: str | None = None, view_id: str | None = None) -> ContourPoseSequence:
    rings = [sample_uniform_contour(c, n) for c in extract_contours(masks, cfg)]
    return ContourPoseSequence(np.stack([r.points for r in rings]), None, rings[0].edges,
                               subject_id, view_id, kind="ring")


# .cpz persistence ------------------------------------------------------------------------

def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_cpz(path: str | Path, seq: ContourPoseSequence) -> None:
    """Write the binary container and its JSON sidecar (edges and metadata)."""
    path = Path(path)
    anchors = NUM_KEYPOINTS if seq.kind == "contour_pose" else 0
    path.write_bytes(cpz_dumps(seq.points, anchors))
    meta = {"kind": seq.kind, "subject_id": seq.subject_id, "view_id": seq.view_id, "normalized": seq.normalized,
            "edges": np.asarray(seq.edges).tolist()}
    if seq.selected is not None:
        meta["selected"] = np.asarray(seq.selected).tolist()
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_cpz(path: str | Path) -> ContourPoseSequence:
    path = Path(path)
    points, anchors = cpz_loads(path.read_bytes())
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    kind = meta.get("kind", "contour_pose" if anchors else "ring")
    if kind == "contour_pose" and points.shape[1] != POINTS_PER_FRAME:
        raise FormatError(f"{path}: {points.shape[1]} points per frame, expected {POINTS_PER_FRAME}")
    edges = np.array(meta["edges"], dtype=np.int64) if "edges" in meta else CONTOUR_POSE_EDGES.copy()
    selected = np.array(meta["selected"], dtype=np.int64) if "selected" in meta else None
    return ContourPoseSequence(points, selected, edges, meta.get("subject_id"), meta.get("view_id"), kind,
                               bool(meta.get("normalized", False)))
