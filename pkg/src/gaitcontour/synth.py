"""Synthetic side-view walkers: paired silhouettes and exact COCO keypoints.

The figure is a 2-D kinematic chain drawn as filled capsules.  The hip stays
at a fixed point (treadmill walking); joint angles are sinusoids of the gait
phase with left and right limbs in antiphase.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FigureOutOfFrame
from .io import write_pgm

LIMB_NAMES = ("torso", "neck", "head", "upper_arm", "lower_arm", "thigh", "shin", "foot")
WIDTH_NAMES = ("torso", "upper_arm", "lower_arm", "thigh", "shin", "foot")

COCO_NAMES = ("nose", "l_eye", "r_eye", "l_ear", "r_ear", "l_shoulder", "r_shoulder", "l_elbow",
              "r_elbow", "l_wrist", "r_wrist", "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle")


@dataclass
class WalkerIdentity:
    """Body and gait parameters that make one synthetic subject.

    ``limb_lengths`` follows :data:`LIMB_NAMES` (the head entry is its
    radius); ``body_width`` holds capsule radii following :data:`WIDTH_NAMES`.
    """

    limb_lengths: tuple
    body_width: tuple
    gait_freq: float = 1 / 30
    stride_amp: float = 0.45
    arm_amp: float = 0.35
    phase_offset: float = 0.0

    def __post_init__(self):
        self.limb_lengths = tuple(float(v) for v in self.limb_lengths)
        self.body_width = tuple(float(v) for v in self.body_width)
        if len(self.limb_lengths) != len(LIMB_NAMES) or min(self.limb_lengths) <= 0:
            raise ValueError("need 8 positive limb lengths")
        if len(self.body_width) != len(WIDTH_NAMES) or min(self.body_width) <= 0:
            raise ValueError("need 6 positive capsule radii")
        if not 0 < self.gait_freq < 0.5:
            raise ValueError("gait_freq must lie in (0, 0.5)")

    def limb(self, name: str) -> float:
        return self.limb_lengths[LIMB_NAMES.index(name)]

    def width(self, name: str) -> float:
        return self.body_width[WIDTH_NAMES.index(name)]


DEFAULT_IDENTITY = WalkerIdentity(
    limb_lengths=(58, 8, 12, 32, 30, 46, 44, 15),
    body_width=(15, 7, 6, 10, 8, 5),
)


@dataclass
class WalkerSequence:
    silhouettes: np.ndarray  # (T, H, W) bool
    poses: np.ndarray  # (T, 17, 2) COCO order
    identity: WalkerIdentity
    seed: int


def _direction(angle: float) -> np.ndarray:
    """Unit vector at ``angle`` from straight down, positive towards +x."""
    return np.array([math.sin(angle), math.cos(angle)])


def walker_pose(ident: WalkerIdentity, t: float, hip: np.ndarray) -> tuple[dict, list]:
    """Joint positions and the capsule list for one frame."""
    phase = 2 * math.pi * ident.gait_freq * t + ident.phase_offset
    L, W = ident.limb, ident.width
    hip = np.asarray(hip, dtype=float)
    neck = hip + np.array([0.0, -L("torso")])
    head_r = L("head")
    head = neck + np.array([0.0, -(L("neck") + head_r)])

    joints = {
        "nose": head + np.array([0.75 * head_r, 0.1 * head_r]),
        "l_eye": head + np.array([0.5 * head_r, -0.25 * head_r]),
        "r_eye": head + np.array([0.55 * head_r, -0.15 * head_r]),
        "l_ear": head + np.array([-0.2 * head_r, -0.05 * head_r]),
        "r_ear": head + np.array([-0.05 * head_r, 0.05 * head_r]),
        "l_shoulder": neck + np.array([-2.0, 4.0]),
        "r_shoulder": neck + np.array([2.0, 4.0]),
        "l_hip": hip + np.array([-2.0, 0.0]),
        "r_hip": hip + np.array([2.0, 0.0]),
    }
    capsules = [(hip, neck, W("torso")), (neck, head, max(W("upper_arm"), 0.5 * head_r)), (head, head, head_r)]

    for side, sign in (("l", 1.0), ("r", -1.0)):
        swing = sign * math.sin(phase)
        thigh = ident.stride_amp * swing
        # knee flexes most while the leg swings forward
        knee_bend = 0.6 * ident.stride_amp * (1 + sign * math.cos(phase)) / 2
        shin = thigh - knee_bend
        h = joints[f"{side}_hip"]
        knee = h + L("thigh") * _direction(thigh)
        ankle = knee + L("shin") * _direction(shin)
        toe = ankle + L("foot") * _direction(shin + math.pi / 2)
        joints[f"{side}_knee"], joints[f"{side}_ankle"] = knee, ankle
        capsules += [(h, knee, W("thigh")), (knee, ankle, W("shin")), (ankle, toe, W("foot"))]

        upper = -ident.arm_amp * swing
        fore = upper + 0.25 + 0.3 * ident.arm_amp * (1 - swing) / 2
        s = joints[f"{side}_shoulder"]
        elbow = s + L("upper_arm") * _direction(upper)
        wrist = elbow + L("lower_arm") * _direction(fore)
        joints[f"{side}_elbow"], joints[f"{side}_wrist"] = elbow, wrist
        capsules += [(s, elbow, W("upper_arm")), (elbow, wrist, W("lower_arm"))]
    return joints, capsules


def rasterize_capsules(capsules, shape: tuple) -> np.ndarray:
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    for a, b, r in capsules:
        x0 = max(int(math.floor(min(a[0], b[0]) - r)), 0)
        x1 = min(int(math.ceil(max(a[0], b[0]) + r)) + 1, w)
        y0 = max(int(math.floor(min(a[1], b[1]) - r)), 0)
        y1 = min(int(math.ceil(max(a[1], b[1]) + r)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0:
            d2 = (xs - a[0]) ** 2 + (ys - a[1]) ** 2
        else:
            u = np.clip(((xs - a[0]) * ab[0] + (ys - a[1]) * ab[1]) / denom, 0.0, 1.0)
            d2 = (xs - a[0] - u * ab[0]) ** 2 + (ys - a[1] - u * ab[1]) ** 2
        mask[y0:y1, x0:x1] |= d2 <= r * r
    return mask


def _check_in_frame(capsules, shape: tuple) -> None:
    h, w = shape
    for a, b, r in capsules:
        lo = np.minimum(a, b) - r
        hi = np.maximum(a, b) + r
        if lo[0] < 1 or lo[1] < 1 or hi[0] > w - 2 or hi[1] > h - 2:
            raise FigureOutOfFrame(f"capsule spans x[{lo[0]:.1f},{hi[0]:.1f}] y[{lo[1]:.1f},{hi[1]:.1f}] "
                                   f"outside a {w}x{h} frame")


def generate_walker(ident: WalkerIdentity, T: int, frame_size: tuple = (256, 256),
                    seed: int = 0) -> WalkerSequence:
    """Render ``T`` frames; ``seed`` only jitters where the hip sits in the frame."""
    h, w = frame_size
    rng = np.random.default_rng(seed)
    hip = np.array([w / 2, h / 2 + 0.05 * h]) + rng.uniform(-3.0, 3.0, size=2)
    masks = np.zeros((T, h, w), dtype=bool)
    poses = np.zeros((T, len(COCO_NAMES), 2))
    for t in range(T):
        joints, capsules = walker_pose(ident, t, hip)
        _check_in_frame(capsules, frame_size)
        masks[t] = rasterize_capsules(capsules, frame_size)
        poses[t] = [joints[n] for n in COCO_NAMES]
    return WalkerSequence(masks, poses, ident, seed)


# datasets -----------------------------------------------------------------------

_LIMB_RANGES = ((50, 66), (6, 10), (10, 14), (27, 36), (25, 34), (40, 52), (38, 50), (12, 18))
_WIDTH_RANGES = ((13, 18), (6, 8), (5, 7), (9, 12), (7, 9.5), (4, 6))
_PERIODS = tuple(range(24, 37, 2))


def _differs(a: np.ndarray, b: np.ndarray, rel: float) -> bool:
    return bool(np.max(np.abs(a - b) / np.maximum(np.abs(a), np.abs(b))) >= rel)


def sample_identities(n_ids: int, rng: np.random.Generator, min_rel_diff: float = 0.05,
                      max_tries: int = 10000) -> list[WalkerIdentity]:
    """Rejection-sample identities whose limb lengths, and limb-to-torso
    ratios, differ pairwise by at least ``min_rel_diff`` in some entry."""
    ids: list[WalkerIdentity] = []
    for _ in range(max_tries):
        if len(ids) == n_ids:
            break
        limbs = np.array([rng.uniform(lo, hi) for lo, hi in _LIMB_RANGES])
        widths = np.array([rng.uniform(lo, hi) for lo, hi in _WIDTH_RANGES])
        period = int(rng.choice(_PERIODS))
        stride = float(rng.uniform(0.35, 0.6))
        arm = float(rng.uniform(0.25, 0.5))
        ratios = limbs / limbs[0]
        if all(_differs(limbs, np.array(o.limb_lengths), min_rel_diff)
               and _differs(ratios[1:], np.array(o.limb_lengths[1:]) / o.limb_lengths[0], min_rel_diff)
               for o in ids):
            ids.append(WalkerIdentity(tuple(np.round(limbs, 3)), tuple(np.round(widths, 3)),
                                      gait_freq=1 / period, stride_amp=round(stride, 4),
                                      arm_amp=round(arm, 4)))
    if len(ids) < n_ids:
        raise RuntimeError(f"could only sample {len(ids)} distinct identities")
    return ids


def sequence_name(subject: int, seq: int) -> str:
    return f"S{subject:03d}_q{seq:02d}"


def dataset_plan(n_ids: int, seqs_per_id: int, seed: int) -> list[dict]:
    """Per-sequence recipe: subject, walker parameters and placement seed.

    Sequences of one subject differ only in phase offset and placement seed.
    """
    if n_ids < 2:
        raise ValueError("need at least 2 identities")
    rng = np.random.default_rng(seed)
    identities = sample_identities(n_ids, rng)
    plan = []
    for sid, ident in enumerate(identities):
        for q in range(seqs_per_id):
            seq_rng = np.random.default_rng([seed, sid, q])
            phase = float(seq_rng.uniform(0, 2 * math.pi))
            seq_seed = int(seq_rng.integers(0, 2**31 - 1))
            walker = WalkerIdentity(ident.limb_lengths, ident.body_width, ident.gait_freq,
                                    ident.stride_amp, ident.arm_amp, phase_offset=round(phase, 6))
            plan.append({"name": sequence_name(sid, q), "subject_id": f"S{sid:03d}", "seq_index": q,
                         "view_id": "side", "seed": seq_seed, "walker": walker})
    return plan


def generate_sequences(n_ids: int, seqs_per_id: int, T: int, seed: int,
                       frame_size: tuple = (256, 256)) -> list[tuple[dict, WalkerSequence]]:
    """In-memory counterpart of :func:`generate_dataset`."""
    return [(e, generate_walker(e["walker"], T, frame_size, e["seed"])) for e in dataset_plan(n_ids, seqs_per_id, seed)]


def generate_dataset(n_ids: int, seqs_per_id: int, T: int, seed: int, out: str | Path,
                     frame_size: tuple = (256, 256)) -> list[dict]:
    """Write ``n_ids * seqs_per_id`` sequence directories plus ``manifest.json``.

    Each directory holds ``000001.pgm`` ... and ``pose.json``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for e, seq in generate_sequences(n_ids, seqs_per_id, T, seed, frame_size):
        write_walker(seq, out / e["name"], subject_id=e["subject_id"], view_id=e["view_id"],
                     seq_index=e["seq_index"])
        entry = {k: v for k, v in e.items() if k != "walker"}
        entry["identity"] = asdict(e["walker"])
        entries.append(entry)
    manifest = {"n_ids": n_ids, "seqs_per_id": seqs_per_id, "frames": T, "seed": seed,
                "frame_size": list(frame_size), "sequences": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return entries


def write_walker(seq: WalkerSequence, directory: Path, subject_id: str | None = None,
                 view_id: str | None = None, seq_index: int | None = None) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for t, m in enumerate(seq.silhouettes):
        write_pgm(directory / f"{t + 1:06d}.pgm", m.astype(np.uint8) * 255)
    frames = [{"keypoints": [[round(float(x), 4), round(float(y), 4), 1.0] for x, y in p]}
              for p in seq.poses]
    doc = {"frames": frames}
    if subject_id is not None:
        doc["subject_id"] = subject_id
    if view_id is not None:
        doc["view_id"] = view_id
    if seq_index is not None:
        doc["seq_index"] = seq_index
    (directory / "pose.json").write_text(json.dumps(doc) + "\n")
