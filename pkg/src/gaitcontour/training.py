"""Triplet metric learning with P x K batches, batch-hard mining and Adam."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import checkpoint
from .autograd import Tape, Tensor
from .contour_pose import ContourPoseSequence, normalize_points
from .errors import DegenerateBatch, InsufficientData
from .features import AugmentConfig, augment_points, embed_points
from .model import GaitContour, ModelConfig

log = logging.getLogger(__name__)

DIST_FLOOR = 1e-12


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.2
    p_subjects: int = 4
    k_seqs: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 2000
    seed: int = 0
    clip_frames: int = 2
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.p_subjects < 2 or self.k_seqs < 2:
            raise DegenerateBatch(f"need P >= 2 and K >= 2, got P={self.p_subjects} K={self.k_seqs}")
        if self.clip_frames < 1:
            raise ValueError("clip_frames must be >= 1")


# losses -------------------------------------------------------------------------------

def triplet_loss(anchor, pos, neg, margin: float) -> float:
    a, p, n = (np.asarray(v, dtype=float) for v in (anchor, pos, neg))
    if not a.shape == p.shape == n.shape:
        raise ValueError("anchor, positive and negative must share a shape")
    return max(0.0, float(np.linalg.norm(a - p) - np.linalg.norm(a - n)) + margin)


def pairwise_distances(emb: Tensor) -> Tensor:
    """Euclidean distances between all rows, kept differentiable at zero."""
    diff = ag.sub(ag.reshape(emb, (emb.shape[0], 1, -1)), ag.reshape(emb, (1, emb.shape[0], -1)))
    sq = ag.sum_(ag.mul(diff, diff), axis=-1)
    return ag.sqrt(ag.clamp_min(sq, DIST_FLOOR))


def hard_pairs(dist: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor column of the farthest positive and of the nearest negative."""
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = labels[:, None] != labels[None, :]
    pos = np.argmax(np.where(same, dist, -np.inf), axis=1)
    neg = np.argmin(np.where(diff, dist, np.inf), axis=1)
    return pos, neg


def check_batch(labels: np.ndarray) -> None:
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2 or counts.min() < 2:
        raise DegenerateBatch(f"batch-hard mining needs >= 2 subjects with >= 2 samples each, got {counts.tolist()}")


def batch_hard_loss(emb, labels, margin: float) -> Tensor:
    """Mean over anchors of ``[d(a, hardest pos) - d(a, hardest neg) + m]_+``."""
    emb = emb if isinstance(emb, Tensor) else Tensor(emb)
    labels = np.asarray(labels)
    check_batch(labels)
    n = emb.shape[0]
    dist = pairwise_distances(emb)
    pos, neg = hard_pairs(dist.data, labels)
    flat = ag.reshape(dist, (n * n,))
    rows = np.arange(n) * n
    d_pos = ag.take(flat, rows + pos)
    d_neg = ag.take(flat, rows + neg)
    hinge = ag.relu(ag.add(ag.sub(d_pos, d_neg), Tensor(margin)))
    return ag.mean(hinge)


# optimizer ----------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              cfg: TripletConfig) -> AdamState:
    """In-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


# data ---------------------------------------------------------------------------------

@dataclass
class TrainingSet:
    """Normalized ``(T, 165, 2)`` sequences with subject labels."""

    points: list
    labels: list

    @classmethod
    def from_sequences(cls, seqs: list[ContourPoseSequence]) -> "TrainingSet":
        return cls([normalize_points(s.points) for s in seqs], [s.subject_id for s in seqs])

    def by_subject(self) -> dict:
        groups: dict = {}
        for i, lab in enumerate(self.labels):
            groups.setdefault(lab, []).append(i)
        return dict(sorted(groups.items(), key=lambda kv: str(kv[0])))


def fit_length(points: np.ndarray, frames: int, start: int | None = None) -> np.ndarray:
    """Window of ``frames`` frames: cyclic padding when too short, else the
    window at ``start`` (centre window when ``start`` is None)."""
    n = len(points)
    if n < frames:
        return points[np.arange(frames) % n]
    if start is None:
        start = (n - frames) // 2
    return points[start:start + frames]


def sample_batch(data: TrainingSet, cfg: TripletConfig, rng: np.random.Generator):
    groups = data.by_subject()
    eligible = [s for s, idx in groups.items() if len(idx) >= cfg.k_seqs]
    if len(eligible) < cfg.p_subjects:
        raise InsufficientData(f"need {cfg.p_subjects} subjects with >= {cfg.k_seqs} sequences, have {len(eligible)}")
    subjects = rng.choice(len(eligible), size=cfg.p_subjects, replace=False)
    clips, labels = [], []
    for s_i, s in enumerate(subjects):
        members = groups[eligible[s]]
        for i in rng.choice(len(members), size=cfg.k_seqs, replace=False):
            pts = data.points[members[i]]
            start = int(rng.integers(0, max(len(pts) - cfg.clip_frames, 0) + 1))
            clips.append(fit_length(pts, cfg.clip_frames, start))
            labels.append(s_i)
    return clips, np.array(labels)


# loop ---------------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: GaitContour
    losses: list

    def tail_mean(self, n: int = 100) -> float:
        return float(np.mean(self.losses[-n:]))


def train_loop(data: TrainingSet, model_cfg: ModelConfig | None = None, trip_cfg: TripletConfig | None = None,
               aug_cfg: AugmentConfig | None = None, out_dir: str | Path | None = None,
               log_every: int = 100) -> TrainResult:
    """Seeded loop: sample P x K -> augment -> forward -> batch-hard loss -> backward -> Adam.

    Writes ``loss.csv`` and ``model.gct`` (plus ``step_XXXXX.gct`` every
    ``checkpoint_every`` steps) into ``out_dir`` when given.
    """
    model_cfg = model_cfg or ModelConfig()
    trip_cfg = trip_cfg or TripletConfig()
    aug_cfg = aug_cfg or AugmentConfig()
    model = GaitContour(model_cfg)
    params = dict(model.named_parameters())
    sample_rng = np.random.default_rng(trip_cfg.seed)
    aug_rng = np.random.default_rng(aug_cfg.rng_seed)
    state = AdamState()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    losses = []

    # fail early rather than mid-run
    sample_batch(data, trip_cfg, np.random.default_rng(0))
    for step in range(1, trip_cfg.steps + 1):
        clips, labels = sample_batch(data, trip_cfg, sample_rng)
        x = np.stack([embed_points(augment_points(c, aug_cfg, aug_rng)) for c in clips])
        for p in params.values():
            p.zero_grad()
        with Tape() as tape:
            emb = model.forward_features(Tensor(x), train=True)
            loss = batch_hard_loss(emb, labels, trip_cfg.margin)
        if loss.requires_grad:
            tape.backward(loss)
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
        adam_step(params, grads, state, trip_cfg)
        losses.append(float(loss.data))
        if log_every and step % log_every == 0:
            log.info("step %d loss %.5f (last-%d mean %.5f)", step, losses[-1], log_every,
                     float(np.mean(losses[-log_every:])))
        if out is not None and trip_cfg.checkpoint_every and step % trip_cfg.checkpoint_every == 0:
            checkpoint.save(out / f"step_{step:05d}.gct", model.state_dict())

    if out is not None:
        write_loss_csv(out / "loss.csv", losses)
        checkpoint.save(out / "model.gct", model.state_dict())
    return TrainResult(model, losses)


def write_loss_csv(path: str | Path, losses: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses, 1):
            w.writerow([i, repr(float(v))])
