"""Rank retrieval and verification (TAR at fixed FAR) over embedding sets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .autograd import Tensor, no_grad
from .contour_pose import normalize_points
from .errors import EmptySet, NoImpostors, ShapeMismatch
from .features import embed_points
from .model import GaitContour, ModelConfig
from .training import fit_length

EMBED_DIM = 256
RANK_KS = (1, 5, 10)
FAR_POINTS = (1e-2, 1e-1)


@dataclass
class EmbeddingSet:
    embeddings: np.ndarray  # (N, 256)
    subject_ids: list
    view_ids: list = None
    role: str = "gallery"

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=float)
        if self.embeddings.ndim != 2 or len(self.embeddings) == 0:
            raise EmptySet(f"{self.role} set is empty")
        if len(self.subject_ids) != len(self.embeddings):
            raise ShapeMismatch("one subject id per embedding required")
        if self.view_ids is None:
            self.view_ids = [None] * len(self.embeddings)

    def __len__(self) -> int:
        return len(self.embeddings)


def distance_matrix(gallery: EmbeddingSet, probe: EmbeddingSet) -> np.ndarray:
    """``(n_probe, n_gallery)`` Euclidean distances."""
    diff = probe.embeddings[:, None, :] - gallery.embeddings[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def rank_retrieval(gallery: EmbeddingSet, probe: EmbeddingSet, k: int = 1) -> float:
    """Fraction of probes whose subject appears among the ``k`` nearest gallery entries.

    Probes whose subject is absent from the gallery are skipped.
    """
    if len(gallery) == 0 or len(probe) == 0:
        raise EmptySet("gallery and probe must be non-empty")
    dist = distance_matrix(gallery, probe)
    g_ids = np.array(gallery.subject_ids, dtype=object)
    known = set(gallery.subject_ids)
    hits = total = 0
    for i, sid in enumerate(probe.subject_ids):
        if sid not in known:
            continue
        total += 1
        order = np.argsort(dist[i], kind="stable")[:k]
        hits += bool(np.any(g_ids[order] == sid))
    if total == 0:
        raise EmptySet("no probe subject appears in the gallery")
    return hits / total


def aggregate_by_subject(emb: EmbeddingSet) -> EmbeddingSet:
    """One template per subject: the mean of that subject's embeddings, in first-seen order."""
    order = list(dict.fromkeys(emb.subject_ids))
    ids = np.array(emb.subject_ids, dtype=object)
    means = np.stack([emb.embeddings[ids == s].mean(axis=0) for s in order])
    return EmbeddingSet(means, order, role=emb.role)


def genuine_impostor_scores(gallery: EmbeddingSet, probe: EmbeddingSet) -> tuple[np.ndarray, np.ndarray]:
    scores = -distance_matrix(gallery, probe)
    same = np.array([[p == g for g in gallery.subject_ids] for p in probe.subject_ids], dtype=bool)
    return scores[same], scores[~same]


def tar_at_far(gallery: EmbeddingSet, probe: EmbeddingSet, far_points=FAR_POINTS) -> dict:
    """TAR at each requested FAR with score = -distance.

    The threshold for FAR ``f`` is the impostor score with ``floor(f * N)``
    impostors strictly above it (the ``floor(f * N)``-th highest when counting
    from zero); a pair is accepted when its score exceeds the threshold.
    FAR >= 1 accepts everything.
    """
    if len(gallery) == 0 or len(probe) == 0:
        raise EmptySet("gallery and probe must be non-empty")
    genuine, impostor = genuine_impostor_scores(gallery, probe)
    if impostor.size == 0:
        raise NoImpostors("every probe/gallery pair shares a subject")
    if genuine.size == 0:
        raise EmptySet("no genuine pairs")
    return {float(f): tar_from_scores(genuine, impostor, f) for f in far_points}


def tar_from_scores(genuine: np.ndarray, impostor: np.ndarray, far: float) -> float:
    if far >= 1.0:
        return 1.0
    desc = np.sort(impostor)[::-1]
    threshold = desc[int(math.floor(far * len(desc)))]
    return float(np.mean(genuine > threshold))


def roc_curve(gallery: EmbeddingSet, probe: EmbeddingSet, n_points: int = 101) -> tuple[np.ndarray, np.ndarray]:
    genuine, impostor = genuine_impostor_scores(gallery, probe)
    if impostor.size == 0:
        raise NoImpostors("every probe/gallery pair shares a subject")
    fars = np.linspace(0.0, 1.0, n_points)
    return fars, np.array([tar_from_scores(genuine, impostor, f) for f in fars])


# inference ----------------------------------------------------------------------------

def load_model(path: str | Path, cfg: ModelConfig | None = None) -> GaitContour:
    model = GaitContour(cfg or ModelConfig())
    model.load_state_dict(checkpoint.load(path))
    return model


def embed_sequence(points: np.ndarray, model: GaitContour, frames: int | None = None) -> np.ndarray:
    """Deterministic ``(256,)`` embedding; eval-mode batch norm, no augmentation.

    With ``frames`` set, the sequence is centre-cropped or cyclically padded
    to exactly that many frames first.
    """
    p = normalize_points(np.asarray(points, dtype=float))
    if frames is not None:
        p = fit_length(p, frames)
    with no_grad():
        out = model.forward_features(Tensor(embed_points(p)[None]), train=False)
    return out.data[0]


def embed_dataset(sequences, model, frames: int | None = None, role: str = "gallery",
                  cfg: ModelConfig | None = None) -> EmbeddingSet:
    """Embed ``ContourPoseSequence`` objects; ``model`` may be a checkpoint path."""
    if not isinstance(model, GaitContour):
        model = load_model(model, cfg)
    seqs = list(sequences)
    if not seqs:
        raise EmptySet(f"no sequences for the {role} set")
    emb = np.stack([embed_sequence(s.points, model, frames) for s in seqs])
    return EmbeddingSet(emb, [s.subject_id for s in seqs], [s.view_id for s in seqs], role)


# reporting ----------------------------------------------------------------------------

@dataclass
class EvalReport:
    rank_k: dict = field(default_factory=dict)
    tar_at_far: dict = field(default_factory=dict)
    n_gallery: int = 0
    n_probe: int = 0

    def to_json(self) -> str:
        doc = {
            "rank_k": {str(k): v for k, v in sorted(self.rank_k.items())},
            "tar_at_far": {f"{f:g}": v for f, v in sorted(self.tar_at_far.items())},
            "n_gallery": self.n_gallery,
            "n_probe": self.n_probe,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def evaluate(gallery: EmbeddingSet, probe: EmbeddingSet, ks=RANK_KS, far_points=FAR_POINTS) -> EvalReport:
    report = EvalReport(n_gallery=len(gallery), n_probe=len(probe))
    report.rank_k = {k: rank_retrieval(gallery, probe, k) for k in ks}
    try:
        report.tar_at_far = tar_at_far(gallery, probe, far_points)
    except NoImpostors:
        report.tar_at_far = {}
    return report


def write_score_csv(path: str | Path, gallery: EmbeddingSet, probe: EmbeddingSet) -> None:
    scores = -distance_matrix(gallery, probe)
    lines = ["probe," + ",".join(str(g) for g in gallery.subject_ids)]
    for sid, row in zip(probe.subject_ids, scores):
        lines.append(f"{sid}," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def roc_svg(fars: np.ndarray, tars: np.ndarray, width: int = 320, height: int = 320) -> str:
    """Minimal stand-alone SVG of a ROC curve with fixed number formatting."""
    pad = 40
    w, h = width - 2 * pad, height - 2 * pad
    pts = " ".join(f"{pad + f * w:.2f},{pad + (1 - t) * h:.2f}" for f, t in zip(fars, tars))
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{w}" height="{h}" fill="none" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad + h}" x2="{pad + w}" y2="{pad}" stroke="grey" stroke-dasharray="4 4"/>',
        f'<polyline points="{pts}" fill="none" stroke="blue" stroke-width="2"/>',
        f'<text x="{pad + w / 2}" y="{height - 8}" text-anchor="middle" font-size="12">FAR</text>',
        f'<text x="12" y="{pad + h / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {pad + h / 2})">TAR</text>',
        "</svg>",
        "",
    ])
