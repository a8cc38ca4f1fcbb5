"""Per-point input channels, sinusoidal embedding and training-time augmentation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .contour_pose import (CONTOUR_PER_KEYPOINT, FLIP_PERMUTATION, GROUP_SIZE, KEYPOINT_NAMES, NUM_KEYPOINTS,
                           POINTS_PER_FRAME, ContourPoseSequence, resort_groups)
from .errors import ShapeMismatch

FEATURE_GROUPS = ("position", "to_nose", "edge", "velocity", "neighbor")
BANDS = 2  # octaves; each contributes sin and cos


@dataclass(frozen=True)
class ChannelSpec:
    groups: tuple = FEATURE_GROUPS
    bands: int = BANDS

    @property
    def raw_channels(self) -> int:
        return 2 * len(self.groups)

    @property
    def embedded_channels(self) -> int:
        return self.raw_channels * 2 * self.bands


@dataclass(frozen=True)
class AugmentConfig:
    noise_std: float = 0.25
    noise_prob: float = 0.3
    hflip_prob: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("noise_prob", "hflip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")


def _anchor_index() -> np.ndarray:
    return (np.arange(POINTS_PER_FRAME) // GROUP_SIZE) * GROUP_SIZE


def _neighbor_index() -> np.ndarray:
    idx = np.arange(POINTS_PER_FRAME)
    base, slot = idx - idx % GROUP_SIZE, idx % GROUP_SIZE
    # keypoint slot -> first contour point; contour slot j -> j + 1, wrapping 10 -> 1
    nxt = np.where(slot == 0, 1, slot % CONTOUR_PER_KEYPOINT + 1)
    return base + nxt


ANCHOR_INDEX = _anchor_index()
NEIGHBOR_INDEX = _neighbor_index()
NOSE = GROUP_SIZE * KEYPOINT_NAMES.index("nose")


def expand_channels(points) -> np.ndarray:
    """``(T, 165, 2)`` coordinates (or a sequence) -> ``(T, 165, 10)`` features."""
    p = np.asarray(points.points if isinstance(points, ContourPoseSequence) else points, dtype=float)
    if p.ndim != 3 or p.shape[1:] != (POINTS_PER_FRAME, 2) or len(p) < 1:
        raise ShapeMismatch(f"expected (T, {POINTS_PER_FRAME}, 2), got {p.shape}")
    velocity = np.zeros_like(p)
    velocity[1:] = p[1:] - p[:-1]
    return np.concatenate([
        p,
        p - p[:, NOSE:NOSE + 1],
        p - p[:, ANCHOR_INDEX],
        velocity,
        p[:, NEIGHBOR_INDEX] - p,
    ], axis=-1)


def sinusoidal_embed(features: np.ndarray, bands: int = BANDS) -> np.ndarray:
    """Each scalar v -> ``[sin(pi v), cos(pi v), sin(2 pi v), cos(2 pi v), ...]``.

    Channels stay grouped by input channel, so 10 inputs give 40 outputs.
    """
    f = np.asarray(features, dtype=float)
    freqs = np.pi * 2.0 ** np.arange(bands)
    arg = f[..., None] * freqs  # (..., C, bands)
    out = np.stack([np.sin(arg), np.cos(arg)], axis=-1)  # (..., C, bands, 2)
    return out.reshape(f.shape[:-1] + (f.shape[-1] * 2 * bands,))


def embed_points(points, spec: ChannelSpec | None = None) -> np.ndarray:
    spec = spec or ChannelSpec()
    return sinusoidal_embed(expand_channels(points), spec.bands)


def hflip_points(points: np.ndarray) -> np.ndarray:
    """Mirror x and swap left/right keypoint groups, then restore clockwise order."""
    p = np.array(points, dtype=float, copy=True)
    p[..., 0] = -p[..., 0]
    groups = p.reshape(p.shape[:-2] + (NUM_KEYPOINTS, GROUP_SIZE, 2))
    swapped = groups[..., list(FLIP_PERMUTATION), :, :]
    return resort_groups(swapped.reshape(p.shape))


def augment_points(points: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Noise and flip decisions are drawn once per sequence from ``rng``."""
    p = np.asarray(points, dtype=float)
    add_noise = rng.random() < cfg.noise_prob
    flip = rng.random() < cfg.hflip_prob
    if add_noise:
        p = p + rng.normal(0.0, cfg.noise_std, size=p.shape)
    if flip:
        p = hflip_points(p)
    return p


def augment(seq: ContourPoseSequence, cfg: AugmentConfig, rng: np.random.Generator | None = None) -> ContourPoseSequence:
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    return replace(seq, points=augment_points(seq.points, cfg, rng), selected=None)
