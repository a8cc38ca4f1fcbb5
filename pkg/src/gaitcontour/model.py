"""GaitContour: a shared regional transformer followed by a global one.

Shapes through the network for one sequence of T frames::

    T x 165 x 40  --split-->  5 x (T x 33 x 40)
                  --Local-CPT (shared, 40->64 (+region emb) ->64->128)-->  5 x (T x 33 x 128)
                  --pool 11-->  5 x (T x 3 x 128)  --concat-->  T x 15 x 128
                  --Global-PFT (128->256)-->  T x 15 x 256
                  --pool 15, mean over T-->  1 x 256
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .contour_pose import KEYPOINT_NAMES, POINTS_PER_FRAME, GROUP_SIZE
from .errors import ShapeMismatch, UnknownRegion
from .layers import BatchNormState, avg_pool_points, batch_norm, linear, multi_head_attention, temporal_conv

REGION_NAMES = ("h", "la", "ra", "ll", "rl")
REGION_KEYPOINTS = {
    "h": ("nose", "l_ear", "r_ear"),
    "la": ("l_shoulder", "l_elbow", "l_wrist"),
    "ra": ("r_shoulder", "r_elbow", "r_wrist"),
    "ll": ("l_hip", "l_knee", "l_ankle"),
    "rl": ("r_hip", "r_knee", "r_ankle"),
}
REGION_POINTS = 33


def region_indices(region: str) -> np.ndarray:
    """Point indices (in the 165-point layout) that make up ``region``, in layout order."""
    if region not in REGION_KEYPOINTS:
        raise UnknownRegion(region)
    ks = sorted(KEYPOINT_NAMES.index(n) for n in REGION_KEYPOINTS[region])
    return np.concatenate([np.arange(GROUP_SIZE * k, GROUP_SIZE * (k + 1)) for k in ks])


REGION_ORDER = np.concatenate([region_indices(r) for r in REGION_NAMES])


@dataclass
class ModelConfig:
    in_channels: int = 40
    local_channels: tuple = (64, 64, 128)
    global_channels: tuple = (256,)
    heads: int = 4
    ta_kernel: int = 3
    embed_dim: int = 64
    bn_momentum: float = 0.1
    init_seed: int = 0

    def __post_init__(self):
        self.local_channels = tuple(self.local_channels)
        self.global_channels = tuple(self.global_channels)
        if self.embed_dim != self.local_channels[0]:
            raise ValueError("region embedding must match the first Local-CPT width")
        if self.ta_kernel % 2 != 1:
            raise ValueError("ta_kernel must be odd")


class TTLBlock:
    """Temporal Transformer Layer.

    ``z_hat = z + TA(z)``;
    ``out = BN(Conv(MHA(BN(z_hat)))) + P(z_hat) + P(z)`` where ``P`` is the
    identity when widths match and one shared 1x1 projection otherwise.
    """

    def __init__(self, prefix: str, c_in: int, c_out: int, heads: int, ta_kernel: int,
                 rng: np.random.Generator, momentum: float = 0.1):
        self.prefix = prefix
        self.c_in, self.c_out, self.heads = c_in, c_out, heads
        if c_in % heads:
            raise ShapeMismatch(f"{c_in} channels not divisible by {heads} heads")

        def w(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        def zeros(n):
            return Tensor(np.zeros(n), requires_grad=True)

        self.params: dict[str, Tensor] = {
            "ta.weight": w((ta_kernel, c_in, c_in), ta_kernel * c_in),
            "ta.bias": zeros(c_in),
            "bn1.gamma": Tensor(np.ones(c_in), requires_grad=True),
            "bn1.beta": zeros(c_in),
            "mha.w_q": w((c_in, c_in), c_in),
            "mha.w_k": w((c_in, c_in), c_in),
            "mha.w_v": w((c_in, c_in), c_in),
            "mha.w_out": w((c_in, c_in), c_in),
            "mha.b_q": zeros(c_in),
            "mha.b_k": zeros(c_in),
            "mha.b_v": zeros(c_in),
            "mha.b_out": zeros(c_in),
            "conv.weight": w((1, c_in, c_out), c_in),
            "conv.bias": zeros(c_out),
            "bn2.gamma": Tensor(np.ones(c_out), requires_grad=True),
            "bn2.beta": zeros(c_out),
        }
        if c_in != c_out:
            self.params["proj.weight"] = w((c_in, c_out), c_in)
        self.bn1 = BatchNormState.fresh(c_in, momentum)
        self.bn2 = BatchNormState.fresh(c_out, momentum)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.params.items():
            yield f"{self.prefix}.{name}", t

    def named_buffers(self) -> Iterator[tuple[str, BatchNormState]]:
        yield f"{self.prefix}.bn1", self.bn1
        yield f"{self.prefix}.bn2", self.bn2

    def __call__(self, z: Tensor, train: bool = True) -> Tensor:
        return ttl_forward(z, self, train)


def ttl_forward(z: Tensor, block: TTLBlock, train: bool = True) -> Tensor:
    p = block.params
    if z.shape[-1] != block.c_in:
        raise ShapeMismatch(f"{block.prefix}: expected {block.c_in} channels, got {z.shape[-1]}")
    z_hat = ag.add(z, temporal_conv(z, p["ta.weight"], p["ta.bias"]))
    h = batch_norm(z_hat, p["bn1.gamma"], p["bn1.beta"], block.bn1, train)
    h = multi_head_attention(h, p["mha.w_q"], p["mha.w_k"], p["mha.w_v"], p["mha.w_out"],
                             p["mha.b_q"], p["mha.b_k"], p["mha.b_v"], p["mha.b_out"], block.heads)
    h = temporal_conv(h, p["conv.weight"], p["conv.bias"])
    h = batch_norm(h, p["bn2.gamma"], p["bn2.beta"], block.bn2, train)
    skip = ag.add(z_hat, z)
    if "proj.weight" in p:
        skip = linear(skip, p["proj.weight"])
    return ag.add(h, skip)


class GaitContour:
    """Parameter container plus forward pass for the full network."""

    def __init__(self, cfg: ModelConfig | None = None):
        self.cfg = cfg = cfg or ModelConfig()
        rng = np.random.default_rng(cfg.init_seed)
        widths = (cfg.in_channels,) + cfg.local_channels
        self.local_blocks = [
            TTLBlock(f"local.{i}", widths[i], widths[i + 1], cfg.heads, cfg.ta_kernel, rng, cfg.bn_momentum)
            for i in range(len(cfg.local_channels))
        ]
        gwidths = (cfg.local_channels[-1],) + cfg.global_channels
        self.global_blocks = [
            TTLBlock(f"global.{i}", gwidths[i], gwidths[i + 1], cfg.heads, cfg.ta_kernel, rng, cfg.bn_momentum)
            for i in range(len(cfg.global_channels))
        ]
        self.region_embedding = Tensor(rng.normal(0.0, 0.1, size=(len(REGION_NAMES), cfg.embed_dim)),
                                       requires_grad=True)

    # parameters ------------------------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "region_embedding", self.region_embedding
        for block in self.local_blocks + self.global_blocks:
            yield from block.named_parameters()

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def local_parameter_count(self) -> int:
        return sum(t.data.size for b in self.local_blocks for _, t in b.named_parameters())

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        for block in self.local_blocks + self.global_blocks:
            for name, bn in block.named_buffers():
                state[f"{name}.running_mean"] = bn.running_mean.copy()
                state[f"{name}.running_var"] = bn.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = set(expected) - set(state)
        unexpected = set(state) - set(expected)
        if missing or unexpected:
            raise ShapeMismatch(f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, t in self.named_parameters():
            if state[name].shape != t.shape:
                raise ShapeMismatch(f"{name}: checkpoint {state[name].shape} vs model {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)
        for block in self.local_blocks + self.global_blocks:
            for name, bn in block.named_buffers():
                bn.running_mean = np.array(state[f"{name}.running_mean"], dtype=np.float64)
                bn.running_var = np.array(state[f"{name}.running_var"], dtype=np.float64)

    # forward ---------------------------------------------------------------------

    def local_cpt(self, regions: Tensor, region_ids: np.ndarray, train: bool = True) -> Tensor:
        """Shared Local-CPT over ``(N, T, 33, C_in)`` region tensors; returns ``(N, T, 3, C)``."""
        if regions.ndim != 4 or regions.shape[-2] != REGION_POINTS:
            raise ShapeMismatch(f"Local-CPT expects (N, T, 33, C), got {regions.shape}")
        region_ids = np.asarray(region_ids, dtype=np.intp)
        if region_ids.shape != (regions.shape[0],):
            raise ShapeMismatch("one region id per region tensor required")
        if np.any((region_ids < 0) | (region_ids >= len(REGION_NAMES))):
            raise UnknownRegion(f"region ids {region_ids.tolist()}")
        h = self.local_blocks[0](regions, train)
        emb = ag.take(self.region_embedding, region_ids, axis=0)
        h = ag.add(h, ag.reshape(emb, (len(region_ids), 1, 1, self.cfg.embed_dim)))
        for block in self.local_blocks[1:]:
            h = block(h, train)
        return avg_pool_points(h, GROUP_SIZE)

    def global_pft(self, pooled: Tensor, train: bool = True) -> Tensor:
        """``(B, T, 15, 128)`` -> ``(B, 256)``."""
        h = pooled
        for block in self.global_blocks:
            h = block(h, train)
        h = avg_pool_points(h, h.shape[-2])
        return ag.mean(ag.reshape(h, (h.shape[0], h.shape[1], h.shape[-1])), axis=1)

    def forward_features(self, x: Tensor, train: bool = True) -> Tensor:
        """Embedded features ``(B, T, 165, C_in)`` -> identity embeddings ``(B, 256)``."""
        if x.ndim != 4 or x.shape[2] != POINTS_PER_FRAME or x.shape[3] != self.cfg.in_channels:
            raise ShapeMismatch(f"expected (B, T, {POINTS_PER_FRAME}, {self.cfg.in_channels}), got {x.shape}")
        b, t = x.shape[0], x.shape[1]
        nr = len(REGION_NAMES)
        regions = ag.take(x, REGION_ORDER, axis=2)
        regions = ag.reshape(regions, (b, t, nr, REGION_POINTS, self.cfg.in_channels))
        regions = ag.reshape(ag.permute(regions, (0, 2, 1, 3, 4)), (b * nr, t, REGION_POINTS, -1))
        pooled = self.local_cpt(regions, np.tile(np.arange(nr), b), train)
        c = pooled.shape[-1]
        pooled = ag.reshape(pooled, (b, nr, t, 3, c))
        pooled = ag.reshape(ag.permute(pooled, (0, 2, 1, 3, 4)), (b, t, nr * 3, c))
        return self.global_pft(pooled, train)


# analytic attention cost ------------------------------------------------------------

def count_attention_ops(cfg: ModelConfig | None = None, j_total: int = POINTS_PER_FRAME,
                        n_regions: int = len(REGION_NAMES)) -> dict:
    """Per-frame attention multiply-accumulates of the Local-CPT layers.

    For each layer with attention width C the score and mixing products
    cost ``2 * J^2 * C`` MACs.  ``local`` attends within ``n_regions`` groups
    of ``j_total / n_regions`` points; ``full`` attends over all points.
    """
    cfg = cfg or ModelConfig()
    if j_total % n_regions:
        raise ShapeMismatch(f"{j_total} points do not split into {n_regions} regions")
    j_r = j_total // n_regions
    widths = (cfg.in_channels,) + tuple(cfg.local_channels)
    layers = []
    for i, c in enumerate(widths[:-1]):
        local = n_regions * j_r * j_r * 2 * c
        full = j_total * j_total * 2 * c
        layers.append({"layer": i, "channels": c, "local": local, "full": full})
    local = sum(layer["local"] for layer in layers)
    full = sum(layer["full"] for layer in layers)
    return {"layers": layers, "local": local, "full": full, "ratio": Fraction(local, full)}


# single-sequence entry points ---------------------------------------------------------

def split_regions(points: np.ndarray) -> dict[str, np.ndarray]:
    """``(T, 165, C)`` -> ``{region: (T, 33, C)}`` in layout order."""
    p = np.asarray(points.points if hasattr(points, "points") else points)
    if p.ndim != 3 or p.shape[1] != POINTS_PER_FRAME:
        raise ShapeMismatch(f"expected (T, {POINTS_PER_FRAME}, C), got {p.shape}")
    return {r: p[:, region_indices(r)] for r in REGION_NAMES}


def merge_regions(regions: dict[str, np.ndarray]) -> np.ndarray:
    """Inverse of :func:`split_regions`."""
    stacked = np.concatenate([regions[r] for r in REGION_NAMES], axis=1)
    out = np.empty_like(stacked)
    out[:, REGION_ORDER] = stacked
    return out


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=ag.DTYPE))


def local_cpt_forward(region, region_id: str, model: GaitContour, train: bool = False) -> Tensor:
    """Embedded region features ``(T, 33, 40)`` -> ``(T, 3, 128)``."""
    if region_id not in REGION_NAMES:
        raise UnknownRegion(region_id)
    x = _tensor(region)
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (T, 33, C), got {x.shape}")
    out = model.local_cpt(ag.reshape(x, (1,) + x.shape), [REGION_NAMES.index(region_id)], train)
    return ag.reshape(out, out.shape[1:])


def global_pft_forward(regional: list, model: GaitContour, train: bool = False) -> Tensor:
    """Five ``(T, 3, 128)`` pooled regional features in (h, la, ra, ll, rl) order -> ``(1, 256)``."""
    if len(regional) != len(REGION_NAMES):
        raise ShapeMismatch(f"expected {len(REGION_NAMES)} regional inputs, got {len(regional)}")
    parts = [_tensor(r) for r in regional]
    shape = parts[0].shape
    if any(p.shape != shape for p in parts) or len(shape) != 3 or shape[1] != 3:
        raise ShapeMismatch(f"regional inputs must share shape (T, 3, C), got {[p.shape for p in parts]}")
    joined = ag.concat(parts, axis=1)
    return model.global_pft(ag.reshape(joined, (1,) + joined.shape), train)


def prepare_input(points) -> np.ndarray:
    """Raw or stored ``(T, 165, 2)`` coordinates -> normalized, embedded ``(T, 165, 40)``.

    Normalization is idempotent, so already-normalized stored sequences pass
    through unchanged.
    """
    from .contour_pose import normalize_points
    from .features import embed_points

    p = np.asarray(points.points if hasattr(points, "points") else points, dtype=float)
    return embed_points(normalize_points(p))


def gaitcontour_forward(seq, model: GaitContour, train: bool = False) -> Tensor:
    """One Contour-Pose sequence ``(T, 165, 2)`` -> identity embedding ``(1, 256)``."""
    x = prepare_input(seq)
    return model.forward_features(Tensor(x[None]), train)
