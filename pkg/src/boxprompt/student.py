"""The lightweight localization network.

A four-stage convolutional backbone emits multi-scale features which are
projected to a common width, resized to a quarter-resolution grid, and
merged by a gated fusion block: each scale gets a one-channel spatial
gate, scales exchange gate-weighted context, and the modulated maps are
concatenated and fused by a 3x3 convolution.

The fused map drives two attention priors — a global-context base
attention, and a recall over a bank of prototype vectors aggregated by
EMA during training — blended by a balancing factor ``alpha``.  The
blended attention re-weights the fused features through a residual
(1 + attention) factor before a small prediction head emits a per-pixel
manipulation probability map at input resolution.

Downsampling uses bilinear resizes between convolutions: with odd kernels
and exact-division output extents, strided convolutions cannot halve
even-sized inputs, so stride lives in the resize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ops
from .tensor import Tensor, no_grad


@dataclass
class AblationFlags:
    no_memory: bool = False
    no_gate_prior: bool = False
    no_gating: bool = False


@dataclass
class StudentConfig:
    input_size: int = 64
    channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    aligned_channels: int = 32
    memory_slots: int = 16
    temperature: float = 0.1
    ema_rate: float = 0.01
    alpha: float = 0.7
    head_hidden: int = 16
    stage_factors: tuple[int, int, int, int] = (4, 2, 2, 2)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.ablation, dict):
            self.ablation = AblationFlags(**self.ablation)
        self.channels = tuple(self.channels)
        self.stage_factors = tuple(self.stage_factors)
        total = 1
        for f in self.stage_factors:
            total *= f
        if self.input_size % total or self.input_size % 4:
            raise ValueError(f"indivisible input size {self.input_size} "
                             f"(needs divisibility by {total} and by 4)")
        if self.memory_slots < 1:
            raise ValueError("memory_slots must be >= 1")
        if not 0 < self.ema_rate <= 1:
            raise ValueError("ema_rate must be in (0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")

    @property
    def aligned_size(self) -> int:
        return self.input_size // 4

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "StudentConfig":
        return StudentConfig(**{**d, "ablation": AblationFlags(**d.get("ablation", {}))})


@dataclass
class MemoryBank:
    prototypes: np.ndarray          # (K, C)
    usage: np.ndarray               # (K,) int64
    frozen: bool = False

    def copy(self) -> "MemoryBank":
        return MemoryBank(self.prototypes.copy(), self.usage.copy(), self.frozen)


class ModelParams:
    """Named parameter map plus the attention balancing factor."""

    def __init__(self, params: dict[str, Tensor], alpha: float, config: StudentConfig):
        names = list(params)
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.params = params
        self.alpha = float(alpha)
        self.config = config

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def _conv_param(rng, cout, cin, k, dtype, gain=2.0):
    fan_in = cin * k * k
    std = math.sqrt(gain / fan_in)
    w = rng.standard_normal((cout, cin, k, k)) * std
    return (Tensor(w.astype(dtype), dtype=dtype, requires_grad=True),
            Tensor(np.zeros(cout, dtype=dtype), dtype=dtype, requires_grad=True))


def init_params(config: StudentConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70D0]))
    dt = config.np_dtype
    c1, c2, c3, c4 = config.channels
    ca = config.aligned_channels
    p: dict[str, Tensor] = {}

    p["backbone.stage1.conv1.w"], p["backbone.stage1.conv1.b"] = _conv_param(rng, c1, 3, 3, dt)
    p["backbone.stage1.conv2.w"], p["backbone.stage1.conv2.b"] = _conv_param(rng, c1, c1, 3, dt)
    for i, (cin, cout) in enumerate(((c1, c2), (c2, c3), (c3, c4)), start=2):
        p[f"backbone.stage{i}.conv.w"], p[f"backbone.stage{i}.conv.b"] = _conv_param(rng, cout, cin, 3, dt)

    for i, cin in enumerate(config.channels, start=1):
        p[f"align.{i}.w"], p[f"align.{i}.b"] = _conv_param(rng, ca, cin, 1, dt)
        p[f"gate.{i}.w"], p[f"gate.{i}.b"] = _conv_param(rng, 1, ca, 1, dt, gain=1.0)

    p["fuse.conv.w"], p["fuse.conv.b"] = _conv_param(rng, ca, 4 * ca, 3, dt)
    p["attn.key.w"], p["attn.key.b"] = _conv_param(rng, 1, ca, 1, dt, gain=1.0)
    p["attn.proj.w"] = Tensor((rng.standard_normal((ca, ca)) / math.sqrt(ca)).astype(dt),
                              dtype=dt, requires_grad=True)
    p["head.conv1.w"], p["head.conv1.b"] = _conv_param(rng, config.head_hidden, ca, 3, dt)
    p["head.conv2.w"], p["head.conv2.b"] = _conv_param(rng, 1, config.head_hidden, 1, dt)

    return ModelParams(p, alpha=config.alpha, config=config)


def init_bank(config: StudentConfig, seed: int) -> MemoryBank:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x3ABB]))
    protos = rng.standard_normal((config.memory_slots, config.aligned_channels))
    protos /= math.sqrt(config.aligned_channels)
    return MemoryBank(prototypes=protos.astype(config.np_dtype),
                      usage=np.zeros(config.memory_slots, dtype=np.int64))


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _down(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    return ops.bilinear_resize(x, x.shape[1] // factor, x.shape[2] // factor)


def backbone_forward(image: Tensor, mp: ModelParams) -> list[Tensor]:
    """Four feature maps at 1/4, 1/8, 1/16 and 1/32 of the input (default plan)."""
    cfg = mp.config
    f1, f2, f3, f4 = cfg.stage_factors
    _, h, w = image.shape
    for f in cfg.stage_factors:
        if h % f or w % f:
            raise ValueError(f"indivisible input size {h}x{w} for stage factors {cfg.stage_factors}")
        h //= f
        w //= f

    f1a = min(2, f1)
    x = _down(image, f1a)
    x = ops.silu(ops.conv2d(x, mp["backbone.stage1.conv1.w"], mp["backbone.stage1.conv1.b"], padding=1))
    x = _down(x, f1 // f1a)
    x = ops.silu(ops.conv2d(x, mp["backbone.stage1.conv2.w"], mp["backbone.stage1.conv2.b"], padding=1))
    feats = [x]
    for i, factor in zip((2, 3, 4), (f2, f3, f4)):
        x = _down(x, factor)
        x = ops.silu(ops.conv2d(x, mp[f"backbone.stage{i}.conv.w"], mp[f"backbone.stage{i}.conv.b"], padding=1))
        feats.append(x)
    return feats


def align_features(features: list[Tensor], mp: ModelParams) -> list[Tensor]:
    """1x1-project each scale to the common width, then resize to H/4 x W/4."""
    if len(features) != 4:
        raise ValueError(f"expected 4 feature maps, got {len(features)}")
    size = mp.config.aligned_size
    out = []
    for i, f in enumerate(features, start=1):
        f = ops.conv2d(f, mp[f"align.{i}.w"], mp[f"align.{i}.b"])
        if f.shape[1] != size or f.shape[2] != size:
            f = ops.bilinear_resize(f, size, size)
        out.append(f)
    return out


def gated_integration(aligned: list[Tensor], mp: ModelParams, no_gating: bool = False,
                      gates_override: list[Tensor] | None = None):
    """Cross-scale gated mixing; returns (fused map, mean gate, gate list).

    With gating off, the scales are simply concatenated and fused, and the
    gates degrade to all-ones.
    """
    shapes = {f.shape for f in aligned}
    if len(shapes) != 1:
        raise ValueError(f"aligned features disagree in shape: {shapes}")

    if no_gating:
        fused = ops.conv2d(ops.concat(aligned, 0), mp["fuse.conv.w"], mp["fuse.conv.b"], padding=1)
        ones = Tensor(np.ones((1,) + aligned[0].shape[1:], dtype=aligned[0].dtype),
                      dtype=aligned[0].dtype)
        return fused, ones, [ones] * 4

    if gates_override is not None:
        gates = gates_override
    else:
        gates = [ops.sigmoid(ops.conv2d(f, mp[f"gate.{i}.w"], mp[f"gate.{i}.b"]))
                 for i, f in enumerate(aligned, start=1)]

    weighted = [ops.mul(f, g) for f, g in zip(aligned, gates)]
    total = ops.add(ops.add(weighted[0], weighted[1]), ops.add(weighted[2], weighted[3]))
    modulated = []
    for f, g, wf in zip(aligned, gates, weighted):
        others = ops.sub(total, wf)
        mixed = ops.add(wf, ops.mul(others, ops.sub(Tensor(np.ones_like(g.data), dtype=f.dtype), g)))
        modulated.append(ops.mul(f, mixed))

    fused = ops.conv2d(ops.concat(modulated, 0), mp["fuse.conv.w"], mp["fuse.conv.b"], padding=1)
    gate_mean = ops.scale(ops.add(ops.add(gates[0], gates[1]), ops.add(gates[2], gates[3])), 0.25)
    return fused, gate_mean, gates


def base_attention(fused: Tensor, mp: ModelParams) -> Tensor:
    """Global-context attention: softmax-pooled context vector, per-pixel affinity."""
    c, h, w = fused.shape
    flat = ops.reshape(fused, (c, h * w))
    key = ops.reshape(ops.conv2d(fused, mp["attn.key.w"], mp["attn.key.b"]), (h * w, 1))
    weights = ops.softmax(key, 0)
    context = ops.matmul(flat, weights)                      # (C, 1)
    proj = ops.matmul(mp["attn.proj.w"], context)            # (C, 1)
    scores = ops.scale(ops.matmul(ops.transpose2d(flat), proj), 1.0 / math.sqrt(c))
    return ops.reshape(ops.sigmoid(scores), (1, h, w))


def memory_recall(fused: Tensor, bank: MemoryBank, temperature: float) -> Tensor:
    """Attention map from the bank prototype best matching the fused content."""
    c, h, w = fused.shape
    k = bank.prototypes.shape[0]
    protos = Tensor(bank.prototypes, dtype=fused.data.dtype)
    query = ops.reshape(ops.reduce_mean(fused, [1, 2]), (c, 1))
    sims = ops.scale(ops.matmul(protos, query), 1.0 / temperature)   # (K, 1)
    weights = ops.softmax(sims, 0)
    recalled = ops.matmul(ops.transpose2d(protos), weights)          # (C, 1)
    flat = ops.reshape(fused, (c, h * w))
    scores = ops.scale(ops.matmul(ops.transpose2d(flat), recalled), 1.0 / math.sqrt(c))
    return ops.reshape(ops.sigmoid(scores), (1, h, w))


def memory_update(bank: MemoryBank, fused_value: np.ndarray, ema_rate: float) -> int:
    """EMA-pull the single best-matching prototype toward the fused mean.

    Returns the updated slot index.  Ties resolve to the lowest index.
    """
    if bank.frozen:
        raise RuntimeError("memory_update on a frozen bank")
    if not 0 < ema_rate <= 1:
        raise ValueError("ema_rate must be in (0, 1]")
    q = fused_value.mean(axis=(1, 2))
    slot = int(np.argmax(bank.prototypes @ q))
    bank.prototypes[slot] = bank.prototypes[slot] * (1.0 - ema_rate) + q * ema_rate
    bank.usage[slot] += 1
    return slot


def fuse_attention(base_attn: Tensor, gate_mean: Tensor, mem_attn: Tensor | None,
                   alpha: float, flags: AblationFlags) -> Tensor:
    """Convex blend of the gated base attention with the memory recall."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    if flags.no_gate_prior:
        gated = base_attn
    else:
        if base_attn.shape != gate_mean.shape:
            raise ValueError(f"attention/gate shape mismatch {base_attn.shape} vs {gate_mean.shape}")
        gated = ops.mul(base_attn, gate_mean)
    if flags.no_memory or alpha == 1.0:
        return gated
    if mem_attn is None:
        raise ValueError("memory attention required unless ablated or alpha == 1")
    if mem_attn.shape != gated.shape:
        raise ValueError(f"attention shape mismatch {gated.shape} vs {mem_attn.shape}")
    if alpha == 0.0:
        return mem_attn
    return ops.add(ops.scale(gated, alpha), ops.scale(mem_attn, 1.0 - alpha))


def forward(image: Tensor, mp: ModelParams, bank: MemoryBank,
            gates_override: list[Tensor] | None = None,
            attn_override: Tensor | None = None) -> dict:
    """Full pipeline; returns the probability map plus named intermediates."""
    cfg = mp.config
    feats = backbone_forward(image, mp)
    aligned = align_features(feats, mp)
    fused, gate_mean, gates = gated_integration(aligned, mp, cfg.ablation.no_gating,
                                                gates_override)
    base = base_attention(fused, mp)
    mem = None
    if not cfg.ablation.no_memory and mp.alpha < 1.0:
        mem = memory_recall(fused, bank, cfg.temperature)
    attn = fuse_attention(base, gate_mean, mem, mp.alpha, cfg.ablation)
    if attn_override is not None:
        attn = attn_override

    residual = ops.add(Tensor(np.ones_like(attn.data), dtype=attn.data.dtype), attn)
    reweighted = ops.mul(fused, residual)
    x = ops.conv2d(reweighted, mp["head.conv1.w"], mp["head.conv1.b"], padding=1)
    x = ops.conv2d(x, mp["head.conv2.w"], mp["head.conv2.b"])
    x = ops.sigmoid(x)
    prob = ops.bilinear_resize(x, image.shape[1], image.shape[2])

    return {"prob": ops.reshape(prob, (image.shape[1], image.shape[2])),
            "fused": fused, "gates": gates, "gate_mean": gate_mean,
            "base_attn": base, "mem_attn": mem, "attn": attn}


def predict(image: np.ndarray, mp: ModelParams, bank: MemoryBank) -> np.ndarray:
    """Probability map for one image; no prompt, no bank mutation."""
    dt = mp.config.np_dtype
    with no_grad():
        out = forward(Tensor(np.asarray(image, dtype=dt), dtype=dt), mp, bank)
    return out["prob"].data
