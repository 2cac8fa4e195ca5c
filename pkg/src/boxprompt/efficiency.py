"""Analytic parameter and FLOP accounting for the student network.

Conventions (one forward pass, multiply and add counted separately):

    conv            2 * C_out * C_in * kH * kW * H' * W'   (bias excluded)
    matmul (m,k,n)  2 * m * k * n
    bilinear resize 3 * C * H_out * (W_in + W_out)          (rows then columns)
    softmax over n  5 * n     sigmoid 4 * n     silu 5 * n
    add/sub/mul/scale over n outputs: n      mean/sum over n inputs: n

The counter walks exactly the graph the forward pass builds (including
ablation flags), so doubling a width or halving the resolution moves the
count by the closed-form factor.
"""

from __future__ import annotations

from .student import ModelParams, StudentConfig


def count_params(params: ModelParams) -> int:
    """Total elements over all named (trainable) parameters."""
    return sum(p.size for _, p in params.items())


def conv_flops(cin: int, cout: int, k: int, oh: int, ow: int) -> int:
    return 2 * cout * cin * k * k * oh * ow


def matmul_flops(m: int, k: int, n: int) -> int:
    return 2 * m * k * n


def resize_flops(c: int, oh: int, ow: int, in_w: int) -> int:
    return 3 * c * oh * (in_w + ow)


def count_flops(config: StudentConfig) -> int:
    """One student forward pass at the config resolution."""
    s_in = config.input_size
    c1, c2, c3, c4 = config.channels
    ca = config.aligned_channels
    s = config.aligned_size
    n = s * s
    total = 0

    # backbone: per stage, optional downsample resize, conv, silu
    f1, f2, f3, f4 = config.stage_factors
    f1a = min(2, f1)
    size = s_in
    if f1a > 1:
        total += resize_flops(3, size // f1a, size // f1a, size)
        size //= f1a
    total += conv_flops(3, c1, 3, size, size) + 5 * c1 * size * size
    if f1 // f1a > 1:
        total += resize_flops(c1, size // (f1 // f1a), size // (f1 // f1a), size)
        size //= f1 // f1a
    total += conv_flops(c1, c1, 3, size, size) + 5 * c1 * size * size
    sizes = [size]
    for cin, cout, factor in ((c1, c2, f2), (c2, c3, f3), (c3, c4, f4)):
        if factor > 1:
            total += resize_flops(cin, size // factor, size // factor, size)
            size //= factor
        total += conv_flops(cin, cout, 3, size, size) + 5 * cout * size * size
        sizes.append(size)

    # alignment: 1x1 projection at native size, resize to the common grid
    for cin, native in zip(config.channels, sizes):
        total += conv_flops(cin, ca, 1, native, native)
        if native != s:
            total += resize_flops(ca, s, s, native)

    if config.ablation.no_gating:
        total += conv_flops(4 * ca, ca, 3, s, s)
    else:
        # gates: conv + sigmoid per scale
        total += 4 * (conv_flops(ca, 1, 1, s, s) + 4 * n)
        # cross-scale mixing: 4 weightings, 3 adds for the total,
        # then per scale: sub, (1-gate), mul, add, modulate
        total += 4 * ca * n + 3 * ca * n
        total += 4 * (ca * n + n + ca * n + ca * n + ca * n)
        total += conv_flops(4 * ca, ca, 3, s, s)
        total += 4 * n  # average gate map: 3 adds + 1 scale

    # base attention: key conv, softmax, context pool, projection, affinity
    total += conv_flops(ca, 1, 1, s, s)
    total += 5 * n
    total += matmul_flops(ca, n, 1)
    total += matmul_flops(ca, ca, 1)
    total += matmul_flops(n, ca, 1) + n + 4 * n

    if not (config.ablation.no_memory or config.alpha >= 1.0):
        k = config.memory_slots
        total += ca * n                          # spatial mean query
        total += matmul_flops(k, ca, 1) + k + 5 * k
        total += matmul_flops(ca, k, 1)
        total += matmul_flops(n, ca, 1) + n + 4 * n
        # blend: gate the base map, scale both sides, add
        total += (0 if config.ablation.no_gate_prior else n) + 3 * n
    elif not config.ablation.no_gate_prior:
        total += n                               # gate prior applied alone

    # residual re-weighting and the prediction head
    total += n + ca * n
    total += conv_flops(ca, config.head_hidden, 3, s, s)
    total += conv_flops(config.head_hidden, 1, 1, s, s)
    total += 4 * n
    total += resize_flops(1, s_in, s_in, s)

    return total
