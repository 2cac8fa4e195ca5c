"""Local image degradations standing in for social-platform recompression.

Three kinds at three strengths each; results are directional analogues of
real platform pipelines, not reproductions of them.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from . import ops
from .tensor import Tensor, no_grad

_BITS = {1: 6, 2: 4, 3: 2}
_BLUR = {1: 0.5, 2: 1.0, 3: 1.5}
_NOISE = {1: 0.01, 2: 0.02, 3: 0.04}
_SCALE = {1: 0.75, 2: 0.5, 3: 0.25}

KINDS = ("resave8bit", "blurnoise", "downup")


def _downup(image: np.ndarray, scale: float) -> np.ndarray:
    _, h, w = image.shape
    dh, dw = max(int(round(h * scale)), 1), max(int(round(w * scale)), 1)
    with no_grad():
        down = ops.bilinear_resize(Tensor(image, np.float32), dh, dw)
        up = ops.bilinear_resize(down, h, w)
    return np.clip(up.data, 0.0, 1.0)


def perturb(image: np.ndarray, kind: str, level: int, seed: int = 0) -> np.ndarray:
    """Degrade a (3, H, W) [0,1] image; higher level means stronger."""
    if kind not in KINDS:
        raise ValueError(f"unknown perturbation kind '{kind}'")
    if level not in (1, 2, 3):
        raise ValueError(f"level must be 1, 2 or 3, got {level}")

    if kind == "resave8bit":
        steps = 2 ** _BITS[level] - 1
        out = np.rint(image.astype(np.float64) * steps) / steps
    elif kind == "blurnoise":
        rng = np.random.default_rng(seed)
        out = ndimage.gaussian_filter(image.astype(np.float64),
                                      sigma=(0, _BLUR[level], _BLUR[level]))
        out = out + rng.normal(0.0, _NOISE[level], size=image.shape)
    else:
        out = _downup(image, _SCALE[level])
    return np.clip(out, 0.0, 1.0).astype(np.float32)
