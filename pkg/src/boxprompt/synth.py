"""Deterministic synthetic tampered images with ground-truth masks.

Backgrounds are multi-octave value noise plus a few geometric objects.
Three manipulation families are supported: ``splice`` (paste from a
different background), ``copymove`` (duplicate a region within the image
at a shifted location) and ``blurpatch`` (replace a region with heavily
blurred content plus noise; held out as the out-of-distribution family).

Everything is a pure function of an integer seed, so any sample can be
regenerated bit-for-bit from its manifest record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

IND_FAMILIES = ("splice", "copymove")
OOD_FAMILIES = ("blurpatch",)
FAMILIES = IND_FAMILIES + OOD_FAMILIES

MAX_MASK_FRACTION = 0.40


@dataclass
class Sample:
    image: np.ndarray        # (3, H, W) float32 in [0, 1]
    gt_mask: np.ndarray      # (H, W) bool
    coarse_box: tuple[int, int, int, int]   # (x0, y0, x1, y1), end-exclusive
    family: str
    seed: int


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def _upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear blow-up of a coarse noise grid (align-corners-false)."""
    gh, gw = grid.shape

    def axis_interp(n_in, n_out):
        src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
        i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
        return i0, np.minimum(i0 + 1, n_in - 1), src - i0

    y0, y1, fy = axis_interp(gh, h)
    x0, x1, fx = axis_interp(gw, w)
    rows = grid[y0, :] * (1 - fy)[:, None] + grid[y1, :] * fy[:, None]
    return rows[:, x0] * (1 - fx)[None, :] + rows[:, x1] * fx[None, :]


def gen_background(seed: int, h: int, w: int) -> np.ndarray:
    """Smooth noise background with 2-5 random objects, values in [0, 1]."""
    if h < 16 or w < 16:
        raise ValueError(f"background too small: {h}x{w} (minimum 16)")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]

    noise = np.zeros((h, w))
    amp = 0.5
    for cells in (4, 8, 16, 32):
        noise += amp * _upsample(rng.random((cells, cells)), h, w)
        amp *= 0.5
    noise = (noise - noise.min()) / max(noise.max() - noise.min(), 1e-9)

    base = rng.uniform(0.15, 0.85, size=3)
    tint = rng.uniform(0.2, 0.6, size=3)
    img = base[:, None, None] + tint[:, None, None] * (noise - 0.5)

    for _ in range(int(rng.integers(2, 6))):
        kind = rng.choice(["disc", "rect", "gradient"])
        color = rng.uniform(0.0, 1.0, size=3)
        alpha = float(rng.uniform(0.4, 0.9))
        if kind == "disc":
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(0.08, 0.3) * min(h, w)
            region = ((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r
        elif kind == "rect":
            y0, x0 = rng.uniform(0, h * 0.8), rng.uniform(0, w * 0.8)
            region = (yy >= y0) & (yy < y0 + rng.uniform(0.1, 0.5) * h) & \
                     (xx >= x0) & (xx < x0 + rng.uniform(0.1, 0.5) * w)
        else:
            theta = rng.uniform(0, 2 * np.pi)
            ramp = (np.cos(theta) * xx / w + np.sin(theta) * yy / h)
            ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
            img = img * (1 - 0.5 * alpha * ramp) + color[:, None, None] * (0.5 * alpha * ramp)
            continue
        blend = alpha * region
        img = img * (1 - blend) + color[:, None, None] * blend

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _random_region(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Random filled ellipse or rectangle covering roughly 2-20% of the frame."""
    yy, xx = np.mgrid[0:h, 0:w]
    frac = float(rng.uniform(0.02, 0.20))
    if rng.random() < 0.6:
        # ellipse with the target area and a random aspect/rotation
        aspect = float(rng.uniform(0.5, 2.0))
        area = frac * h * w
        ry = max(np.sqrt(area / np.pi * aspect), 3.0)
        rx = max(area / np.pi / ry, 3.0)
        cy = rng.uniform(ry, max(h - ry, ry + 1))
        cx = rng.uniform(rx, max(w - rx, rx + 1))
        th = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
        v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
        region = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    else:
        bw = max(int(np.sqrt(frac * h * w * rng.uniform(0.7, 1.4))), 4)
        bh = max(int(frac * h * w / bw), 4)
        bw, bh = min(bw, w - 2), min(bh, h - 2)
        y0 = int(rng.integers(0, h - bh))
        x0 = int(rng.integers(0, w - bw))
        region = np.zeros((h, w), dtype=bool)
        region[y0:y0 + bh, x0:x0 + bw] = True
    return region


def _feather(region: np.ndarray) -> np.ndarray:
    """1-px feathered blend weight: 3x3 box average of the binary region."""
    return ndimage.uniform_filter(region.astype(np.float64), size=3, mode="constant")


def _blend(image: np.ndarray, content: np.ndarray, weight: np.ndarray):
    out = image * (1 - weight)[None] + content * weight[None]
    mask = weight > 0.5
    return np.clip(out, 0.0, 1.0).astype(np.float32), mask


def _draw_shift(rng: np.random.Generator, region: np.ndarray, h: int, w: int, min_shift: int = 4):
    """Shift for copy-move: never zero, and the source region (destination
    minus shift, plus the 1-px feather ring) must stay in frame."""
    ys, xs = np.nonzero(region)
    for _ in range(50):
        dy = int(rng.integers(-h // 3, h // 3 + 1))
        dx = int(rng.integers(-w // 3, w // 3 + 1))
        if dy == 0 and dx == 0:
            continue  # zero shift would leave the image unchanged
        if abs(dy) + abs(dx) < min_shift:
            continue
        if ys.min() - dy < 1 or ys.max() - dy >= h - 1 or \
                xs.min() - dx < 1 or xs.max() - dx >= w - 1:
            continue
        return dy, dx
    return None


def apply_manipulation(image: np.ndarray, family: str, seed: int):
    """Return (tampered image, gt mask).  Retries region draws up to 10 times."""
    if family not in FAMILIES:
        raise ValueError(f"unknown manipulation family '{family}'")
    _, h, w = image.shape
    rng = np.random.default_rng(seed)
    best = None

    for _ in range(10):
        region = _random_region(rng, h, w)
        weight = _feather(region)
        mask_area = int((weight > 0.5).sum())
        if mask_area < 1 or mask_area > MAX_MASK_FRACTION * h * w:
            continue

        if family == "splice":
            src = gen_background(int(rng.integers(0, 2 ** 63)), h, w)
            out, mask = _blend(image, src, weight)
        elif family == "copymove":
            shift = _draw_shift(rng, region, h, w)
            if shift is None:
                continue
            dy, dx = shift
            shifted = np.roll(np.roll(image, dy, axis=1), dx, axis=2)
            out, mask = _blend(image, shifted, weight)
        else:  # blurpatch
            sigma = float(rng.uniform(2.0, 3.5))
            blurred = ndimage.gaussian_filter(image, sigma=(0, sigma, sigma))
            blurred = blurred + rng.normal(0.0, rng.uniform(0.02, 0.05), size=image.shape)
            out, mask = _blend(image, np.clip(blurred, 0, 1), weight)

        if not mask.any():
            continue
        delta = float(np.abs(out - image)[:, mask].mean())
        if best is None or delta > best[2]:
            best = (out, mask, delta)
        if delta >= 0.025:  # visible enough; otherwise try a better region
            return out, mask

    if best is None:
        raise RuntimeError(f"could not draw a valid {family} region in 10 attempts (seed {seed})")
    return best[0], best[1]


def derive_coarse_box(gt_mask: np.ndarray, jitter_frac: float, seed: int):
    """Tight bounding box expanded per side by uniform[0, jitter]*side, clipped."""
    if not 0 <= jitter_frac <= 0.5:
        raise ValueError(f"jitter_frac out of range: {jitter_frac}")
    ys, xs = np.nonzero(gt_mask)
    if ys.size == 0:
        raise ValueError("derive_coarse_box: empty mask")
    h, w = gt_mask.shape
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    rng = np.random.default_rng(seed)
    bw, bh = x1 - x0, y1 - y0
    ex = rng.uniform(0, jitter_frac, size=4)
    x0 = max(0, x0 - int(ex[0] * bw))
    x1 = min(w, x1 + int(ex[1] * bw))
    y0 = max(0, y0 - int(ex[2] * bh))
    y1 = min(h, y1 + int(ex[3] * bh))
    return (x0, y0, x1, y1)


def tight_box(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("tight_box: empty mask")
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def box_contains(outer, inner) -> bool:
    return outer[0] <= inner[0] and outer[1] <= inner[1] and \
        outer[2] >= inner[2] and outer[3] >= inner[3]


def generate_sample(seed: int, h: int, w: int, family: str, jitter_frac: float = 0.15) -> Sample:
    """Full deterministic sample: background, manipulation, coarse box."""
    s_bg, s_manip, s_box = _child_seeds(seed, 3)
    background = gen_background(s_bg, h, w)
    image, mask = apply_manipulation(background, family, s_manip)
    box = derive_coarse_box(mask, jitter_frac, s_box)
    return Sample(image=image, gt_mask=mask, coarse_box=box, family=family, seed=seed)
