"""Box-prompted pseudo-mask oracles.

Two stand-ins for a promptable segmentation teacher, both emitting binary
masks that are zero outside the prompt box:

* ``degraded_gt`` — the ground-truth mask perturbed along its boundary to
  a requested IoU, giving a teacher of controllable fidelity.  A smooth
  noise field is added to the mask's signed distance transform and the
  level-set threshold is binary-searched per sample until the IoU of the
  re-thresholded mask hits the target.
* ``classical`` — no ground truth needed: per-pixel color dissimilarity
  to the statistics of a 2-px ring outside the box, Otsu-thresholded,
  largest 4-connected component kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class PseudoMask:
    mask: np.ndarray           # (H, W) bool, zero outside the prompt box
    teacher_kind: str          # "degraded_gt" | "classical"
    quality_iou: float         # IoU vs gt when known, else -1


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a & b| / |a | b|; two empty masks count as identical (1.0)."""
    if a.shape != b.shape:
        raise ValueError(f"mask_iou: shape mismatch {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / union


def _box_mask(shape, box) -> np.ndarray:
    x0, y0, x1, y1 = box
    m = np.zeros(shape, dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def pseudo_mask_degraded(gt_mask: np.ndarray, box, quality: float, seed: int) -> PseudoMask:
    """Boundary-perturbed copy of gt at (approximately) the requested IoU."""
    if not 0.0 < quality <= 1.0:
        raise ValueError(f"quality must be in (0, 1], got {quality}")
    base = np.logical_and(gt_mask.astype(bool), _box_mask(gt_mask.shape, box))
    if not base.any():
        raise ValueError("degraded teacher needs a non-empty gt inside the box")
    if quality >= 1.0:
        return PseudoMask(mask=base.copy(), teacher_kind="degraded_gt", quality_iou=1.0)

    rng = np.random.default_rng(seed)
    # signed distance: positive inside the mask, negative outside
    dist = ndimage.distance_transform_edt(base) - ndimage.distance_transform_edt(~base)
    noise = ndimage.gaussian_filter(rng.standard_normal(base.shape), sigma=2.0)
    noise /= max(float(np.abs(noise).max()), 1e-9)
    field = dist + 2.5 * noise

    inside_box = _box_mask(gt_mask.shape, box)
    sign = 1.0 if rng.random() < 0.5 else -1.0  # erode vs dilate
    max_r = float(np.abs(dist).max()) + 3.0

    def candidate(threshold: float) -> np.ndarray:
        return np.logical_and(field >= threshold, inside_box)

    lo, hi = 0.0, max_r
    best, best_err = base, 1.0 - quality  # threshold 0 with no noise ~ gt itself
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        cand = candidate(sign * mid)
        iou = mask_iou(cand, base)
        err = abs(iou - quality)
        if cand.any() and err < best_err:
            best, best_err = cand, err
        if iou > quality:
            lo = mid  # not degraded enough: push the level set further
        else:
            hi = mid
    if not best.any():
        best = base.copy()  # fully eroded away: fall back to the clean mask
    return PseudoMask(mask=best, teacher_kind="degraded_gt",
                      quality_iou=mask_iou(best, base))


def _otsu_threshold(values: np.ndarray, bins: int = 128) -> float:
    """Classic between-class-variance maximization on a 1-D sample."""
    hist, edges = np.histogram(values, bins=bins)
    total = values.size
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = total - w0
    cum = np.cumsum(hist * centers)
    mu0 = np.divide(cum, w0, out=np.zeros_like(cum), where=w0 > 0)
    mu1 = np.divide(cum[-1] - cum, w1, out=np.zeros_like(cum), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    k = int(np.argmax(between))
    return float(edges[k + 1])


def pseudo_mask_classical(image: np.ndarray, box) -> PseudoMask:
    """Ring-statistics segmentation inside the box; deterministic, no gt."""
    x0, y0, x1, y1 = box
    h, w = image.shape[1], image.shape[2]
    if (x1 - x0) * (y1 - y0) < 4:
        raise ValueError(f"box too small: {box}")
    inside = _box_mask((h, w), box)
    ring = np.logical_and(
        _box_mask((h, w), (max(x0 - 2, 0), max(y0 - 2, 0), min(x1 + 2, w), min(y1 + 2, h))),
        ~inside)

    full_box = inside.copy()
    if not ring.any():
        return PseudoMask(mask=full_box, teacher_kind="classical", quality_iou=-1.0)

    ring_px = image[:, ring]                      # (3, n)
    mu = ring_px.mean(axis=1)
    sigma = np.maximum(ring_px.std(axis=1), 1e-3)
    dev = (image - mu[:, None, None]) / sigma[:, None, None]
    dissim = np.sqrt((dev ** 2).sum(axis=0))

    vals = dissim[inside]
    if float(vals.max() - vals.min()) < 1e-6:
        return PseudoMask(mask=full_box, teacher_kind="classical", quality_iou=-1.0)

    thr = _otsu_threshold(vals)
    cand = np.logical_and(dissim >= thr, inside)
    if not cand.any():
        return PseudoMask(mask=full_box, teacher_kind="classical", quality_iou=-1.0)

    labels, n = ndimage.label(cand, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    if n > 1:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, n + 1))
        cand = labels == (1 + int(np.argmax(sizes)))
    return PseudoMask(mask=cand, teacher_kind="classical", quality_iou=-1.0)


def make_teacher(mode: str, quality: float = 0.9):
    """Return fn(image, gt_mask, box, seed) -> PseudoMask for a config mode."""
    if mode == "degraded_gt":
        return lambda image, gt, box, seed: pseudo_mask_degraded(gt, box, quality, seed)
    if mode == "classical":
        return lambda image, gt, box, seed: pseudo_mask_classical(image, box)
    raise ValueError(f"unknown teacher mode '{mode}'")
