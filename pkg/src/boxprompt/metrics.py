"""Fixed-threshold pixel F1 and the evaluation report machinery.

Pixel AUC is deliberately not reported; localization quality is summarized
by F1 after binarizing predictions at a fixed threshold (default 0.5),
averaged per image (a pooled-pixels variant is available via flag).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import dataset, efficiency, student


def f1_fixed(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> float:
    """2TP / (2TP + FP + FN) after thresholding pred at >= threshold.

    Both-empty masks score 1; exactly one empty scores 0.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"f1_fixed: shape mismatch {pred.shape} vs {gt.shape}")
    p = np.asarray(pred) >= threshold
    g = np.asarray(gt).astype(bool)
    tp = int(np.logical_and(p, g).sum())
    fp = int(np.logical_and(p, ~g).sum())
    fn = int(np.logical_and(~p, g).sum())
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


@dataclass
class MetricsReport:
    split: str
    mean_f1: float
    per_sample: list[dict]        # [{"path": ..., "f1": ...}]
    params: int
    flops: int
    config_digest: str
    checkpoint_digest: str
    threshold: float = 0.5
    pooled: bool = False

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "mean_f1": self.mean_f1,
            "threshold": self.threshold,
            "pooled_pixels": self.pooled,
            "params": self.params,
            "flops": self.flops,
            "config_digest": self.config_digest,
            "checkpoint_digest": self.checkpoint_digest,
            "per_sample": self.per_sample,
        }

    def write(self, json_path, csv_path) -> None:
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["path", "f1"])
            writer.writeheader()
            writer.writerows(self.per_sample)


def evaluate(checkpoint_path, manifest: dataset.Manifest, root, split: str,
             threshold: float = 0.5, pooled: bool = False,
             perturb_fn=None) -> MetricsReport:
    """Frozen-bank evaluation of a checkpoint against ground-truth masks.

    ``perturb_fn`` (image -> image), when given, degrades inputs before
    prediction — used by the robustness protocol.  Predictions are always
    scored against the clean ground truth.
    """
    state = ckpt.load_checkpoint(checkpoint_path)
    state.bank.frozen = True
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split '{split}' is empty")

    per_sample = []
    pooled_counts = np.zeros(3, dtype=np.int64)  # tp, fp, fn
    for rec in records:
        image, gt = dataset.load_record(rec, root)
        if image.shape[1] != state.params.config.input_size:
            raise ValueError(f"checkpoint expects {state.params.config.input_size}px inputs, "
                             f"manifest has {image.shape[1]}px")
        if perturb_fn is not None:
            image = perturb_fn(image)
        prob = student.predict(image, state.params, state.bank)
        per_sample.append({"path": rec.path, "f1": f1_fixed(prob, gt, threshold)})
        if pooled:
            p = prob >= threshold
            pooled_counts += (int(np.logical_and(p, gt).sum()),
                              int(np.logical_and(p, ~gt).sum()),
                              int(np.logical_and(~p, gt).sum()))

    if pooled:
        tp, fp, fn = pooled_counts
        mean = 1.0 if 2 * tp + fp + fn == 0 else 2.0 * tp / (2 * tp + fp + fn)
    else:
        mean = float(np.mean([s["f1"] for s in per_sample]))
    cfg_json = json.dumps(state.params.config.to_dict(), sort_keys=True)
    return MetricsReport(split=split, mean_f1=mean, per_sample=per_sample,
                         params=efficiency.count_params(state.params),
                         flops=efficiency.count_flops(state.params.config),
                         config_digest=dataset.sha256_text(cfg_json),
                         checkpoint_digest=dataset.sha256_file(checkpoint_path),
                         threshold=threshold, pooled=pooled)


def check_expectations(report: MetricsReport, expectations: dict) -> list[str]:
    """Return violation messages for a {'min_mean_f1': x, 'max_mean_f1': y} gate."""
    bad = []
    if "min_mean_f1" in expectations and report.mean_f1 < expectations["min_mean_f1"]:
        bad.append(f"mean F1 {report.mean_f1:.4f} < required {expectations['min_mean_f1']}")
    if "max_mean_f1" in expectations and report.mean_f1 > expectations["max_mean_f1"]:
        bad.append(f"mean F1 {report.mean_f1:.4f} > allowed {expectations['max_mean_f1']}")
    return bad
