"""Distillation training: pixel BCE against teacher pseudo-masks, Adam,
seeded shuffling, CSV logging and deterministic checkpointing.

The teacher is frozen, so pseudo-masks are computed once per sample and
cached in memory for the whole run.  Everything downstream of the config
(and its seeds) is deterministic: two runs with the same config produce
bitwise-identical checkpoints.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset, ops, student, teacher
from .student import MemoryBank, ModelParams, StudentConfig
from .tensor import NonFiniteError, Tensor, first_nonfinite

BCE_EPS = 1e-7


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 1
    checkpoint_epochs: tuple[int, ...] = (10, 20)
    teacher_mode: str = "degraded_gt"   # "degraded_gt" | "classical" | "gt"
    teacher_quality: float = 0.9


@dataclass
class TrainState:
    params: ModelParams
    bank: MemoryBank
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    seed: int = 1

    @staticmethod
    def init(config: StudentConfig, seed: int) -> "TrainState":
        params = student.init_params(config, seed)
        bank = student.init_bank(config, seed)
        m = {k: np.zeros_like(p.data) for k, p in params.items()}
        v = {k: np.zeros_like(p.data) for k, p in params.items()}
        return TrainState(params=params, bank=bank, m=m, v=v, seed=seed)


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over pixels of -[t*log p + (1-t)*log(1-p)], p clamped away from {0,1}."""
    if pred.shape != target.shape:
        raise ValueError(f"bce_loss: shape mismatch {pred.shape} vs {target.shape}")
    p = ops.clamp(pred, BCE_EPS, 1.0 - BCE_EPS)
    one = Tensor(np.ones_like(target.data), dtype=target.data.dtype)
    pos = ops.mul(target, ops.log(p))
    neg = ops.mul(ops.sub(one, target), ops.log(ops.sub(one, p)))
    return ops.scale(ops.mean_all(ops.add(pos, neg)), -1.0)


def adam_step(state: TrainState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam over every parameter, fixed name order."""
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in state.params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        p.data = p.data - np.asarray(cfg.lr * update, dtype=p.data.dtype)
        if not np.all(np.isfinite(p.data)):
            raise NonFiniteError(f"parameter '{name}' became non-finite after step {t}")


def train_step(batch: list[tuple[np.ndarray, np.ndarray]], state: TrainState,
               cfg: TrainConfig) -> float:
    """One optimizer step over [(image, pseudo_mask)]; returns the batch loss."""
    if not batch:
        raise ValueError("train_step: empty batch")
    dt = state.params.config.np_dtype
    state.params.zero_grad()

    losses = []
    fused_values = []
    try:
        for image, mask in batch:
            out = student.forward(Tensor(np.asarray(image, dtype=dt), dtype=dt),
                                  state.params, state.bank)
            target = Tensor(np.asarray(mask, dtype=dt), dtype=dt)
            losses.append(bce_loss(out["prob"], target))
            fused_values.append(out["fused"].data)
        total = losses[0]
        for extra in losses[1:]:
            total = ops.add(total, extra)
        loss = ops.scale(total, 1.0 / len(batch))
    except NonFiniteError as err:
        raise NonFiniteError(f"non-finite value during forward at step {state.step}: {err}") from err

    if not np.isfinite(loss.data):
        bad = first_nonfinite(loss) or "loss"
        raise NonFiniteError(f"non-finite loss at step {state.step} (first bad tensor: {bad})")

    loss.backward()
    adam_step(state, cfg)
    state.step += 1

    if not state.params.config.ablation.no_memory:
        for fused in fused_values:
            student.memory_update(state.bank, fused, state.params.config.ema_rate)
    return loss.item()


@dataclass
class TrainResult:
    state: TrainState
    log_rows: list[dict] = field(default_factory=list)
    checkpoint_paths: dict[int, str] = field(default_factory=dict)


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F0F, epoch]))
    return rng.permutation(n)


def pseudo_mask_cache(records, root, cfg: TrainConfig) -> list[np.ndarray]:
    """One pseudo-mask per training record (the teacher is frozen)."""
    masks = []
    for rec in records:
        image, gt = dataset.load_record(rec, root)
        if cfg.teacher_mode == "gt":
            masks.append(gt)
            continue
        fn = teacher.make_teacher(cfg.teacher_mode, cfg.teacher_quality)
        seed = int(np.random.SeedSequence([rec.seed, 0x7EAC]).generate_state(1)[0])
        masks.append(fn(image, gt, rec.box, seed).mask)
    return masks


def train(student_cfg: StudentConfig, cfg: TrainConfig, manifest: dataset.Manifest,
          root, out_dir, pseudo_masks: list[np.ndarray] | None = None,
          state: TrainState | None = None) -> TrainResult:
    """Full run over the manifest's train split; writes checkpoints + CSV log."""
    from . import checkpoint as ckpt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = manifest.split("train")
    if not records:
        raise ValueError("manifest has no training records")

    if state is None:
        state = TrainState.init(student_cfg, cfg.seed)
    if pseudo_masks is None:
        pseudo_masks = pseudo_mask_cache(records, root, cfg)
    images = [dataset.load_record(rec, root)[0] for rec in records]

    result = TrainResult(state=state)
    log_path = out_dir / "train_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "mean_loss", "wall_time_s"])
        writer.writeheader()
        for epoch in range(state.epoch, cfg.epochs):
            t0 = time.perf_counter()
            order = _epoch_order(cfg.seed, epoch, len(records))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch = [(images[i], pseudo_masks[i]) for i in idx]
                epoch_losses.append(train_step(batch, state, cfg))
            state.epoch = epoch + 1
            row = {"epoch": state.epoch, "mean_loss": float(np.mean(epoch_losses)),
                   "wall_time_s": round(time.perf_counter() - t0, 3)}
            result.log_rows.append(row)
            writer.writerow(row)
            if state.epoch in cfg.checkpoint_epochs and state.epoch != cfg.epochs:
                path = out_dir / f"checkpoint_ep{state.epoch:03d}.bin"
                ckpt.save_checkpoint(state, path)
                result.checkpoint_paths[state.epoch] = str(path)

    final = out_dir / "checkpoint_final.bin"
    ckpt.save_checkpoint(state, final)
    result.checkpoint_paths[cfg.epochs] = str(final)
    return result
