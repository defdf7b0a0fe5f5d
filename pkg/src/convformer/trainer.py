"""Training loop: Adam, per-epoch exponential LR decay, flip augmentation.

Targets are scaled from millimetres to metres internally so the loss and the
optimizer operate on O(1) quantities; reported metrics are in millimetres.
Training is bit-reproducible for a fixed (seed, config, dataset).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import metrics as M
from . import tensor as T
from .data import MotionClip, window_arrays
from .model import ConvFormerModel

TARGET_SCALE_MM = 1000.0  # millimetres per internal unit
LOG_COLUMNS = ("epoch", "lr", "train_loss", "eval_mpjpe", "eval_pmpjpe", "eval_mpjve")


@dataclass
class TrainConfig:
    epochs: int = 60
    lr0: float = 1e-3
    decay: float = 0.95
    batch_size: int = 64
    seed: int = 0
    augment_flip: bool = True
    eval_every: int = 0  # 0 = evaluate only after the final epoch

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")


def lr_at(epoch, cfg: TrainConfig):
    """Learning rate for ``epoch`` (0-based): lr0 * decay**epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.decay**epoch


class Adam:
    """Standard Adam with bias correction over a named parameter list."""

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.named_params]
        self.v = [np.zeros_like(p.data) for _, p in self.named_params]

    def step(self, lr):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for i, (name, p) in enumerate(self.named_params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"NaN/Inf gradient for parameter {name!r}")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1**t)
            vhat = self.v[i] / (1 - b2**t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(params, state: Adam, lr):
    """Apply one Adam update from the gradients currently on ``params``."""
    state.step(lr)


def pose_loss(pred, target_mm):
    """Mean over the batch of the per-pose mean joint distance (internal units)."""
    target = T.Tensor(np.asarray(target_mm, dtype=np.float64) / TARGET_SCALE_MM)
    diff = T.sub(pred, target)
    sq = T.sum_(T.mul(diff, diff), axis=-1)  # (B, J)
    # eps keeps the sqrt differentiable at exact zero error (bias ~1e-6 units)
    dist = T.sqrt(T.add(sq, 1e-12))
    return T.mean(dist)


def _flip_batch(x2d, y3d, meta, mask):
    x2d = x2d.copy()
    y3d = y3d.copy()
    perm = meta.flip_permutation()
    sel = np.nonzero(mask)[0]
    x2d[sel] = x2d[np.ix_(sel, np.arange(x2d.shape[1]), perm)]
    x2d[sel, :, :, 0] *= -1.0
    y3d[sel] = y3d[np.ix_(sel, perm)]
    y3d[sel, :, 0] *= -1.0
    return x2d, y3d


def train_on_windows(model: ConvFormerModel, x2d, y3d, cfg: TrainConfig, meta=None, eval_clips=None, out_dir=None):
    """Optimize ``model`` on stacked windows; returns one log row per epoch.

    ``x2d`` is (N, T, J, 2), ``y3d`` is (N, J, 3) in millimetres.  Flip
    augmentation requires ``meta`` and is skipped otherwise.  When
    ``eval_clips`` is given, evaluation runs every ``cfg.eval_every`` epochs
    (always after the last); with ``out_dir`` the CSV log and checkpoints are
    written there.
    """
    n = x2d.shape[0]
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    opt = Adam(model.named_parameters())
    log = []
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        perm = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = x2d[idx], y3d[idx]
            if cfg.augment_flip and meta is not None:
                mask = rng.random(len(idx)) < 0.5
                if mask.any():
                    xb, yb = _flip_batch(xb, yb, meta, mask)
            pred = model.forward(xb, rng=rng, training=True)
            loss = pose_loss(pred, yb)
            model.zero_grad()
            loss.backward()
            opt.step(lr)
            total += float(loss.data)
            batches += 1
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total / max(batches, 1),
            "eval_mpjpe": "",
            "eval_pmpjpe": "",
            "eval_mpjve": "",
        }
        last = epoch == cfg.epochs - 1
        due = cfg.eval_every > 0 and (epoch + 1) % cfg.eval_every == 0
        if eval_clips is not None and (due or last):
            report = evaluate(model, eval_clips)
            row["eval_mpjpe"] = report["mpjpe"]
            row["eval_pmpjpe"] = report["p_mpjpe"]
            row["eval_mpjve"] = report["mpjve"]
            if out_dir is not None:
                model.save(os.path.join(out_dir, "model.ckpt"))
        log.append(row)
    if out_dir is not None:
        model.save(os.path.join(out_dir, "model.ckpt"))
        write_log(os.path.join(out_dir, "log.csv"), log)
    return log


def train(model: ConvFormerModel, clips, cfg: TrainConfig, out_dir=None):
    """Train on the sliding windows of one or more clips; evaluates on the same clips."""
    if isinstance(clips, MotionClip):
        clips = [clips]
    x2d, y3d = window_arrays(clips, model.config.frames)
    meta = clips[0].meta
    return train_on_windows(
        model, x2d, y3d, cfg, meta=meta, eval_clips=clips, out_dir=out_dir
    )


def predict_clip(model: ConvFormerModel, clip: MotionClip, batch_size=256):
    """Centre-frame predictions for every frame of a clip, in millimetres."""
    x2d, _ = window_arrays(clip, model.config.frames)
    outs = []
    for start in range(0, x2d.shape[0], batch_size):
        pred = model.forward(x2d[start : start + batch_size]).data
        outs.append(pred * TARGET_SCALE_MM)
    return np.concatenate(outs)


def evaluate(model: ConvFormerModel, clips):
    """Aggregate all protocols over every window of the given clips."""
    if isinstance(clips, MotionClip):
        clips = [clips]
    mpjpes, pmpjpes, pcks, aucs, mpjves = [], [], [], [], []
    for clip in clips:
        pred = predict_clip(model, clip)
        gt = clip.poses3d
        for i in range(len(clip)):
            mpjpes.append(M.mpjpe(gt[i], pred[i]))
            pmpjpes.append(M.p_mpjpe(gt[i], pred[i]))
            pcks.append(M.pck(gt[i], pred[i]))
            aucs.append(M.auc(gt[i], pred[i]))
        if len(clip) >= 2:
            mpjves.append(M.mpjve(gt, pred))
    return {
        "mpjpe": float(np.mean(mpjpes)),
        "p_mpjpe": float(np.mean(pmpjpes)),
        "mpjve": float(np.mean(mpjves)) if mpjves else 0.0,
        "pck": float(np.mean(pcks)),
        "auc": float(np.mean(aucs)),
    }


def constant_pose_baseline(clips):
    """Mean pose over all frames: the predictor a trained model must beat."""
    if isinstance(clips, MotionClip):
        clips = [clips]
    stacked = np.concatenate([c.poses3d for c in clips])
    return stacked.mean(axis=0)


def baseline_mpjpe(clips):
    if isinstance(clips, MotionClip):
        clips = [clips]
    mean_pose = constant_pose_baseline(clips)
    errs = [
        M.mpjpe(clip.poses3d[i], mean_pose)
        for clip in clips
        for i in range(len(clip))
    ]
    return float(np.mean(errs))


def write_log(path, log):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_COLUMNS)
        for row in log:
            w.writerow([
                row["epoch"],
                repr(float(row["lr"])),
                repr(float(row["train_loss"])),
                "" if row["eval_mpjpe"] == "" else repr(float(row["eval_mpjpe"])),
                "" if row["eval_pmpjpe"] == "" else repr(float(row["eval_pmpjpe"])),
                "" if row["eval_mpjve"] == "" else repr(float(row["eval_mpjve"])),
            ])
