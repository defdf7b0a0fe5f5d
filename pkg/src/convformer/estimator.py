"""Scikit-learn style wrapper: fit on (windows, targets), predict 3-D poses."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .model import ConvFormerModel, ModelConfig
from .trainer import TARGET_SCALE_MM, TrainConfig, train_on_windows


class ConvFormerLifter(BaseEstimator, RegressorMixin):
    """2-D-to-3-D pose lifting as an sklearn estimator.

    ``X`` is (n_samples, frames, joints, 2) normalized 2-D windows; ``y`` is
    (n_samples, joints, 3) millimetre, root-relative centre-frame poses.
    """

    def __init__(
        self,
        frames=9,
        joints=17,
        dim=16,
        blocks_spatial=2,
        blocks_temporal=2,
        heads=8,
        kernels=(7, 7, 7),
        variant="dynamic",
        dropout=0.2,
        survival=0.8,
        epochs=10,
        lr=1e-3,
        decay=0.95,
        batch_size=64,
        seed=0,
    ):
        self.frames = frames
        self.joints = joints
        self.dim = dim
        self.blocks_spatial = blocks_spatial
        self.blocks_temporal = blocks_temporal
        self.heads = heads
        self.kernels = kernels
        self.variant = variant
        self.dropout = dropout
        self.survival = survival
        self.epochs = epochs
        self.lr = lr
        self.decay = decay
        self.batch_size = batch_size
        self.seed = seed

    def _validate_windows(self, X):
        X = np.asarray(X, dtype=np.float64)
        want = (self.frames, self.joints, 2)
        if X.ndim != 4 or X.shape[1:] != want:
            raise ValueError(f"X must be (n_samples, {want[0]}, {want[1]}, 2), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains NaN/Inf")
        return X

    def fit(self, X, y):
        X = self._validate_windows(X)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (X.shape[0], self.joints, 3):
            raise ValueError(
                f"y must be ({X.shape[0]}, {self.joints}, 3), got {y.shape}"
            )
        config = ModelConfig(
            frames=self.frames,
            joints=self.joints,
            dim=self.dim,
            blocks_spatial=self.blocks_spatial,
            blocks_temporal=self.blocks_temporal,
            heads=self.heads,
            kernels=tuple(self.kernels),
            dropout=self.dropout,
            survival=self.survival,
            variant=self.variant,
        )
        self.model_ = ConvFormerModel(config, seed=self.seed)
        cfg = TrainConfig(
            epochs=self.epochs,
            lr0=self.lr,
            decay=self.decay,
            batch_size=self.batch_size,
            seed=self.seed,
            augment_flip=False,
        )
        self.train_log_ = train_on_windows(self.model_, X, y, cfg)
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit first")
        X = self._validate_windows(X)
        outs = []
        for start in range(0, X.shape[0], 256):
            outs.append(self.model_.forward(X[start : start + 256]).data * TARGET_SCALE_MM)
        return np.concatenate(outs)

    def score(self, X, y):
        """Negative mean per-joint position error (higher is better)."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=np.float64)
        return -float(np.linalg.norm(pred - y, axis=-1).mean())
