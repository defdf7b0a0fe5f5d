"""Full pose-lifting network: embedding, spatial and temporal stacks, head.

Also houses the accounting tools (exact learnable-parameter counts and a
multiply-accumulate FLOPs estimate, itemized per layer) and the checkpoint
format: one JSON manifest line followed by a flat little-endian float64
payload in parameter declaration order.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import attention as A
from . import tensor as T
from .tensor import ConfigurationError, DimensionError, Tensor

VARIANTS = ("dynamic", "single_filter", "linear_baseline")
CHECKPOINT_SCHEMA = 1


@dataclass
class ModelConfig:
    """Hyper-parameters of one model instance."""

    frames: int = 9  # receptive field T, odd
    joints: int = 17
    dim: int = 32  # spatial embedding width
    blocks_spatial: int = 2
    blocks_temporal: int = 2
    heads: int = 8
    kernels: tuple = (7, 7, 7)
    ffn_ratio: int = 2
    dropout: float = 0.2
    survival: float = 0.8  # stochastic-depth keep probability
    variant: str = "dynamic"

    def __post_init__(self):
        self.kernels = tuple(int(k) for k in self.kernels)
        self.validate()

    def validate(self):
        if self.frames < 1 or self.frames % 2 == 0:
            raise ConfigurationError(f"frames must be odd and positive, got {self.frames}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.dim % self.heads:
            raise ConfigurationError(f"dim {self.dim} not divisible by heads {self.heads}")
        if (self.joints * self.dim) % self.heads:
            raise ConfigurationError(
                f"joints*dim {self.joints * self.dim} not divisible by heads {self.heads}"
            )
        for k in self.kernels:
            if k < 1 or k % 2 == 0:
                raise ConfigurationError(f"kernel sizes must be odd, got {self.kernels}")
        if not 0.0 < self.survival <= 1.0:
            raise ConfigurationError(f"survival must be in (0, 1], got {self.survival}")

    def effective_kernels(self):
        """Kernel scales actually instantiated for this variant."""
        if self.variant == "single_filter":
            return (7,)
        return self.kernels

    def attention_mode(self):
        return "linear" if self.variant == "linear_baseline" else "conv"


class ConvFormerModel:
    """Parameter store plus forward graph for the two-stack lifting network."""

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        rng = np.random.Generator(np.random.Philox(seed))
        c = config
        d, j, t = c.dim, c.joints, c.frames
        dt = j * d
        kernels = c.effective_kernels()
        mode = c.attention_mode()

        self.w_embed = A._he_uniform(rng, (2, d), 2)
        self.e_pos = Tensor(rng.normal(0.0, 0.02, size=(j, d)), requires_grad=True)
        self.spatial_blocks = [
            A.init_block(rng, d, d, c.heads, kernels, c.ffn_ratio, c.survival, mode=mode, dropout=c.dropout)
            for _ in range(c.blocks_spatial)
        ]
        self.e_temp = Tensor(rng.normal(0.0, 0.02, size=(t, dt)), requires_grad=True)
        self.temporal_blocks = [
            A.init_block(rng, t, dt, c.heads, kernels, c.ffn_ratio, c.survival, mode=mode, dropout=c.dropout)
            for _ in range(c.blocks_temporal)
        ]
        # Small head init keeps the initial predictions near the origin so
        # early optimization is not spent undoing oversized random outputs;
        # the collapse starts as a plain average over frames.
        self.w_head = Tensor(rng.normal(0.0, 0.01, size=(dt, 3 * j)), requires_grad=True)
        self.b_head = Tensor(np.zeros(3 * j), requires_grad=True)
        self.collapse_w = Tensor(np.full((t, 1), 1.0 / t), requires_grad=True)
        self.collapse_b = Tensor(np.zeros(1), requires_grad=True)

    # -- parameters -----------------------------------------------------

    def named_parameters(self):
        out = [("w_embed", self.w_embed), ("e_pos", self.e_pos)]
        for i, b in enumerate(self.spatial_blocks):
            out += b.named_params(f"spatial.{i}.")
        out.append(("e_temp", self.e_temp))
        for i, b in enumerate(self.temporal_blocks):
            out += b.named_params(f"temporal.{i}.")
        out += [
            ("w_head", self.w_head),
            ("b_head", self.b_head),
            ("collapse_w", self.collapse_w),
            ("collapse_b", self.collapse_b),
        ]
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # -- forward --------------------------------------------------------

    def embed_frames(self, p2d):
        """(B, T, J, 2) 2-D poses -> (B*T, J, dim) embedded frames."""
        p2d = T.as_tensor(p2d)
        if p2d.shape[-1] != 2:
            raise DimensionError(f"expected 2 input coordinates, got shape {p2d.shape}")
        b, t, j, _ = p2d.shape
        flat = T.reshape(p2d, (b * t, j, 2))
        return T.add(T.matmul(flat, self.w_embed), self.e_pos)

    def spatial_forward(self, x, rng=None, training=False, records=None, record_select=0):
        """Run every frame (batch axis) through the spatial blocks."""
        for i, blk in enumerate(self.spatial_blocks):
            x = A.convformer_block(
                x, blk, A.SPATIAL, rng=rng, training=training,
                records=records, block_index=i, record_select=record_select,
            )
        return x

    def temporal_forward(self, z, batch, rng=None, training=False, records=None):
        """(B*T, J, dim) spatial features -> (B, T, J*dim) after temporal blocks."""
        c = self.config
        x = T.reshape(z, (batch, c.frames, c.joints * c.dim))
        x = T.add(x, self.e_temp)
        for i, blk in enumerate(self.temporal_blocks):
            x = A.convformer_block(
                x, blk, A.TEMPORAL, rng=rng, training=training,
                records=records, block_index=i, record_select=0,
            )
        return x

    def regression_head(self, z):
        """(B, T, J*dim) -> (B, J, 3): per-frame linear map, learned frame collapse."""
        c = self.config
        y = T.add(T.matmul(z, self.w_head), self.b_head)  # (B, T, 3J)
        y = T.transpose(y, (0, 2, 1))  # (B, 3J, T)
        out = T.matmul(y, self.collapse_w)  # (B, 3J, 1)
        out = T.add(out, self.collapse_b)
        return T.reshape(out, (out.shape[0], c.joints, 3))

    def forward(self, p2d, rng=None, training=False, records=None):
        """2-D pose windows (B, T, J, 2) or (T, J, 2) -> centre-frame 3-D (B, J, 3).

        Pass ``records=[]`` to capture per-block, per-head attention matrices
        (spatial maps are taken at the centre frame of the first sample).
        """
        inp = p2d if isinstance(p2d, Tensor) else Tensor(np.asarray(p2d, dtype=np.float64))
        squeeze = inp.ndim == 3
        if squeeze:
            inp = T.reshape(inp, (1,) + inp.shape)
        c = self.config
        if inp.shape[1:] != (c.frames, c.joints, 2):
            raise DimensionError(
                f"input shape {inp.shape} does not match config "
                f"(T={c.frames}, J={c.joints}, C=2)"
            )
        batch = inp.shape[0]
        x = self.embed_frames(inp)
        x = self.spatial_forward(
            x, rng=rng, training=training, records=records, record_select=c.frames // 2
        )
        z = self.temporal_forward(x, batch, rng=rng, training=training, records=records)
        out = self.regression_head(z)
        if squeeze:
            out = T.reshape(out, (c.joints, 3))
        return out

    def predict(self, p2d):
        """Eval-mode forward returning a plain array."""
        return self.forward(p2d).data.copy()

    # -- checkpoints ----------------------------------------------------

    def save(self, path):
        manifest = {"schema": CHECKPOINT_SCHEMA, "config": asdict(self.config)}
        payload = np.concatenate([p.data.reshape(-1) for p in self.parameters()])
        tmp = path + ".tmp"
        with open(tmp, "wb") as f:
            f.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
            f.write(payload.astype("<f8").tobytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            header = f.readline()
            try:
                manifest = json.loads(header)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"malformed checkpoint header in {path}") from e
            if manifest.get("schema") != CHECKPOINT_SCHEMA:
                raise ConfigurationError(
                    f"checkpoint schema {manifest.get('schema')} != {CHECKPOINT_SCHEMA}"
                )
            cfg = ModelConfig(**{**manifest["config"], "kernels": tuple(manifest["config"]["kernels"])})
            model = cls(cfg, seed=0)
            expect = model.num_parameters()
            payload = np.frombuffer(f.read(), dtype="<f8")
            if payload.size != expect:
                raise ConfigurationError(
                    f"checkpoint payload holds {payload.size} scalars, expected {expect}"
                )
        offset = 0
        for p in model.parameters():
            p.data = np.ascontiguousarray(
                payload[offset : offset + p.size].reshape(p.shape)
            )
            offset += p.size
        return model


def build_variant(config: ModelConfig, seed=0) -> ConvFormerModel:
    """Construct the model for the configured variant tag."""
    config.validate()
    return ConvFormerModel(config, seed=seed)


# -- accounting ---------------------------------------------------------


def _block_param_count(channels, width, heads, kernels, ffn_ratio, mode):
    ln = 4 * width
    ffn = width * (ffn_ratio * width) + ffn_ratio * width + (ffn_ratio * width) * width + width
    if mode == "conv":
        conv = 3 * sum(channels * channels * k + channels for k in kernels)
        logits = 3 * len(kernels)
        attn = conv + logits
    else:
        attn = 4 * (width * width + width)  # q, k, v and output projections
    return attn + ln + ffn


def count_params(config: ModelConfig) -> int:
    """Exact learnable-scalar count for a model built from ``config``."""
    c = config
    d, j, t = c.dim, c.joints, c.frames
    dt = j * d
    kernels = c.effective_kernels()
    mode = c.attention_mode()
    total = 2 * d + j * d  # embedding map + positional table
    total += c.blocks_spatial * _block_param_count(d, d, c.heads, kernels, c.ffn_ratio, mode)
    total += t * dt  # temporal embedding
    total += c.blocks_temporal * _block_param_count(t, dt, c.heads, kernels, c.ffn_ratio, mode)
    total += dt * 3 * j + 3 * j  # head projection
    total += t + 1  # frame collapse
    return total


def itemized_params(config: ModelConfig):
    """Per-component parameter counts; rows sum to count_params exactly."""
    c = config
    d, j, t = c.dim, c.joints, c.frames
    dt = j * d
    kernels = c.effective_kernels()
    mode = c.attention_mode()
    rows = [
        ("embedding", 2 * d),
        ("positional_table", j * d),
        (
            "spatial_blocks",
            c.blocks_spatial * _block_param_count(d, d, c.heads, kernels, c.ffn_ratio, mode),
        ),
        ("temporal_table", t * dt),
        (
            "temporal_blocks",
            c.blocks_temporal * _block_param_count(t, dt, c.heads, kernels, c.ffn_ratio, mode),
        ),
        ("head_projection", dt * 3 * j + 3 * j),
        ("frame_collapse", t + 1),
    ]
    return rows


def _block_macs(seq, channels, width, heads, kernels, ffn_ratio, mode):
    if mode == "conv":
        # each conv output element costs channels*k multiply-accumulates;
        # seq*width/channels is the conv output length
        qkv = 3 * sum(channels * channels * k * (seq * width // channels) for k in kernels)
    else:
        qkv = 4 * seq * width * width  # q, k, v and output projections
    attn = 2 * seq * seq * width  # scores and weighted values, summed over heads
    ffn = 2 * seq * width * (ffn_ratio * width)
    return qkv + attn + ffn


def estimate_flops(config: ModelConfig) -> int:
    """Forward-pass FLOPs (2 x multiply-accumulates) for one input window."""
    return sum(v for _, v in itemized_flops(config))


def itemized_flops(config: ModelConfig):
    c = config
    d, j, t = c.dim, c.joints, c.frames
    dt = j * d
    kernels = c.effective_kernels()
    mode = c.attention_mode()
    # Spatial convolutions slide over J with d channels; temporal ones slide
    # over J*d with T channels.  seq*width/channels is the conv output length.
    rows = [
        ("embedding", 2 * t * j * 2 * d),
        (
            "spatial_blocks",
            2 * t * c.blocks_spatial * _block_macs(j, d, d, c.heads, kernels, c.ffn_ratio, mode),
        ),
        (
            "temporal_blocks",
            2 * c.blocks_temporal * _block_macs(t, t, dt, c.heads, kernels, c.ffn_ratio, mode),
        ),
        ("head_projection", 2 * t * dt * 3 * j),
        ("frame_collapse", 2 * t * 3 * j),
    ]
    return rows
