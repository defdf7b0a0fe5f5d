"""Dynamic multi-headed convolutional self-attention and the residual block.

Queries, keys and values are produced by a bank of same-length 1-D
convolutions at several kernel scales, combined by a learned simplex
weighting (softmax over free logits), split into heads along the channel
axis, attended with scaled dot products, and concatenated.  A linear mode
replaces the convolution bank with dense projections plus an output
projection, matching a vanilla transformer baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ConfigurationError, DimensionError, Tensor

SPATIAL = "spatial"
TEMPORAL = "temporal"

AGGREGATION_DROPOUT = 0.2


@dataclass
class AttentionRecord:
    """Post-softmax attention matrix captured for one head of one block."""

    block_index: int
    axis: str  # "spatial" | "temporal"
    head: int
    matrix: np.ndarray  # N x N, rows sum to 1

    def __post_init__(self):
        rows = self.matrix.sum(axis=-1)
        if np.abs(rows - 1.0).max() > 1e-9:
            raise ValueError("attention record rows must sum to 1")


@dataclass
class DmhcsaParams:
    """Parameters of one attention layer.

    In conv mode each role (Q/K/V) owns one (weight, bias) pair per kernel
    scale with weight shape (C, C, kernel) plus a length-n logit vector whose
    softmax forms the aggregation weights.  In linear mode each role owns a
    dense (width, width) projection and the layer adds an output projection.
    """

    heads: int
    mode: str = "conv"  # "conv" | "linear"
    kernels: tuple = ()
    q_convs: list = field(default_factory=list)  # [(weight, bias)] per scale
    k_convs: list = field(default_factory=list)
    v_convs: list = field(default_factory=list)
    q_logits: Tensor | None = None
    k_logits: Tensor | None = None
    v_logits: Tensor | None = None
    q_proj: tuple | None = None  # (weight, bias) in linear mode
    k_proj: tuple | None = None
    v_proj: tuple | None = None
    out_proj: tuple | None = None

    def named_params(self, prefix=""):
        out = []
        if self.mode == "conv":
            for role, convs, logits in (
                ("q", self.q_convs, self.q_logits),
                ("k", self.k_convs, self.k_logits),
                ("v", self.v_convs, self.v_logits),
            ):
                for i, (w, b) in enumerate(convs):
                    out.append((f"{prefix}{role}_conv{i}.weight", w))
                    out.append((f"{prefix}{role}_conv{i}.bias", b))
                out.append((f"{prefix}{role}_logits", logits))
        else:
            for role, proj in (
                ("q", self.q_proj),
                ("k", self.k_proj),
                ("v", self.v_proj),
                ("out", self.out_proj),
            ):
                out.append((f"{prefix}{role}_proj.weight", proj[0]))
                out.append((f"{prefix}{role}_proj.bias", proj[1]))
        return out


@dataclass
class BlockParams:
    """One pre-norm residual block: attention + feed-forward."""

    attn: DmhcsaParams
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    survival: float = 1.0
    dropout: float = AGGREGATION_DROPOUT

    def named_params(self, prefix=""):
        out = self.attn.named_params(prefix + "attn.")
        out += [
            (prefix + "ln1.gamma", self.ln1_gamma),
            (prefix + "ln1.beta", self.ln1_beta),
            (prefix + "ln2.gamma", self.ln2_gamma),
            (prefix + "ln2.beta", self.ln2_beta),
            (prefix + "ffn.w1", self.ffn_w1),
            (prefix + "ffn.b1", self.ffn_b1),
            (prefix + "ffn.w2", self.ffn_w2),
            (prefix + "ffn.b2", self.ffn_b2),
        ]
        return out


def _he_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_dmhcsa(rng, channels, width, heads, kernels, mode="conv"):
    """Build attention parameters.

    ``channels`` is the convolution channel count (model width for spatial
    attention, sequence length for the temporal joints profile); ``width`` is
    the attended feature width and must be divisible by ``heads``.
    """
    if width % heads:
        raise ConfigurationError(f"width {width} not divisible by {heads} heads")
    p = DmhcsaParams(heads=heads, mode=mode, kernels=tuple(kernels))
    if mode == "conv":
        for k in kernels:
            if k % 2 == 0:
                raise ConfigurationError(f"kernel sizes must be odd, got {k}")
        n = len(kernels)
        for role in ("q", "k", "v"):
            convs = [
                (
                    _he_uniform(rng, (channels, channels, k), channels * k),
                    Tensor(np.zeros(channels), requires_grad=True),
                )
                for k in kernels
            ]
            setattr(p, f"{role}_convs", convs)
            setattr(p, f"{role}_logits", Tensor(np.zeros(n), requires_grad=True))
    elif mode == "linear":
        for role in ("q", "k", "v", "out"):
            setattr(
                p,
                f"{role}_proj",
                (
                    _he_uniform(rng, (width, width), width),
                    Tensor(np.zeros(width), requires_grad=True),
                ),
            )
    else:
        raise ConfigurationError(f"unknown attention mode {mode!r}")
    return p


def init_block(
    rng, channels, width, heads, kernels, ffn_ratio, survival,
    mode="conv", dropout=AGGREGATION_DROPOUT,
):
    inner = ffn_ratio * width
    return BlockParams(
        attn=init_dmhcsa(rng, channels, width, heads, kernels, mode=mode),
        ln1_gamma=Tensor(np.ones(width), requires_grad=True),
        ln1_beta=Tensor(np.zeros(width), requires_grad=True),
        ln2_gamma=Tensor(np.ones(width), requires_grad=True),
        ln2_beta=Tensor(np.zeros(width), requires_grad=True),
        ffn_w1=_he_uniform(rng, (width, inner), width),
        ffn_b1=Tensor(np.zeros(inner), requires_grad=True),
        ffn_w2=_he_uniform(rng, (inner, width), inner),
        ffn_b2=Tensor(np.zeros(width), requires_grad=True),
        survival=survival,
        dropout=dropout,
    )


def scaled_dot_product(q, k, v, scale=None, capture=None):
    """Softmax(QK^T / sqrt(d)) V along the last two axes.

    ``q``/``k``/``v`` are (..., N, d_h).  When ``capture`` is a callable it
    receives the post-softmax attention array.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(f"attention shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    d_h = q.shape[-1]
    if scale is None:
        scale = 1.0 / math.sqrt(d_h)
    # Scaling q up front is algebraically identical to scaling the (much
    # larger) score matrix.
    scores = T.matmul(T.scale(q, scale), T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    attn = T.softmax_rows(scores)
    if capture is not None:
        capture(attn.data)
    return T.matmul(attn, v), attn


def dynamic_aggregate(parts, logits):
    """Simplex-weighted sum of same-shaped parts: sum_i softmax(logits)_i * part_i."""
    if not parts:
        raise ValueError("dynamic_aggregate needs at least one part")
    weights = T.softmax_rows(T.reshape(logits, (1, -1)))
    out = T.mul(weights[0, 0], parts[0])
    for i in range(1, len(parts)):
        out = T.add(out, T.mul(weights[0, i], parts[i]))
    return out


def multi_scale_qkv(z, params):
    """Per-scale Q/K/V from the convolution bank; ``z`` is channel-major (C, L) or (B, C, L)."""
    roles = {}
    for role, convs in (("q", params.q_convs), ("k", params.k_convs), ("v", params.v_convs)):
        roles[role] = [T.conv1d_same(z, w, b) for w, b in convs]
    return roles["q"], roles["k"], roles["v"]


def aggregate_filter_bank(convs, logits, target_kernel):
    """Collapse a multi-scale bank into one filter via the simplex weighting.

    Convolution is linear in its weights, so aggregating the per-scale
    outputs equals convolving once with the weighted sum of the (centred,
    zero-padded) kernels.  Returns the effective (weight, bias) pair.
    """
    weights = T.softmax_rows(T.reshape(logits, (1, -1)))
    w_eff = T.mul(weights[0, 0], T.pad_kernel_centered(convs[0][0], target_kernel))
    b_eff = T.mul(weights[0, 0], convs[0][1])
    for i in range(1, len(convs)):
        w_eff = T.add(w_eff, T.mul(weights[0, i], T.pad_kernel_centered(convs[i][0], target_kernel)))
        b_eff = T.add(b_eff, T.mul(weights[0, i], convs[i][1]))
    return w_eff, b_eff


def dmhcsa(
    x, params, axis, rng=None, training=False, records=None,
    block_index=0, record_select=0, dropout=AGGREGATION_DROPOUT,
):
    """Multi-headed convolutional self-attention over ``x`` of shape (B, L, W).

    Spatial attention convolves along the sequence axis with W channels;
    temporal attention treats the L sequence rows as channels and convolves
    along the feature axis (the temporal joints profile).  Head outputs are
    concatenated with no output projection in conv mode.
    """
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"dmhcsa expects (batch, seq, width), got {x.shape}")
    _, seq, width = x.shape
    h = params.heads
    if width % h:
        raise DimensionError(f"width {width} not divisible by {h} heads")

    if params.mode == "linear":
        q = T.add(T.matmul(x, params.q_proj[0]), params.q_proj[1])
        k = T.add(T.matmul(x, params.k_proj[0]), params.k_proj[1])
        v = T.add(T.matmul(x, params.v_proj[0]), params.v_proj[1])
    else:
        if axis == SPATIAL:
            z = T.transpose(x, (0, 2, 1))  # (B, W, L): W channels, slide over joints
        elif axis == TEMPORAL:
            z = x  # (B, L, W): L frame-channels, slide over the feature axis
        else:
            raise ConfigurationError(f"unknown attention axis {axis!r}")
        # Fold the per-scale aggregation into the kernels (exact, by linearity
        # of the convolution) so each role costs a single conv, and share one
        # im2col of z across the three roles.
        kmax = max(params.kernels)
        zd = z.data if z.ndim == 3 else z.data[None]
        patches = T.ConvPatches(zd, kmax)
        wq, bq = aggregate_filter_bank(params.q_convs, params.q_logits, kmax)
        wk, bk = aggregate_filter_bank(params.k_convs, params.k_logits, kmax)
        wv, bv = aggregate_filter_bank(params.v_convs, params.v_logits, kmax)
        # One conv with the three role banks stacked along the output axis,
        # so the backward pass scatters into z only once.
        qkv = T.conv1d_same(
            z, T.concat([wq, wk, wv], axis=0), T.concat([bq, bk, bv], axis=0),
            _patches=patches,
        )
        q, k, v = T.split(qkv, 3, axis=-2)
        if training and dropout > 0.0:
            q = T.dropout(q, dropout, rng, training)
            k = T.dropout(k, dropout, rng, training)
            v = T.dropout(v, dropout, rng, training)
        if axis == SPATIAL:
            q = T.transpose(q, (0, 2, 1))
            k = T.transpose(k, (0, 2, 1))
            v = T.transpose(v, (0, 2, 1))

    scale = 1.0 / math.sqrt(width / h)
    batch = x.shape[0]
    d_h = width // h
    # All heads attend in one batched matmul: (B, L, W) -> (B, h, L, d_h)
    def to_heads(t):
        return T.transpose(T.reshape(t, (batch, seq, h, d_h)), (0, 2, 1, 3))

    capture = None
    if records is not None:
        def capture(a):
            for i in range(h):
                records.append(
                    AttentionRecord(block_index, axis, i, a[record_select, i].copy())
                )
    out, _ = scaled_dot_product(
        to_heads(q), to_heads(k), to_heads(v), scale=scale, capture=capture
    )
    y = T.reshape(T.transpose(out, (0, 2, 1, 3)), (batch, seq, width))
    if params.mode == "linear":
        y = T.add(T.matmul(y, params.out_proj[0]), params.out_proj[1])
    return y


def _ffn(x, p):
    hidden = T.gelu(T.add(T.matmul(x, p.ffn_w1), p.ffn_b1))
    return T.add(T.matmul(hidden, p.ffn_w2), p.ffn_b2)


def _residual(x, branch_fn, survival, rng, training):
    # Stochastic depth: the whole branch is dropped with probability
    # 1 - survival at train time and rescaled by 1/survival when kept.
    if training and survival < 1.0:
        if rng.random() >= survival:
            return x
        return T.add(x, T.scale(branch_fn(x), 1.0 / survival))
    return T.add(x, branch_fn(x))


def convformer_block(
    x, p, axis, rng=None, training=False, records=None, block_index=0, record_select=0
):
    """Pre-norm residual block: attention then feed-forward, each with a shortcut."""
    x = _residual(
        x,
        lambda t: dmhcsa(
            T.layer_norm(t, p.ln1_gamma, p.ln1_beta),
            p.attn,
            axis,
            rng=rng,
            training=training,
            records=records,
            block_index=block_index,
            record_select=record_select,
            dropout=p.dropout,
        ),
        p.survival,
        rng,
        training,
    )
    return _residual(
        x,
        lambda t: _ffn(T.layer_norm(t, p.ln2_gamma, p.ln2_beta), p),
        p.survival,
        rng,
        training,
    )
