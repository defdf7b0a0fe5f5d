"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad(f, tensors, index, h=1e-5):
    """Central-difference gradient of scalar ``f(*tensors)`` w.r.t. one input."""
    t = tensors[index]
    base = t.data.copy()
    g = np.zeros_like(base)
    flat_g = g.reshape(-1)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(*tensors).data)
        flat[i] = orig - h
        down = float(f(*tensors).data)
        flat[i] = orig
        flat_g[i] = (up - down) / (2.0 * h)
    t.data = base
    return g


def max_relative_error(f, tensors, h=1e-5):
    """Compare analytic vs central-difference gradients for every input.

    ``f`` maps the given Tensors to a scalar Tensor.  Returns the worst
    relative error max|ga-gn| / max(1, |ga|, |gn|) across all inputs.
    """
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()
    loss = f(*tensors)
    loss.backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        gn = numerical_grad(f, tensors, i, h=h)
        ga = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = max(1.0, float(np.abs(ga).max()), float(np.abs(gn).max()))
        worst = max(worst, float(np.abs(ga - gn).max()) / denom)
    return worst


def check(f, tensors, tol=1e-4, h=1e-5):
    err = max_relative_error(f, tensors, h=h)
    if err >= tol:
        raise AssertionError(f"gradient check failed: rel. error {err:.3e} >= {tol}")
    return err


def random_tensor(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _op_cases():
    """Per-operation scalar-loss probes for the finite-difference suite."""
    from . import attention as A
    from . import tensor as T

    def fixed_rng():
        return np.random.Generator(np.random.Philox(12345))

    def case_matmul(rng):
        return (
            lambda a, b: T.sum_(T.matmul(a, b)),
            [random_tensor(rng, 4, 3), random_tensor(rng, 3, 5)],
        )

    def case_conv1d(rng):
        return (
            lambda x, w, b: T.sum_(T.conv1d_same(x, w, b)),
            [random_tensor(rng, 3, 7), random_tensor(rng, 2, 3, 5), random_tensor(rng, 2)],
        )

    def case_softmax(rng):
        weight = Tensor(rng.normal(size=(4, 5)))
        return (
            lambda x: T.sum_(T.mul(T.softmax_rows(x), weight)),
            [random_tensor(rng, 4, 5)],
        )

    def case_layer_norm(rng):
        weight = Tensor(rng.normal(size=(3, 6)))
        return (
            lambda x, g, b: T.sum_(T.mul(T.layer_norm(x, g, b), weight)),
            [random_tensor(rng, 3, 6), random_tensor(rng, 6), random_tensor(rng, 6)],
        )

    def case_add(rng):
        return lambda a, b: T.sum_(T.add(a, b)), [random_tensor(rng, 3, 4), random_tensor(rng, 4)]

    def case_mul(rng):
        return (
            lambda a, b: T.sum_(T.mul(a, b)),
            [random_tensor(rng, 3, 4), random_tensor(rng, 3, 4)],
        )

    def case_concat_split(rng):
        def f(a, b):
            joined = T.concat([a, b], axis=1)
            parts = T.split(joined, 2, axis=1)
            return T.sum_(T.mul(parts[0], parts[1]))

        return f, [random_tensor(rng, 3, 2), random_tensor(rng, 3, 2)]

    def case_mean_transpose(rng):
        return (
            lambda a: T.mean(T.mul(T.transpose(a, (1, 0)), T.transpose(a, (1, 0)))),
            [random_tensor(rng, 3, 4)],
        )

    def case_gelu(rng):
        return lambda a: T.sum_(T.gelu(a)), [random_tensor(rng, 4, 4)]

    def case_sqrt(rng):
        return lambda a: T.sum_(T.sqrt(a)), [random_tensor(rng, 3, 3, lo=0.5, hi=2.0)]

    def case_dropout(rng):
        # fixed seed per evaluation so the mask is identical across probes
        return (
            lambda a: T.sum_(T.dropout(a, 0.3, fixed_rng(), training=True)),
            [random_tensor(rng, 4, 5)],
        )

    def case_dmhcsa(rng):
        p = A.init_dmhcsa(fixed_rng(), channels=4, width=4, heads=2, kernels=(3,))
        tensors = [random_tensor(rng, 1, 5, 4)]
        for _, t in p.named_params():
            t.data = rng.normal(scale=0.3, size=t.shape)
            tensors.append(t)

        def f(x, *params):
            return T.sum_(A.dmhcsa(x, p, A.SPATIAL))

        return f, tensors

    def case_block(rng):
        p = A.init_block(
            fixed_rng(), channels=4, width=4, heads=2, kernels=(3,), ffn_ratio=2, survival=1.0
        )
        tensors = [random_tensor(rng, 1, 5, 4)]
        for name, t in p.named_params():
            if "gamma" not in name:
                t.data = rng.normal(scale=0.3, size=t.shape)
            tensors.append(t)

        def f(x, *params):
            return T.sum_(A.convformer_block(x, p, A.SPATIAL))

        return f, tensors

    def case_end_to_end(rng):
        from .model import ConvFormerModel, ModelConfig

        cfg = ModelConfig(
            frames=3, joints=5, dim=8, blocks_spatial=1, blocks_temporal=1,
            heads=2, kernels=(3,), survival=1.0,
        )
        model = ConvFormerModel(cfg, seed=int(rng.integers(1 << 31)))
        x = Tensor(rng.uniform(-1, 1, size=(2, 3, 5, 2)), requires_grad=True)
        target = rng.normal(size=(2, 5, 3))

        def f(x, *params):
            diff = T.sub(model.forward(x), Tensor(target))
            return T.mean(T.mul(diff, diff))

        # One representative parameter of every kind keeps the numeric pass
        # tractable; the analytic backward still covers the whole graph.
        named = dict(model.named_parameters())
        picks = [
            "w_embed", "e_pos", "spatial.0.attn.q_conv0.weight",
            "spatial.0.attn.q_logits", "spatial.0.ln1.gamma", "spatial.0.ffn.w1",
            "e_temp", "temporal.0.attn.v_conv0.weight", "temporal.0.ffn.b2",
            "w_head", "collapse_w", "collapse_b",
        ]
        return f, [x] + [named[k] for k in picks]

    return {
        "matmul": case_matmul,
        "conv1d_same": case_conv1d,
        "softmax_rows": case_softmax,
        "layer_norm": case_layer_norm,
        "add": case_add,
        "mul": case_mul,
        "concat_split": case_concat_split,
        "mean_transpose": case_mean_transpose,
        "gelu": case_gelu,
        "sqrt": case_sqrt,
        "dropout": case_dropout,
        "dmhcsa": case_dmhcsa,
        "convformer_block": case_block,
        "end_to_end_tiny": case_end_to_end,
    }


def run_suite(seeds=3, ops=None):
    """Worst relative error per operation over ``seeds`` random draws."""
    cases = _op_cases()
    if ops is not None:
        cases = {k: v for k, v in cases.items() if k in ops}
    results = {}
    for name, make in cases.items():
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.Generator(np.random.Philox([seed, sum(map(ord, name))]))
            f, tensors = make(rng)
            worst = max(worst, max_relative_error(f, tensors))
        results[name] = worst
    return results
