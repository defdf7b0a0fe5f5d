"""Model assembly: shapes, counting, checkpoints, variants, accounting."""

import numpy as np
import pytest

from convformer.model import (
    ConvFormerModel,
    ModelConfig,
    build_variant,
    count_params,
    estimate_flops,
    itemized_flops,
    itemized_params,
)
from convformer.tensor import ConfigurationError, DimensionError

TINY = dict(frames=3, joints=5, dim=8, blocks_spatial=1, blocks_temporal=1,
            heads=2, kernels=(3,), survival=1.0, dropout=0.0)


def tiny_config(**over):
    return ModelConfig(**{**TINY, **over})


class TestConfigValidation:
    def test_even_frames_rejected(self):
        with pytest.raises(ConfigurationError):
            tiny_config(frames=4)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            tiny_config(kernels=(4,))

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigurationError):
            tiny_config(variant="fancy")

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ConfigurationError):
            tiny_config(dim=9, heads=2)

    def test_survival_out_of_range_rejected(self):
        with pytest.raises(ConfigurationError):
            tiny_config(survival=0.0)

    def test_single_filter_effective_kernels(self):
        cfg = tiny_config(kernels=(3, 5, 7), variant="single_filter")
        assert cfg.effective_kernels() == (7,)
        assert tiny_config(kernels=(3, 5, 7)).effective_kernels() == (3, 5, 7)

    def test_attention_mode_per_variant(self):
        assert tiny_config().attention_mode() == "conv"
        assert tiny_config(variant="linear_baseline").attention_mode() == "linear"


class TestForward:
    def test_output_shape_batched(self):
        model = ConvFormerModel(tiny_config(), seed=0)
        x = np.random.default_rng(0).normal(size=(4, 3, 5, 2))
        out = model.forward(x)
        assert out.shape == (4, 5, 3)

    def test_output_shape_single_window(self):
        model = ConvFormerModel(tiny_config(), seed=0)
        x = np.random.default_rng(1).normal(size=(3, 5, 2))
        assert model.forward(x).shape == (5, 3)

    def test_wrong_window_shape_rejected(self):
        model = ConvFormerModel(tiny_config(), seed=0)
        with pytest.raises(DimensionError):
            model.forward(np.zeros((2, 5, 5, 2)))

    def test_batch_consistency(self):
        # Samples must not interact: predicting jointly equals one by one.
        model = ConvFormerModel(tiny_config(), seed=0)
        x = np.random.default_rng(2).normal(size=(3, 3, 5, 2))
        joint = model.forward(x).data
        single = np.stack([model.forward(x[i]).data for i in range(3)])
        np.testing.assert_allclose(joint, single, atol=1e-12)

    def test_gradient_reaches_every_parameter(self):
        # Two kernel scales so the aggregation logits have non-constant
        # softmax and hence nonzero gradients.
        model = ConvFormerModel(tiny_config(kernels=(3, 5)), seed=0)
        x = np.random.default_rng(3).normal(size=(2, 3, 5, 2))
        out = model.forward(x)
        from convformer import tensor as T

        T.sum_(T.mul(out, out)).backward()
        missing = [n for n, p in model.named_parameters() if p.grad is None]
        assert missing == []
        zero = [
            n for n, p in model.named_parameters()
            if p.grad is not None and np.abs(p.grad).max() == 0.0
        ]
        assert zero == []

    def test_joint_permutation_changes_output(self):
        # The positional table makes the model sensitive to joint order: a
        # counterexample to permutation invariance.
        model = ConvFormerModel(tiny_config(), seed=0)
        x = np.random.default_rng(4).normal(size=(1, 3, 5, 2))
        perm = [1, 0, 2, 3, 4]
        out = model.forward(x).data
        out_p = model.forward(x[:, :, perm]).data
        assert not np.allclose(out, out_p)

    def test_attention_records_count(self):
        cfg = tiny_config(blocks_spatial=2, blocks_temporal=1)
        model = ConvFormerModel(cfg, seed=0)
        records = []
        model.forward(np.zeros((1, 3, 5, 2)), records=records)
        # heads * (spatial blocks + temporal blocks)
        assert len(records) == cfg.heads * 3
        spatial = [r for r in records if r.axis == "spatial"]
        temporal = [r for r in records if r.axis == "temporal"]
        assert len(spatial) == cfg.heads * 2
        assert {r.matrix.shape for r in spatial} == {(5, 5)}
        assert {r.matrix.shape for r in temporal} == {(3, 3)}

    def test_predict_returns_plain_array(self):
        model = ConvFormerModel(tiny_config(), seed=0)
        out = model.predict(np.zeros((2, 3, 5, 2)))
        assert isinstance(out, np.ndarray)
        assert out.shape == (2, 5, 3)


class TestCounting:
    @pytest.mark.parametrize("over", [
        {},
        {"dim": 16, "heads": 4},
        {"kernels": (3, 5)},
        {"variant": "single_filter", "kernels": (3, 5, 7)},
        {"variant": "linear_baseline"},
        {"frames": 5, "blocks_spatial": 2, "blocks_temporal": 2},
    ])
    def test_count_matches_instantiated_model(self, over):
        cfg = tiny_config(**over)
        model = ConvFormerModel(cfg, seed=0)
        assert model.num_parameters() == count_params(cfg)

    def test_itemized_rows_sum_to_total(self):
        cfg = ModelConfig()
        assert sum(v for _, v in itemized_params(cfg)) == count_params(cfg)
        assert sum(v for _, v in itemized_flops(cfg)) == estimate_flops(cfg)

    def test_flops_grow_with_frames(self):
        base = estimate_flops(ModelConfig(frames=9))
        bigger = estimate_flops(ModelConfig(frames=27))
        assert bigger > 2 * base

    def test_named_parameters_unique_and_ordered(self):
        model = ConvFormerModel(tiny_config(), seed=0)
        names = [n for n, _ in model.named_parameters()]
        assert len(names) == len(set(names))
        assert names[0] == "w_embed"
        assert names[-1] == "collapse_b"


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = ConvFormerModel(tiny_config(), seed=7)
        x = np.random.default_rng(5).normal(size=(2, 3, 5, 2))
        before = model.forward(x).data
        path = str(tmp_path / "model.ckpt")
        model.save(path)
        loaded = ConvFormerModel.load(path)
        assert loaded.config == model.config
        np.testing.assert_array_equal(loaded.forward(x).data, before)
        for (n1, p1), (n2, p2) in zip(model.named_parameters(), loaded.named_parameters()):
            assert n1 == n2
            np.testing.assert_array_equal(p1.data, p2.data)

    def test_truncated_payload_rejected(self, tmp_path):
        model = ConvFormerModel(tiny_config(), seed=0)
        path = str(tmp_path / "model.ckpt")
        model.save(path)
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[:-16])
        with pytest.raises(ConfigurationError):
            ConvFormerModel.load(path)

    def test_malformed_header_rejected(self, tmp_path):
        path = str(tmp_path / "model.ckpt")
        open(path, "wb").write(b"not json\n")
        with pytest.raises(ConfigurationError):
            ConvFormerModel.load(path)

    def test_wrong_schema_rejected(self, tmp_path):
        path = str(tmp_path / "model.ckpt")
        open(path, "wb").write(b'{"schema": 999, "config": {}}\n')
        with pytest.raises(ConfigurationError):
            ConvFormerModel.load(path)


class TestVariants:
    def test_build_variant_instantiates_each(self):
        for variant in ("dynamic", "single_filter", "linear_baseline"):
            cfg = tiny_config(variant=variant, kernels=(3, 5, 7) if variant != "linear_baseline" else (3,))
            model = build_variant(cfg, seed=0)
            out = model.forward(np.zeros((1, 3, 5, 2)))
            assert out.shape == (1, 5, 3)

    def test_same_seed_same_init(self):
        a = ConvFormerModel(tiny_config(), seed=3)
        b = ConvFormerModel(tiny_config(), seed=3)
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_different_seed_different_init(self):
        a = ConvFormerModel(tiny_config(), seed=3)
        b = ConvFormerModel(tiny_config(), seed=4)
        assert any(
            not np.array_equal(pa.data, pb.data)
            for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters())
        )
