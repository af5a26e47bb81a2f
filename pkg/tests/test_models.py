import numpy as np
import pytest

from elrlab.autodiff import Tensor, backward, no_grad, relu, tsum
from elrlab.exceptions import ConfigError, DimensionError
from elrlab.models import (
    Model,
    ModelConfig,
    ResidualBlock,
    build_model,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)


def small_resnet_config(**kw):
    base = dict(
        kind="resnet",
        block_counts=[1, 1, 1, 1],
        base_channels=4,
        num_classes=10,
        input_shape=(3, 8, 8),
    )
    base.update(kw)
    return ModelConfig(**base)


def _block_names(model):
    return {name.split(".conv1")[0] for name in model.params if ".conv1." in name}


class TestBuildModel:
    def test_resnet18_topology_has_8_blocks(self):
        m = build_model(small_resnet_config(block_counts=[2, 2, 2, 2]), seed=0)
        assert len(_block_names(m)) == 8

    def test_resnet34_topology_has_16_blocks(self):
        m = build_model(small_resnet_config(block_counts=[3, 4, 6, 3]), seed=0)
        assert len(_block_names(m)) == 16

    def test_same_seed_bit_identical(self):
        a = build_model(small_resnet_config(), seed=42)
        b = build_model(small_resnet_config(), seed=42)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_different_seed_differs(self):
        a = build_model(small_resnet_config(), seed=1)
        b = build_model(small_resnet_config(), seed=2)
        assert any(not np.array_equal(a.params[n].data, b.params[n].data) for n in a.params)

    def test_invalid_block_counts_rejected(self):
        with pytest.raises(ConfigError):
            build_model(small_resnet_config(block_counts=[1, 1, 1]), seed=0)
        with pytest.raises(ConfigError):
            build_model(small_resnet_config(num_classes=1), seed=0)


class TestForward:
    def test_63_class_output_shape(self):
        # 32x32 input keeps N*H*W >= 2 per channel for train-mode BN at N=1
        m = build_model(small_resnet_config(num_classes=63, input_shape=(3, 32, 32)), seed=0)
        out = m(Tensor(np.random.default_rng(0).random((1, 3, 32, 32))))
        assert out.shape == (1, 63)

    def test_eval_mode_deterministic(self):
        m = build_model(small_resnet_config(), seed=0)
        rng = np.random.default_rng(1)
        x = Tensor(rng.random((2, 3, 8, 8)))
        m.train()
        with no_grad():
            m(x)  # initialize BN running stats
            m.eval()
            a = m(x).data
            b = m(x).data
        assert np.array_equal(a, b)

    def test_per_sample_logits_independent_of_batch(self):
        m = build_model(small_resnet_config(), seed=0)
        rng = np.random.default_rng(2)
        x = rng.random((4, 3, 8, 8))
        m.train()
        with no_grad():
            m(Tensor(x))
            m.eval()
            full = m(Tensor(x)).data
            solo = m(Tensor(x[1:2])).data
        assert np.allclose(full[1], solo[0], atol=1e-12)

    def test_zero_head_gives_uniform_softmax(self):
        from elrlab.autodiff import softmax

        m = build_model(small_resnet_config(), seed=0)
        m.params["head.weight"].data[:] = 0.0
        m.params["head.bias"].data[:] = 0.0
        m.train()
        with no_grad():
            logits = m(Tensor(np.random.default_rng(0).random((2, 3, 8, 8))))
            assert np.allclose(logits.data, 0.0)
            assert np.allclose(softmax(logits).data, 0.1, atol=1e-15)

    def test_shape_mismatch_rejected(self):
        m = build_model(small_resnet_config(), seed=0)
        with pytest.raises(DimensionError):
            m(Tensor(np.zeros((1, 3, 16, 16))))


class TestCountParameters:
    def test_single_dense_layer(self):
        cfg = ModelConfig(kind="mlp", mlp_hidden=[], num_classes=5, input_shape=(1, 2, 5))
        m = build_model(cfg, seed=0)
        assert count_parameters(m) == 10 * 5 + 5

    def test_small_mlp(self):
        cfg = ModelConfig(kind="mlp", mlp_hidden=[3], num_classes=2, input_shape=(1, 2, 2))
        m = build_model(cfg, seed=0)
        assert count_parameters(m) == (4 * 3 + 3) + (3 * 2 + 2)

    def test_resnet18_against_layer_tally(self):
        # independent per-layer tally for block_counts [2,2,2,2], base 64,
        # 10 classes, CIFAR stem, projection = plain 1x1 conv
        def conv(cin, cout, k):
            return cout * cin * k * k

        def bn(c):
            return 2 * c

        def block(cin, cout, proj):
            total = conv(cin, cout, 3) + bn(cout) + conv(cout, cout, 3) + bn(cout)
            if proj:
                total += conv(cin, cout, 1)
            return total

        expected = conv(3, 64, 3) + bn(64)  # stem
        channels = [64, 128, 256, 512]
        cin = 64
        for stage, cout in enumerate(channels):
            for b in range(2):
                proj = b == 0 and (stage > 0)
                expected += block(cin, cout, proj)
                cin = cout
        expected += 512 * 10 + 10  # head

        cfg = ModelConfig(
            kind="resnet",
            block_counts=[2, 2, 2, 2],
            base_channels=64,
            num_classes=10,
            input_shape=(3, 32, 32),
        )
        m = build_model(cfg, seed=0)
        assert count_parameters(m) == expected


class TestResidualProperties:
    def test_zeroed_branch_is_relu_identity(self):
        rng = np.random.default_rng(3)
        block = ResidualBlock(rng, "b", in_ch=4, out_ch=4, stride=1)
        assert block.proj is None
        block.conv1.weight.data[:] = 0.0
        block.conv2.weight.data[:] = 0.0
        x = Tensor(rng.standard_normal((2, 4, 6, 6)))
        out = block(x, "train")
        assert np.allclose(out.data, np.maximum(x.data, 0.0), atol=1e-12)

    def test_projection_present_when_shape_changes(self):
        rng = np.random.default_rng(4)
        assert ResidualBlock(rng, "b", 4, 8, stride=2).proj is not None
        assert ResidualBlock(rng, "b", 4, 4, stride=1).proj is None

    def test_gradients_reach_every_parameter(self):
        m = build_model(small_resnet_config(), seed=0)
        m.train()
        x = Tensor(np.random.default_rng(5).random((2, 3, 8, 8)))
        backward(tsum(relu(m(x))))
        for name, p in m.params.items():
            assert p.grad is not None, f"no gradient for {name}"


class TestCheckpoint:
    def test_round_trip_value_exact(self, tmp_path):
        m = build_model(small_resnet_config(), seed=9)
        rng = np.random.default_rng(6)
        x = rng.random((2, 3, 8, 8))
        m.train()
        with no_grad():
            m(Tensor(x))  # populate BN running stats

        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, m, extra_arrays={"targets/values": np.ones((3, 2))})
        loaded, extra = load_checkpoint(path)

        for name in m.params:
            assert np.array_equal(loaded.params[name].data, m.params[name].data)
        loaded.eval()
        m.eval()
        with no_grad():
            assert np.array_equal(loaded(Tensor(x)).data, m(Tensor(x)).data)
        assert np.array_equal(extra["targets/values"], np.ones((3, 2)))

    def test_config_round_trip(self, tmp_path):
        cfg = small_resnet_config(num_classes=7)
        m = build_model(cfg, seed=0)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, m)
        loaded, _ = load_checkpoint(path)
        assert loaded.config.to_dict() == cfg.to_dict()
