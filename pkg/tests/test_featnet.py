import numpy as np
import pytest

from silentspeech import featnet
from silentspeech.errors import DataError

TINY = featnet.FeatNetConfig(
    input_shape=(1, 8, 8), conv_kernel=2, conv_filters=(2, 3),
    fc_dims=(8, 6, 4, 6), n_classes=2, batch_size=8, l2_weight=0.01,
    lr=0.05, epochs=30, seed=0)

SMALL = featnet.FeatNetConfig(
    input_shape=(7, 16, 32), conv_kernel=5, conv_filters=(4, 6),
    fc_dims=(32, 16, 8, 16), n_classes=8, batch_size=32, l2_weight=0.001,
    lr=0.02, epochs=10, seed=1)


class TestConfig:
    def test_stage_shapes_full_scale(self):
        cfg = featnet.FeatNetConfig()
        shapes = cfg.stage_shapes()
        assert shapes["conv1"] == (55, 119)
        assert shapes["pool1"] == (27, 59)
        assert shapes["conv2"] == (18, 50)
        assert shapes["pool2"] == (9, 25)
        assert cfg.flat_dim == 128 * 9 * 25
        assert cfg.bottleneck_dim == 128

    def test_too_small_input_rejected(self):
        with pytest.raises(DataError, match="collapses"):
            featnet.FeatNetConfig(input_shape=(7, 16, 32))


class TestInit:
    def test_same_seed_bitwise_identical(self):
        a = featnet.init_params(TINY, seed=3)
        b = featnet.init_params(TINY, seed=3)
        for name in featnet.FeatNetParams.TENSOR_NAMES:
            assert np.array_equal(a[name], b[name])

    def test_different_seeds_differ(self):
        a = featnet.init_params(TINY, seed=3)
        b = featnet.init_params(TINY, seed=4)
        assert not np.array_equal(a["conv1_w"], b["conv1_w"])

    def test_fan_in_scaling_moments(self):
        cfg = featnet.FeatNetConfig(
            input_shape=(7, 16, 32), conv_kernel=5, conv_filters=(4, 6),
            fc_dims=(512, 64, 4, 6), n_classes=2)
        params = featnet.init_params(cfg, seed=5)
        w = params["fc1_w"]  # flat_dim x 256, > 1e4 entries
        assert w.size >= 10_000
        target = np.sqrt(2.0 / w.shape[0])
        assert abs(w.std() - target) / target < 0.2
        assert np.all(params["fc1_b"] == 0)


class TestForward:
    def test_zero_input_zero_bottleneck(self):
        params = featnet.init_params(TINY, seed=0)
        x = np.zeros(TINY.input_shape)
        _, bneck = featnet.forward(params, x, train_mode=False)
        assert np.allclose(bneck, 0.0)

    def test_softmax_sums_to_one(self):
        params = featnet.init_params(TINY, seed=1)
        rng = np.random.default_rng(2)
        logits, _ = featnet.forward(params, rng.standard_normal((5, *TINY.input_shape)))
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs >= 0)

    def test_matches_hand_rolled_reference(self):
        """Independent loop-based forward computation, inference mode."""
        params = featnet.init_params(TINY, seed=6)
        rng = np.random.default_rng(7)
        # non-trivial running moments
        params.tensors["bn_mean"] = rng.standard_normal(TINY.flat_dim) * 0.1
        params.tensors["bn_var"] = rng.uniform(0.5, 2.0, TINY.flat_dim)
        x = rng.standard_normal(TINY.input_shape)
        logits, bneck = featnet.forward(params, x, train_mode=False)

        def conv_ref(inp, w, b):
            f, c, k, _ = w.shape
            h = inp.shape[1] - k + 1
            ww = inp.shape[2] - k + 1
            out = np.zeros((f, h, ww))
            for fi in range(f):
                for i in range(h):
                    for j in range(ww):
                        out[fi, i, j] = np.sum(inp[:, i:i + k, j:j + k] * w[fi]) + b[fi]
            return out

        def pool_ref(inp, p):
            f, h, w = inp.shape
            out = np.zeros((f, h // p, w // p))
            for fi in range(f):
                for i in range(h // p):
                    for j in range(w // p):
                        out[fi, i, j] = inp[fi, i * p:(i + 1) * p, j * p:(j + 1) * p].max()
            return out

        t = params.tensors
        h1 = pool_ref(np.maximum(conv_ref(x, t["conv1_w"], t["conv1_b"]), 0), 2)
        h2 = pool_ref(np.maximum(conv_ref(h1, t["conv2_w"], t["conv2_b"]), 0), 2)
        flat = h2.reshape(-1)
        bn = t["bn_gamma"] * (flat - t["bn_mean"]) / np.sqrt(t["bn_var"] + TINY.bn_eps) \
            + t["bn_beta"]
        h = bn
        for name in ("fc1", "fc2", "fc3", "fc4"):
            h = np.maximum(h @ t[f"{name}_w"] + t[f"{name}_b"], 0)
            if name == "fc3":
                ref_bneck = h.copy()
        ref_logits = h @ t["out_w"] + t["out_b"]
        assert np.max(np.abs(logits - ref_logits)) < 1e-6
        assert np.max(np.abs(bneck - ref_bneck)) < 1e-6

    def test_bn_inference_is_affine(self):
        params = featnet.init_params(TINY, seed=8)
        rng = np.random.default_rng(9)
        params.tensors["bn_mean"] = rng.standard_normal(TINY.flat_dim)
        params.tensors["bn_var"] = rng.uniform(0.5, 2.0, TINY.flat_dim)
        u = rng.standard_normal(TINY.flat_dim)
        v = rng.standard_normal(TINY.flat_dim)

        def bn(z):
            out, _ = featnet._bn_forward(z, params["bn_gamma"], params["bn_beta"],
                                         params["bn_mean"], params["bn_var"],
                                         TINY.bn_eps)
            return out

        lhs = bn(0.3 * u + 0.7 * v)
        rhs = 0.3 * bn(u) + 0.7 * bn(v)  # affine: weights sum to 1
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_shape_mismatch_rejected(self):
        params = featnet.init_params(TINY, seed=0)
        with pytest.raises(DataError):
            featnet.forward(params, np.zeros((1, 9, 9)))


def toy_dataset(cfg, n_per_class, rng, gap=1.0):
    """Linearly separable: class k has channel intensities around k * gap."""
    xs, ys = [], []
    for k in range(cfg.n_classes):
        base = (k - (cfg.n_classes - 1) / 2) * gap
        x = base + 0.1 * rng.standard_normal((n_per_class, *cfg.input_shape))
        xs.append(x)
        ys.append(np.full(n_per_class, k))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(x.shape[0])
    return x[order], y[order]


class TestTraining:
    def test_separable_data_high_accuracy(self):
        rng = np.random.default_rng(10)
        x, y = toy_dataset(TINY, 40, rng)
        params = featnet.init_params(TINY, seed=0)
        best, metrics = featnet.train_sgd(params, x[:60], y[:60], x[60:], y[60:])
        assert max(m["val_acc"] for m in metrics) >= 0.95
        assert featnet.accuracy(best, x[60:], y[60:]) >= 0.95

    def test_lr_zero_no_change(self):
        import dataclasses
        cfg = dataclasses.replace(TINY, lr=0.0, epochs=3)
        rng = np.random.default_rng(11)
        x, y = toy_dataset(cfg, 10, rng)
        params = featnet.init_params(cfg, seed=1)
        before = {n: params[n].copy() for n in featnet.FeatNetParams.TENSOR_NAMES}
        best, _ = featnet.train_sgd(params, x, y, x, y)
        for name in featnet.FeatNetParams.TENSOR_NAMES:
            assert np.array_equal(best[name], before[name])

    def test_selected_epoch_is_argmax(self):
        rng = np.random.default_rng(12)
        x, y = toy_dataset(TINY, 20, rng)
        params = featnet.init_params(TINY, seed=2)
        _, metrics = featnet.train_sgd(params, x[:30], y[:30], x[30:], y[30:],
                                       epochs=8)
        accs = [m["val_acc"] for m in metrics]
        assert metrics[int(np.argmax(accs))]["selected"]

    def test_full_batch_loss_nonincreasing_small_lr(self):
        import dataclasses
        cfg = dataclasses.replace(TINY, lr=1e-4, batch_size=64, l2_weight=0.01)
        rng = np.random.default_rng(13)
        x, y = toy_dataset(cfg, 25, rng)
        x, y = x[:50], y[:50]
        params = featnet.init_params(cfg, seed=3)
        losses = []
        for _ in range(50):
            loss, grads = featnet.loss_and_grads(params, x, y)
            losses.append(loss)
            for name in featnet.FeatNetParams.LEARNABLE_NAMES:
                params.tensors[name] -= cfg.lr * grads[name]
        for a, b in zip(losses, losses[1:]):
            assert b <= a + 1e-9


class TestBottleneck:
    def test_shape_contract(self):
        params = featnet.init_params(SMALL, seed=4)
        frames = np.random.default_rng(14).random((11, 16, 32))
        feats = featnet.extract_bottleneck(params, frames)
        assert feats.shape == (11, SMALL.bottleneck_dim)
        assert np.all(np.isfinite(feats))

    def test_deterministic_extraction(self):
        params = featnet.init_params(SMALL, seed=5)
        frames = np.random.default_rng(15).random((9, 16, 32))
        a = featnet.extract_bottleneck(params, frames)
        b = featnet.extract_bottleneck(params, frames)
        assert np.array_equal(a, b)

    def test_constant_sequence_single_vector(self):
        params = featnet.init_params(SMALL, seed=6)
        frames = np.full((5, 16, 32), 0.7)
        feats = featnet.extract_bottleneck(params, frames)
        for i in range(1, 5):
            assert np.allclose(feats[i], feats[0])

    def test_batch_composition_invariance(self):
        params = featnet.init_params(SMALL, seed=7)
        rng = np.random.default_rng(16)
        frames = rng.random((20, 16, 32))
        full = featnet.extract_bottleneck(params, frames, chunk=20)
        chunked = featnet.extract_bottleneck(params, frames, chunk=3)
        assert np.allclose(full, chunked, atol=1e-12)


class TestGradientCheck:
    def test_correct_backprop_passes(self):
        # batch of 16 keeps batch-norm curvature mild so the central
        # difference at eps=1e-3 stays in its quadratic regime
        params = featnet.init_params(TINY, seed=8)
        rng = np.random.default_rng(21)
        x = rng.standard_normal((16, *TINY.input_shape))
        y = rng.integers(0, TINY.n_classes, 16)
        err = featnet.gradient_check(params, x, y, epsilon=1e-3, n_coords=300, seed=0)
        assert err < 1e-4

    def test_perturbed_gradient_fails(self):
        params = featnet.init_params(TINY, seed=9)
        rng = np.random.default_rng(18)
        x = 0.5 * rng.standard_normal((4, *TINY.input_shape))
        y = rng.integers(0, TINY.n_classes, 4)

        orig = featnet.loss_and_grads

        def tampered(p, xx, yy, update_running=False):
            loss, grads = orig(p, xx, yy, update_running=update_running)
            grads["fc2_w"] = grads["fc2_w"] * 1.01
            return loss, grads

        featnet.loss_and_grads = tampered
        try:
            err = featnet.gradient_check(params, x, y, epsilon=1e-3,
                                         n_coords=2000, seed=0)
        finally:
            featnet.loss_and_grads = orig
        assert err > 1e-4

    def test_loss_deterministic_at_same_point(self):
        params = featnet.init_params(TINY, seed=10)
        rng = np.random.default_rng(19)
        x = rng.standard_normal((3, *TINY.input_shape))
        y = rng.integers(0, 2, 3)
        l1, _ = featnet.loss_and_grads(params, x, y)
        l2, _ = featnet.loss_and_grads(params, x, y)
        assert l1 == l2


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = featnet.init_params(SMALL, seed=11)
        featnet.save_params(params, tmp_path / "net.ckpt")
        back = featnet.load_params(tmp_path / "net.ckpt")
        assert back.config == SMALL
        for name in featnet.FeatNetParams.TENSOR_NAMES:
            assert np.allclose(back[name], params[name], atol=1e-6)

    def test_checkpoint_drives_identical_inference(self, tmp_path):
        params = featnet.init_params(SMALL, seed=12)
        featnet.save_params(params, tmp_path / "net.ckpt")
        back = featnet.load_params(tmp_path / "net.ckpt")
        frames = np.random.default_rng(20).random((6, 16, 32)).astype(np.float32)
        a = featnet.extract_bottleneck(params, frames)
        b = featnet.extract_bottleneck(back, frames)
        assert np.max(np.abs(a - b)) < 1e-4

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "junk.ckpt").write_bytes(b"JUNKxxxx")
        with pytest.raises(DataError):
            featnet.load_params(tmp_path / "junk.ckpt")
