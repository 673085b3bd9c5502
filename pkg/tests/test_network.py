import numpy as np
import pytest

from sleepevents.models.configs import LossConfig, NetConfig
from sleepevents.models.models import Event
from sleepevents.services import layers
from sleepevents.services.geometry import build_grid
from sleepevents.services.loss import compute_loss, loss_gradients
from sleepevents.services.network import (
    backward,
    forward,
    init_model,
    load_checkpoint,
    predict_window,
    predict_windows,
    save_checkpoint,
)
from sleepevents.utils.errors import InvalidConfig, MalformedHeader, ShapeMismatch, StaleCache, TruncatedPayload

from conftest import forced_model


def relative_error(a, b, floor=1e-6):
    # floor for tensors whose exact gradient is zero
    denominator = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / denominator


def numeric_gradients(model, objective, h=1e-5):
    grads = {}
    for name, param in model.params.items():
        grad = np.zeros_like(param)
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + h
            plus = objective()
            param[index] = original - h
            minus = objective()
            param[index] = original
            grad[index] = (plus - minus) / (2 * h)
        grads[name] = grad
    return grads


class TestInit:
    def test_deterministic(self, tiny_net_cfg):
        a = init_model(tiny_net_cfg, seed=1)
        b = init_model(tiny_net_cfg, seed=1)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_invalid(self):
        with pytest.raises(InvalidConfig):
            init_model(NetConfig(n_channels=1, n_times=5000, n_blocks=8, n_labels=1, n_defaults=80))

    def test_parameter_layout(self):
        cfg = NetConfig(n_channels=3, n_times=32, n_blocks=2, n_labels=2, n_defaults=5)
        model = init_model(cfg, seed=0)
        assert model.params["spatial.weight"].shape == (3, 3)
        assert model.params["block1.conv.weight"].shape == (8, 1, 1, 3)
        assert model.params["block2.conv.weight"].shape == (16, 8, 1, 3)
        assert model.params["loc_head.weight"].shape == (10, 16, 3, 8)
        assert model.params["cls_head.weight"].shape == (15, 16, 3, 8)
        np.testing.assert_array_equal(model.buffers["block2.bn.running_var"], np.ones(16))
        np.testing.assert_array_equal(model.params["block1.conv.bias"], np.zeros(8))
        assert np.abs(model.params["spatial.weight"] - np.eye(3)).max() < 0.1

    def test_single_channel_has_no_spatial_filter(self, tiny_net_cfg):
        assert "spatial.weight" not in init_model(tiny_net_cfg).params


class TestForward:
    def test_reference_shapes(self):
        cfg = NetConfig(n_channels=1, n_times=5120, n_blocks=8, n_labels=1, n_defaults=80)
        model = init_model(cfg, seed=0)
        batch = np.random.default_rng(0).normal(size=(2, 1, 5120)).astype(np.float32)
        output, cache = forward(model, batch, mode="eval")
        assert cache.features.shape == (2, 1024, 1, 20)
        assert output.loc.shape == (2, 80, 2)
        assert output.probs.shape == (2, 80, 2)

    def test_zero_heads_give_uniform_probs(self, tiny_net_cfg):
        model = init_model(tiny_net_cfg, seed=0)
        model.params["cls_head.weight"][:] = 0.0
        output, _ = forward(model, np.zeros((1, 1, 8)), mode="eval")
        np.testing.assert_allclose(output.probs, 0.5, atol=1e-7)

    def test_probability_rows(self):
        cfg = NetConfig(n_channels=2, n_times=16, n_blocks=2, n_labels=3, n_defaults=4)
        model = init_model(cfg, seed=4)
        batch = np.random.default_rng(1).normal(size=(5, 2, 16))
        output, _ = forward(model, batch, mode="train")
        np.testing.assert_allclose(output.probs.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(output.probs > 0)

    def test_eval_is_pure(self, tiny_model64):
        batch = np.random.default_rng(2).normal(size=(3, 1, 8))
        buffers = {k: v.copy() for k, v in tiny_model64.buffers.items()}
        first, _ = forward(tiny_model64, batch, mode="eval")
        second, _ = forward(tiny_model64, batch, mode="eval")
        np.testing.assert_array_equal(first.loc, second.loc)
        for name, value in buffers.items():
            np.testing.assert_array_equal(tiny_model64.buffers[name], value)

    def test_train_updates_running_stats(self, tiny_model64):
        batch = np.random.default_rng(2).normal(3.0, 1.0, size=(4, 1, 8))
        forward(tiny_model64, batch, mode="train")
        assert not np.allclose(tiny_model64.buffers["block1.bn.running_mean"], 0.0)

    def test_shape_mismatch(self, tiny_model64):
        with pytest.raises(ShapeMismatch):
            forward(tiny_model64, np.zeros((1, 1, 16)))


class TestLayers:
    def test_maxpool_routes_to_first_on_ties(self):
        x = np.array([[[[1.0, 1.0, 0.0, 2.0]]]])
        out, cache = layers.maxpool_forward(x)
        np.testing.assert_array_equal(out, [[[[1.0, 2.0]]]])
        dx = layers.maxpool_backward(np.ones_like(out), cache)
        np.testing.assert_array_equal(dx, [[[[1.0, 0.0, 0.0, 1.0]]]])

    @pytest.mark.parametrize("mode", ["train", "eval"])
    def test_batchnorm_gradient(self, mode):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 2, 2, 4))
        gamma, beta = rng.normal(size=2), rng.normal(size=2)
        rm, rv = rng.normal(size=2), rng.uniform(0.5, 2.0, size=2)
        upstream = rng.normal(size=x.shape)

        def objective(value):
            out, _, _, _ = layers.batchnorm_forward(value, gamma, beta, rm, rv, mode, 1e-5, 0.1)
            return np.sum(out * upstream)

        _, cache, _, _ = layers.batchnorm_forward(x, gamma, beta, rm, rv, mode, 1e-5, 0.1)
        dx, _, _ = layers.batchnorm_backward(upstream, cache)
        numeric = np.zeros_like(x)
        for index in np.ndindex(x.shape):
            shifted = x.copy()
            shifted[index] += 1e-5
            plus = objective(shifted)
            shifted[index] -= 2e-5
            numeric[index] = (plus - objective(shifted)) / 2e-5
        assert relative_error(dx, numeric) < 1e-6


class TestBackward:
    def test_gradient_check_linear_objective(self):
        cfg = NetConfig(n_channels=2, n_times=8, n_blocks=2, n_labels=2, n_defaults=3)
        model = init_model(cfg, seed=7, dtype=np.float64)
        rng = np.random.default_rng(8)
        batch = rng.normal(size=(3, 2, 8))
        a = rng.normal(size=(3, 3, 2))
        b = rng.normal(size=(3, 3, 3))

        def objective():
            output, _ = forward(model, batch, mode="train")
            return np.sum(a * output.loc) + np.sum(b * output.probs)

        _, cache = forward(model, batch, mode="train")
        grads = backward(model, cache, a, b, input_grad=True)
        numeric = numeric_gradients(model, objective)
        for name in model.params:
            assert relative_error(grads.params[name], numeric[name]) < 1e-4, name

        numeric_input = np.zeros_like(batch)
        for index in np.ndindex(batch.shape):
            original = batch[index]
            batch[index] = original + 1e-5
            plus = objective()
            batch[index] = original - 1e-5
            minus = objective()
            batch[index] = original
            numeric_input[index] = (plus - minus) / 2e-5
        assert relative_error(grads.input, numeric_input) < 1e-4

    def test_gradient_check_full_loss(self, tiny_model64, tiny_grid):
        model = tiny_model64
        rng = np.random.default_rng(9)
        batch = rng.normal(size=(1, 1, 8))
        truths = [Event(center=0.7, duration=0.8, label=1)]
        cfg = LossConfig()

        output, cache = forward(model, batch, mode="train")
        breakdown = compute_loss(output.sample(0), tiny_grid, truths, cfg)
        d_loc, d_probs = loss_gradients(output.sample(0), tiny_grid, truths, cfg, breakdown)
        grads = backward(model, cache, d_loc[None], d_probs[None])

        def objective():
            out, _ = forward(model, batch, mode="train")
            return compute_loss(out.sample(0), tiny_grid, truths, cfg, negatives=breakdown.negatives).total

        numeric = numeric_gradients(model, objective)
        for name in model.params:
            assert relative_error(grads.params[name], numeric[name]) < 1e-4, name

    def test_conv_bias_gradient_vanishes_under_batch_statistics(self):
        cfg = NetConfig(n_channels=2, n_times=8, n_blocks=2, n_labels=2, n_defaults=3)
        model = init_model(cfg, seed=7, dtype=np.float64)
        rng = np.random.default_rng(8)
        batch = rng.normal(size=(3, 2, 8))
        output, cache = forward(model, batch, mode="train")
        grads = backward(model, cache, rng.normal(size=output.loc.shape), rng.normal(size=output.probs.shape))
        for k in (1, 2):
            assert np.abs(grads.params[f"block{k}.conv.bias"]).max() < 1e-10

    def test_zero_upstream(self, tiny_model64):
        batch = np.random.default_rng(1).normal(size=(2, 1, 8))
        output, cache = forward(tiny_model64, batch)
        grads = backward(tiny_model64, cache, np.zeros_like(output.loc), np.zeros_like(output.probs))
        for grad in grads.params.values():
            assert not grad.any()

    def test_duplicated_sample_doubles_contribution(self, tiny_model64):
        rng = np.random.default_rng(6)
        x0, x1 = rng.normal(size=(2, 1, 8))
        g_loc = rng.normal(size=(2, 2, 2))
        g_probs = rng.normal(size=(2, 2, 2))

        _, cache = forward(tiny_model64, np.stack([x0, x0, x1]), mode="eval")
        duplicated = backward(
            tiny_model64, cache, np.stack([g_loc[0], g_loc[0], g_loc[1]]), np.stack([g_probs[0], g_probs[0], g_probs[1]])
        )
        _, cache = forward(tiny_model64, np.stack([x0, x1]), mode="eval")
        doubled = backward(
            tiny_model64, cache, np.stack([2 * g_loc[0], g_loc[1]]), np.stack([2 * g_probs[0], g_probs[1]])
        )
        for name in tiny_model64.params:
            np.testing.assert_allclose(duplicated.params[name], doubled.params[name], rtol=1e-10, atol=1e-12)

    def test_stale_cache(self, tiny_model64):
        output, cache = forward(tiny_model64, np.zeros((1, 1, 8)) + np.arange(8))
        tiny_model64.bump_version()
        with pytest.raises(StaleCache):
            backward(tiny_model64, cache, np.zeros_like(output.loc), np.zeros_like(output.probs))

    def test_cache_of_other_model(self, tiny_model64):
        output, cache = forward(tiny_model64, np.zeros((1, 1, 8)) + np.arange(8))
        with pytest.raises(StaleCache):
            backward(tiny_model64.copy(), cache, np.zeros_like(output.loc), np.zeros_like(output.probs))


class TestPredict:
    def test_forced_output(self, tiny_net_cfg, tiny_grid):
        model = forced_model(tiny_net_cfg, positive_default=1)
        [(label, probability, interval)] = predict_window(model, np.zeros((1, 8)), tiny_grid)
        assert label == 1
        assert probability == pytest.approx(0.9)
        assert interval == pytest.approx((1.0, 2.0))

    def test_background_everywhere(self, tiny_net_cfg, tiny_grid):
        model = forced_model(tiny_net_cfg, positive_default=-1)
        assert predict_window(model, np.zeros((1, 8)), tiny_grid) == []

    def test_cardinality(self, tiny_model64, tiny_grid):
        windows = np.random.default_rng(0).normal(size=(5, 1, 8))
        results = predict_windows(tiny_model64, windows, tiny_grid, batch_size=2)
        assert len(results) == 5
        assert all(len(candidates) <= tiny_grid.n_defaults for candidates in results)

    def test_grid_mismatch(self, tiny_model64):
        with pytest.raises(ShapeMismatch):
            predict_window(tiny_model64, np.zeros((1, 8)), build_grid(2.0, 0.5, 0.0))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = NetConfig(n_channels=2, n_times=16, n_blocks=2, n_labels=2, n_defaults=4)
        model = init_model(cfg, seed=5)
        forward(model, np.random.default_rng(0).normal(size=(3, 2, 16)), mode="train")
        loaded = load_checkpoint(save_checkpoint(tmp_path / "m.dsm", model))
        assert loaded.cfg == cfg
        assert list(loaded.params) == list(model.params)
        for name in model.params:
            np.testing.assert_array_equal(loaded.params[name], model.params[name])
        for name in model.buffers:
            np.testing.assert_array_equal(loaded.buffers[name], model.buffers[name])

    def test_bad_magic(self, tmp_path, tiny_net_cfg):
        path = save_checkpoint(tmp_path / "m.dsm", init_model(tiny_net_cfg))
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(MalformedHeader):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, tiny_net_cfg):
        path = save_checkpoint(tmp_path / "m.dsm", init_model(tiny_net_cfg))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(TruncatedPayload):
            load_checkpoint(path)
