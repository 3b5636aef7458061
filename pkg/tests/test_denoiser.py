import numpy as np
import pytest

from d4d import autodiff as ad
from d4d.autodiff import Tensor, grad_check, reduce_loss
from d4d.denoiser import DenoiserNet, embed_times, time_embedding
from d4d.diffusion import DiffusionConfig, TrainState, train_step
from d4d.errors import ParameterError, ShapeError
from d4d.rng import substream
from d4d.schedules import linear_schedule


class TestTimeEmbedding:
    def test_t_zero_alternates(self):
        emb = time_embedding(0, dim=8, T=10)
        assert np.array_equal(emb, [0, 1, 0, 1, 0, 1, 0, 1])

    def test_norm_bounded(self):
        for t in (1, 5, 500, 1000):
            emb = time_embedding(t, dim=32, T=1000)
            assert np.linalg.norm(emb) <= np.sqrt(32) + 1e-12

    def test_no_collisions_full_range(self):
        embs = embed_times(np.arange(1, 1001), dim=32, T=1000)
        # all pairwise distinct: sort rows and compare neighbours
        order = np.lexsort(embs.T)
        sorted_embs = embs[order]
        neighbour_equal = np.all(sorted_embs[1:] == sorted_embs[:-1], axis=1)
        assert not neighbour_equal.any()

    def test_odd_dim_rejected(self):
        with pytest.raises(ParameterError):
            time_embedding(1, dim=7, T=10)

    def test_frequency_definition(self):
        dim = 8
        emb = time_embedding(3, dim=dim, T=100)
        for k in range(dim // 2):
            omega = 10000.0 ** (-2.0 * k / dim)
            assert emb[2 * k] == pytest.approx(np.sin(3 * omega), abs=1e-15)
            assert emb[2 * k + 1] == pytest.approx(np.cos(3 * omega), abs=1e-15)


class TestDenoiserNet:
    def test_zero_init_head_gives_zero_output(self):
        net = DenoiserNet(T=100, rng=substream(1, "init"))
        x = np.random.default_rng(0).random((2, 4, 16, 12)).astype(np.float32)
        out = net.forward(x, np.array([1, 50]))
        assert np.all(out.data == 0.0)

    def test_shape_preserved(self):
        net = DenoiserNet(T=100)
        out = net.forward(np.zeros((2, 4, 16, 12), dtype=np.float32), np.array([1, 2]))
        assert out.shape == (2, 4, 16, 12)

    def test_indivisible_spatial_size_rejected(self):
        net = DenoiserNet(T=100)
        with pytest.raises(ShapeError):
            net.forward(np.zeros((1, 4, 14, 12), dtype=np.float32), np.array([1]))

    def test_wrong_channel_count_rejected(self):
        net = DenoiserNet(T=100)
        with pytest.raises(ShapeError):
            net.forward(np.zeros((1, 3, 16, 12), dtype=np.float32), np.array([1]))

    def test_time_conditioning_is_live_after_training(self):
        # one optimizer step makes the head nonzero; then t must matter
        cfg = DiffusionConfig("l2", "linear", T=50, width=16, height=12, seed=0)
        sched = linear_schedule(T=50)
        net = DenoiserNet(T=50, rng=substream(3, "init"))
        state = TrainState(net=net)
        rng = substream(3, "train")
        batch = substream(3, "data").random((4, 4, 12, 16)).astype(np.float32)
        train_step(state, cfg, sched, batch, rng)
        x = substream(4, "probe").random((1, 4, 12, 16)).astype(np.float32)
        out_a = net.forward(x, np.array([1]))
        out_b = net.forward(x, np.array([50]))
        assert np.abs(out_a.data - out_b.data).max() > 0.0

    def test_deterministic_forward(self):
        net = DenoiserNet(T=100, rng=substream(5, "init"))
        x = substream(6, "x").random((2, 4, 16, 12)).astype(np.float32)
        a = net.forward(x, np.array([3, 7])).data
        b = net.forward(x, np.array([3, 7])).data
        assert np.array_equal(a, b)

    def test_parameter_budget(self):
        assert DenoiserNet().parameter_count() <= 500_000

    def test_param_vector_round_trip(self):
        net = DenoiserNet(T=100, rng=substream(7, "init"))
        vec = net.param_vector()
        net2 = DenoiserNet(T=100, rng=substream(8, "other-init"))
        net2.load_param_vector(vec)
        assert np.array_equal(net2.param_vector(), vec)
        with pytest.raises(ShapeError):
            net2.load_param_vector(vec[:-1])


class TestDenoiserGradients:
    def test_end_to_end_grad_check(self):
        """Full net at 16x12, float64: input gradient via finite differences."""
        net = DenoiserNet(T=20, widths=(4, 6, 8), time_dim=8, time_hidden=8, dtype=np.float64, rng=substream(9, "init"))
        # nonzero head so the loss actually depends on the input
        rng = np.random.default_rng(10)
        net.params["head.w"].data[...] = rng.standard_normal(net.params["head.w"].shape) * 0.1
        x = Tensor(rng.random((1, 4, 12, 16)), requires_grad=True)
        target = Tensor(rng.standard_normal((1, 4, 12, 16)))
        ts = np.array([7])

        def f(t):
            return reduce_loss("l2", net.forward(t, ts), target)

        assert grad_check(f, x, eps=1e-5) <= 1e-4

    def test_parameter_grad_check(self):
        net = DenoiserNet(T=20, widths=(4, 6, 8), time_dim=8, time_hidden=8, dtype=np.float64, rng=substream(11, "init"))
        rng = np.random.default_rng(12)
        net.params["head.w"].data[...] = rng.standard_normal(net.params["head.w"].shape) * 0.1
        x = Tensor(rng.random((1, 4, 12, 16)))
        target = Tensor(rng.standard_normal((1, 4, 12, 16)))
        ts = np.array([3])

        for name in ("head.b", "time.mid.b", "enc1a.b"):
            param = net.params[name]

            def f(_):
                return reduce_loss("l2", net.forward(x, ts), target)

            assert grad_check(f, param, eps=1e-5) <= 1e-4, name
