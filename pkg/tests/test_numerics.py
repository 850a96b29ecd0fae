import numpy as np
import pytest

from kga2c import numerics as nm
from gradcheck import finite_difference_check


def rand(rng, *shape):
    return nm.Tensor(rng.normal(size=shape), requires_grad=True)


class TestCoreOps:
    @pytest.mark.parametrize("seed", range(5))
    def test_elementwise_and_linear(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 4)
        W = rand(rng, 4, 3)
        b = rand(rng, 3)
        y = rand(rng, 3)

        def f():
            h = nm.tanh(nm.add(nm.matmul(x, W), b))
            return nm.sum_(nm.mul(nm.sigmoid(h), y))

        finite_difference_check(f, [x, W, b, y])

    @pytest.mark.parametrize("seed", range(3))
    def test_matmul_shapes(self, seed):
        rng = np.random.default_rng(seed)
        A = rand(rng, 3, 4)
        B = rand(rng, 4, 2)
        v = rand(rng, 3)
        u = rand(rng, 4)

        def f():
            m = nm.matmul(A, B)  # (3,2)
            lhs = nm.matmul(v, m)  # (2,)
            return nm.sum_(lhs) + nm.matmul(nm.matmul(A, u), v)

        finite_difference_check(f, [A, B, v, u])

    def test_matmul_shape_mismatch_message(self):
        a = nm.Tensor(np.zeros((2, 3)))
        b = nm.Tensor(np.zeros((2, 3)))
        with pytest.raises(nm.ShapeError) as err:
            nm.matmul(a, b)
        assert "(2, 3)" in str(err.value)

    def test_leaky_relu_definition(self):
        x = nm.Tensor(np.array([-1.0, 0.5]))
        y = nm.leaky_relu(x, 0.2)
        assert y.data[0] == pytest.approx(-0.2)
        assert y.data[1] == pytest.approx(0.5)

    @pytest.mark.parametrize("seed", range(3))
    def test_leaky_relu_grad(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 6)
        y = rand(rng, 6)
        finite_difference_check(
            lambda: nm.sum_(nm.mul(nm.leaky_relu(x, 0.2), y)), [x, y]
        )

    def test_softmax_uniform_on_equal_logits(self):
        x = nm.Tensor(np.full(4, 1.7))
        assert np.allclose(nm.softmax(x).data, 0.25)

    @pytest.mark.parametrize("seed", range(4))
    def test_softmax_grad(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 5)
        y = rand(rng, 5)
        finite_difference_check(lambda: nm.sum_(nm.mul(nm.softmax(x), y)), [x, y])

    def test_masked_softmax_exact_zeros_and_renormalization(self):
        rng = np.random.default_rng(0)
        x = nm.Tensor(rng.normal(size=8))
        mask = np.array([True, False, True, False, True, True, False, True])
        y = nm.softmax(x, mask=mask)
        assert np.all(y.data[~mask] == 0.0)
        assert abs(y.data.sum() - 1.0) <= 1e-12

    @pytest.mark.parametrize("seed", range(3))
    def test_masked_softmax_grad(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 6)
        y = rand(rng, 6)
        mask = np.array([True, True, False, True, False, True])
        finite_difference_check(
            lambda: nm.sum_(nm.mul(nm.softmax(x, mask=mask), y)), [x, y]
        )

    def test_fully_masked_softmax_rejected(self):
        with pytest.raises(nm.ShapeError):
            nm.softmax(nm.Tensor(np.zeros(3)), mask=np.zeros(3, dtype=bool))

    @pytest.mark.parametrize("seed", range(3))
    def test_losses(self, seed):
        rng = np.random.default_rng(seed)
        x = rand(rng, 5)
        targets = (rng.random(5) > 0.5).astype(float)

        finite_difference_check(lambda: nm.binary_cross_entropy(x, targets), [x])
        finite_difference_check(lambda: nm.cross_entropy_with_logits(x, 3), [x])

    @pytest.mark.parametrize("seed", range(3))
    def test_gather_pick_row_slice_embedding(self, seed):
        rng = np.random.default_rng(seed)
        T = rand(rng, 5, 3)
        v = rand(rng, 6)

        def f():
            e = nm.embedding(T, [0, 4, 4])
            a = nm.mean(e, axis=0)
            b = nm.row(e, 1)
            s = nm.slice1d(v, 1, 4)
            return (
                nm.pick(nm.mul(a, b), 2)
                + nm.sum_(nm.gather(v, [0, 5, 5]))
                + nm.sum_(nm.mul(s, a))
            )

        finite_difference_check(f, [T, v])

    @pytest.mark.parametrize("seed", range(3))
    def test_concat_stack_vector_mean(self, seed):
        rng = np.random.default_rng(seed)
        a = rand(rng, 3)
        b = rand(rng, 3)
        c = rand(rng, 2)

        def f():
            m = nm.stack0([a, b, nm.mul(a, b)])
            pooled = nm.mean(m, axis=0)
            flat = nm.concat([pooled, c])
            scalars = nm.vector([nm.sum_(a), nm.mean(c), nm.pick(flat, 0)])
            return nm.sum_(nm.mul(flat, flat)) + nm.sum_(scalars)

        finite_difference_check(f, [a, b, c])

    def test_broadcast_add_row_vector(self):
        rng = np.random.default_rng(1)
        M = rand(rng, 3, 4)
        b = rand(rng, 4)
        finite_difference_check(lambda: nm.sum_(nm.add(M, b)), [M, b])


class TestGRU:
    def test_zero_params_halve_hidden(self):
        rng = np.random.default_rng(0)
        x = nm.Tensor(rng.normal(size=4))
        h = nm.Tensor(rng.normal(size=3))
        zeros = {
            name: nm.Tensor(
                np.zeros((4, 3) if name.startswith("W") else (3, 3) if name.startswith("U") else (3,))
            )
            for name in ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wn", "Un", "bn")
        }
        out = nm.gru_cell(x, h, nm.GRUParams(**zeros))
        assert np.allclose(out.data, 0.5 * h.data)

    @pytest.mark.parametrize("seed", range(4))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        params = nm.ParameterSet(seed)
        gp = params.gru("g", 4, 3)
        x = rand(rng, 4)
        h = rand(rng, 3)
        y = nm.Tensor(rng.normal(size=3))

        def f():
            h1 = nm.gru_cell(x, h, gp)
            h2 = nm.gru_cell(x, h1, gp)
            return nm.sum_(nm.mul(h2, y))

        finite_difference_check(f, [x, h] + [params[n] for n in params.names()])

    def test_empty_sequence_returns_h0(self):
        params = nm.ParameterSet(0)
        gp = params.gru("g", 4, 3)
        h0 = nm.Tensor(np.array([1.0, -2.0, 3.0]))
        assert nm.gru_sequence([], h0, gp) is h0

    def test_shape_mismatch_rejected(self):
        params = nm.ParameterSet(0)
        gp = params.gru("g", 4, 3)
        with pytest.raises(nm.ShapeError):
            nm.gru_cell(nm.Tensor(np.zeros(5)), nm.Tensor(np.zeros(3)), gp)


class TestBackward:
    def test_linear_grad_is_input(self):
        rng = np.random.default_rng(0)
        w = rand(rng, 5)
        x = nm.Tensor(rng.normal(size=5))
        nm.backward(nm.sum_(nm.mul(w, x)))
        assert np.allclose(w.grad, x.data)

    def test_accumulation_doubles_without_zeroing(self):
        rng = np.random.default_rng(1)
        w = rand(rng, 4)
        x = nm.Tensor(rng.normal(size=4))
        loss = nm.sum_(nm.mul(w, x))
        nm.backward(loss)
        first = w.grad.copy()
        nm.backward(loss)
        assert np.array_equal(w.grad, 2 * first)

    def test_non_scalar_loss_rejected(self):
        w = nm.Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(nm.ShapeError):
            nm.backward(nm.mul(w, w))

    def test_bitwise_repeatable(self):
        rng = np.random.default_rng(2)
        w = rand(rng, 6)
        x = nm.Tensor(rng.normal(size=6))

        def grad_once():
            w.zero_grad()
            loss = nm.sum_(nm.mul(nm.tanh(w), x))
            nm.backward(loss)
            return w.grad.copy()

        g1, g2 = grad_once(), grad_once()
        assert np.array_equal(g1, g2)

    def test_diamond_graph_accumulates_once_per_path(self):
        w = nm.Tensor(np.array(2.0), requires_grad=True)
        y = nm.mul(w, w)  # dy/dw = 2w = 4
        z = nm.add(y, y)  # dz/dw = 8
        nm.backward(z)
        assert w.grad == pytest.approx(8.0)


class TestAdam:
    def test_quadratic_converges_like_reference(self):
        # independent scalar Adam simulation
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        w_ref, m, v = 1.0, 0.0, 0.0
        trajectory = []
        for t in range(1, 201):
            g = 2 * w_ref
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            w_ref -= lr * m_hat / (np.sqrt(v_hat) + eps)
            trajectory.append(w_ref)

        params = nm.ParameterSet(0)
        w = params.add("w", (), "bias")
        w.data = np.asarray(1.0)
        ours = []
        for _ in range(200):
            params.zero_grad()
            nm.backward(nm.mul(w, w))
            nm.adam_step(params, lr=lr, betas=(b1, b2), eps=eps)
            ours.append(w.item())
        assert np.allclose(ours, trajectory, atol=1e-12)
        assert abs(w.item()) < 1e-2

    def test_grad_clip_scales_before_update(self):
        params = nm.ParameterSet(0)
        w = params.add("w", (2,), "bias")
        w.grad = np.array([3.0, 4.0])  # norm 5
        norm = nm.adam_step(params, lr=0.0, grad_clip=1.0)
        assert norm == pytest.approx(5.0)


class TestParameterSet:
    def test_initialization_bounds_and_bias_zero(self):
        params = nm.ParameterSet(3)
        W = params.add("W", (9, 4))
        b = params.add("b", (4,), "bias")
        bound = 1.0 / np.sqrt(9)
        assert np.all(np.abs(W.data) <= bound)
        assert np.all(b.data == 0.0)

    def test_duplicate_name_rejected(self):
        params = nm.ParameterSet(0)
        params.add("x", (2,))
        with pytest.raises(ValueError):
            params.add("x", (2,))

    def test_seeded_init_reproducible(self):
        a = nm.ParameterSet(11).add("W", (5, 5))
        b = nm.ParameterSet(11).add("W", (5, 5))
        assert np.array_equal(a.data, b.data)


class TestCheckpoint:
    def test_exact_round_trip(self, tmp_path):
        params = nm.ParameterSet(5)
        params.add("enc.W", (7, 3))
        params.add("enc.b", (3,), "bias")
        params.add("scalar", (), "bias")
        path = tmp_path / "ckpt.bin"
        nm.save_checkpoint(params, path)
        loaded = nm.load_checkpoint(path)
        assert loaded.names() == params.names()
        for name in params.names():
            assert np.array_equal(loaded[name].data, params[name].data)

    def test_corrupt_file_rejected(self, tmp_path):
        params = nm.ParameterSet(0)
        params.add("w", (4,))
        path = tmp_path / "ckpt.bin"
        nm.save_checkpoint(params, path)
        blob = bytearray(path.read_bytes())
        blob[10] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(nm.CheckpointError):
            nm.load_checkpoint(path)

    def test_not_a_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"junk")
        with pytest.raises(nm.CheckpointError):
            nm.load_checkpoint(path)
