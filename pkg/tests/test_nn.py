import numpy as np
import pytest

from socnav.errors import ConfigurationError, TrainingError, UsageError
from socnav.nn import AdamState, Mlp, adam_step, init_mlp, mlp_backward, mlp_forward, softmax


def naive_forward(mlp, x):
    """Independent reference: plain Python loops, no vectorization."""
    h = [float(v) for v in x]
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        out = []
        for i in range(w.shape[0]):
            acc = float(b[i])
            for j in range(w.shape[1]):
                acc += float(w[i, j]) * h[j]
            if k < last or mlp.relu_output:
                acc = acc if acc > 0.0 else 0.0
            out.append(acc)
        h = out
    return np.array(h)


def random_mlp(rng, sizes=None, relu_output=False):
    if sizes is None:
        n_layers = rng.integers(1, 4)
        sizes = tuple(int(rng.integers(2, 17)) for _ in range(n_layers + 1))
    return init_mlp(sizes, rng, relu_output=relu_output)


class TestForward:
    def test_zero_network_gives_zero_output(self):
        mlp = Mlp([np.zeros((3, 2)), np.zeros((4, 3))], [np.zeros(3), np.zeros(4)])
        y, _ = mlp_forward(mlp, np.array([0.7, -1.3]))
        assert np.array_equal(y, np.zeros(4))

    def test_identity_layer(self):
        mlp = Mlp([np.eye(2)], [np.zeros(2)], relu_output=False)
        y, _ = mlp_forward(mlp, np.array([1.0, -2.0]))
        assert np.array_equal(y, np.array([1.0, -2.0]))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        mlp = random_mlp(rng, relu_output=bool(seed % 2))
        x = rng.normal(size=mlp.in_dim)
        y, _ = mlp_forward(mlp, x)
        assert np.allclose(y, naive_forward(mlp, x), atol=1e-12, rtol=0)

    def test_batched_rows_match_single_calls(self):
        rng = np.random.default_rng(3)
        mlp = random_mlp(rng)
        xs = rng.normal(size=(6, mlp.in_dim))
        ys, _ = mlp_forward(mlp, xs)
        for i in range(6):
            yi, _ = mlp_forward(mlp, xs[i])
            # BLAS picks different kernels for matrix-matrix vs matrix-vector,
            # so only near-equality is guaranteed across call shapes
            assert np.allclose(ys[i], yi, atol=1e-12, rtol=0)

    def test_relu_positive_homogeneity_with_zero_bias(self):
        rng = np.random.default_rng(5)
        mlp = init_mlp((4, 8, 3), rng, relu_output=True)
        for b in mlp.biases:
            b[:] = 0.0
        x = rng.normal(size=4)
        y1, _ = mlp_forward(mlp, x)
        y2, _ = mlp_forward(mlp, 2.5 * x)
        assert np.allclose(2.5 * y1, y2, atol=1e-12)

    def test_dimension_mismatch_raises(self):
        mlp = Mlp([np.zeros((3, 2))], [np.zeros(3)])
        with pytest.raises(ConfigurationError):
            mlp_forward(mlp, np.zeros(5))
        with pytest.raises(ConfigurationError):
            Mlp([np.zeros((3, 2)), np.zeros((4, 5))], [np.zeros(3), np.zeros(4)])


def fd_grad(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    flat = theta.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        down = f()
        flat[i] = keep
        out[i] = (up - down) / (2 * h)
    return g


def max_rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


class TestBackward:
    def test_zero_grad_output_gives_zero_grads(self):
        rng = np.random.default_rng(0)
        mlp = random_mlp(rng)
        x = rng.normal(size=mlp.in_dim)
        _, cache = mlp_forward(mlp, x)
        grads, dx = mlp_backward(mlp, cache, np.zeros(mlp.out_dim))
        assert all(np.all(dw == 0) and np.all(db == 0) for dw, db in grads)
        assert np.all(dx == 0)

    def test_single_linear_layer_outer_product(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(3, 4))
        mlp = Mlp([w], [np.zeros(3)])
        x = rng.normal(size=4)
        g = rng.normal(size=3)
        _, cache = mlp_forward(mlp, x)
        grads, dx = mlp_backward(mlp, cache, g)
        assert np.allclose(grads[0][0], np.outer(g, x), atol=1e-15)
        assert np.allclose(grads[0][1], g, atol=1e-15)
        assert np.allclose(dx, g @ w, atol=1e-15)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_central_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        mlp = random_mlp(rng, relu_output=bool(seed % 2))
        x = rng.normal(size=mlp.in_dim)
        g_out = rng.normal(size=mlp.out_dim)

        def objective():
            y, _ = mlp_forward(mlp, x)
            return float(y @ g_out)

        _, cache = mlp_forward(mlp, x)
        grads, dx = mlp_backward(mlp, cache, g_out)
        for k, (dw, db) in enumerate(grads):
            assert max_rel_err(dw, fd_grad(objective, mlp.weights[k])) < 1e-4
            assert max_rel_err(db, fd_grad(objective, mlp.biases[k])) < 1e-4
        assert max_rel_err(dx, fd_grad(objective, x)) < 1e-4

    def test_stale_cache_rejected(self):
        rng = np.random.default_rng(2)
        a = init_mlp((3, 5, 2), rng)
        b = init_mlp((4, 6, 2), rng)
        _, cache = mlp_forward(a, rng.normal(size=3))
        with pytest.raises(UsageError):
            mlp_backward(b, cache, np.zeros(2))


class TestSoftmax:
    def test_equal_scores_uniform(self):
        assert np.allclose(softmax(np.array([2.2, 2.2, 2.2])), np.full(3, 1 / 3), atol=1e-15)

    def test_large_scores_stable(self):
        w = softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(w))
        assert w[0] > 1 - 1e-12 and w[1] < 1e-12

    def test_matches_direct_computation(self):
        s = np.array([1.0, 2.0, 3.0])
        direct = np.exp(s) / np.exp(s).sum()
        assert np.allclose(softmax(s), direct, atol=1e-12, rtol=0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            s = rng.normal(size=rng.integers(1, 9))
            c = rng.normal() * 10
            assert np.allclose(softmax(s), softmax(s + c), atol=1e-12, rtol=0)

    def test_sums_to_one(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            w = softmax(rng.normal(size=rng.integers(1, 9)) * 50)
            assert abs(w.sum() - 1.0) < 1e-9
            assert np.all(w > 0)

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            softmax(np.array([]))


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = [np.array([1.0, -2.0]), np.array([[3.0]])]
        state = AdamState.for_params(p)
        new_p, new_state = adam_step(p, [np.zeros(2), np.zeros((1, 1))], state, lr=0.1)
        assert all(np.array_equal(a, b) for a, b in zip(p, new_p))
        assert new_state.t == 1

    def test_first_step_magnitude_is_learning_rate(self):
        # bias correction makes the very first step ≈ lr * sign(g)
        p = [np.array([0.5])]
        state = AdamState.for_params(p)
        new_p, _ = adam_step(p, [np.array([1.0])], state, lr=0.01)
        assert abs((p[0][0] - new_p[0][0]) - 0.01) < 1e-9

    def test_minimizes_quadratic(self):
        p = [np.array([1.0])]
        state = AdamState.for_params(p)
        for _ in range(500):
            grad = [2.0 * p[0]]
            p, state = adam_step(p, grad, state, lr=0.05)
        assert abs(p[0][0]) < 1e-3

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        p = [rng.normal(size=(3, 2)), rng.normal(size=3)]
        g = [rng.normal(size=(3, 2)), rng.normal(size=3)]
        s1 = AdamState.for_params(p)
        s2 = AdamState.for_params(p)
        out1, st1 = adam_step(p, g, s1, lr=0.001)
        out2, st2 = adam_step(p, g, s2, lr=0.001)
        assert all(np.array_equal(a, b) for a, b in zip(out1, out2))
        assert all(np.array_equal(a, b) for a, b in zip(st1.m, st2.m))

    def test_non_finite_gradient_rejected(self):
        p = [np.array([1.0])]
        state = AdamState.for_params(p)
        with pytest.raises(TrainingError):
            adam_step(p, [np.array([np.nan])], state, lr=0.01)
