import numpy as np
import pytest

from tcpn.autodiff import Graph, ShapeError, Tensor, grad_check, load_checkpoint, ops, save_checkpoint


def param(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def away_from_zero(rng, *shape):
    x = rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(x, requires_grad=True)


# Each case builds (params, f) for a random seed; f returns a scalar tensor.
def case_linear(rng):
    x, w, b = param(rng, 3, 4), param(rng, 4, 5), param(rng, 5)
    r = rng.standard_normal((3, 5))
    return [x, w, b], lambda: ops.sum(ops.linear(x, w, b) * r)


def case_linear_rowwise(rng):
    x, w = param(rng, 3, 4), param(rng, 4, 2)
    r = rng.standard_normal((3, 2))
    return [x, w], lambda: ops.sum(ops.linear(x, w, rowwise=True) * r)


def case_matmul_batched(rng):
    a, b = param(rng, 2, 1, 4), param(rng, 4, 3)
    r = rng.standard_normal((2, 1, 3))
    return [a, b], lambda: ops.sum((a @ b) * r)


def case_matmul_vector(rng):
    a, v = param(rng, 2, 3, 4), param(rng, 4)
    r = rng.standard_normal((2, 3))
    return [a, v], lambda: ops.sum((a @ v) * r)


def case_conv3x3(rng):
    x, w, b = param(rng, 5, 4, 2), param(rng, 3, 3, 2, 3, scale=0.5), param(rng, 3)
    r = rng.standard_normal((5, 4, 3))
    return [x, w, b], lambda: ops.sum(ops.conv2d(x, w, b) * r)


def case_conv3x3_stride2(rng):
    x, w = param(rng, 5, 6, 2), param(rng, 3, 3, 2, 2, scale=0.5)
    r = rng.standard_normal((3, 3, 2))
    return [x, w], lambda: ops.sum(ops.conv2d(x, w, stride=2) * r)


def case_conv1x1(rng):
    x, w, b = param(rng, 3, 4, 3), param(rng, 1, 1, 3, 2), param(rng, 2)
    r = rng.standard_normal((3, 4, 2))
    return [x, w, b], lambda: ops.sum(ops.conv2d(x, w, b) * r)


def case_conv1x1_stride2(rng):
    x, w = param(rng, 4, 4, 2), param(rng, 1, 1, 2, 2)
    r = rng.standard_normal((2, 2, 2))
    return [x, w], lambda: ops.sum(ops.conv2d(x, w, stride=2) * r)


def case_upsample(rng):
    x = param(rng, 2, 3, 2)
    r = rng.standard_normal((4, 6, 2))
    return [x], lambda: ops.sum(ops.upsample2x(x) * r)


def case_add_mul_div_broadcast(rng):
    a, b = param(rng, 3, 4), param(rng, 4)
    c = Tensor(rng.uniform(1.0, 2.0, (3, 1)), requires_grad=True)
    r = rng.standard_normal((3, 4))
    return [a, b, c], lambda: ops.sum(((a * b + a) / c - b) * r)


def case_concat(rng):
    a, b = param(rng, 2, 3), param(rng, 2, 2)
    r = rng.standard_normal((2, 5))
    return [a, b], lambda: ops.sum(ops.concat([a, b], axis=-1) * r)


def case_tanh_sigmoid(rng):
    x = param(rng, 3, 3)
    r = rng.standard_normal((3, 3))
    return [x], lambda: ops.sum((ops.tanh(x) + ops.sigmoid(x)) * r)


def case_relu(rng):
    x = away_from_zero(rng, 4, 3)
    r = rng.standard_normal((4, 3))
    return [x], lambda: ops.sum(ops.relu(x) * r)


def case_softmax(rng):
    x = param(rng, 2, 5)
    r = rng.standard_normal((2, 5))
    return [x], lambda: ops.sum(ops.softmax(x) * r)


def case_log_softmax(rng):
    x = param(rng, 2, 5)
    r = rng.standard_normal((2, 5))
    return [x], lambda: ops.sum(ops.log_softmax(x) * r)


def case_embedding_gather(rng):
    table = param(rng, 6, 3)
    ids = rng.integers(0, 6, size=5)
    r = rng.standard_normal((5, 3))
    return [table], lambda: ops.sum(ops.embedding(table, ids) * r)


def case_cells(rng):
    vals = param(rng, 3, 2)
    rows, cols = [0, 1, 2], [2, 0, 1]
    w = rng.standard_normal((3, 3, 2))
    return [vals], lambda: ops.sum(ops.gather_cells(ops.scatter_cells(vals, rows, cols, 3, 3) * w, [0, 2], [2, 1]))


def case_reductions(rng):
    x = param(rng, 3, 4)
    r = rng.standard_normal(4)
    return [x], lambda: ops.sum(ops.mean(x, axis=0) * r) + ops.sum(ops.sum(x, axis=1) * r[:3])


def case_log(rng):
    x = Tensor(rng.uniform(0.5, 2.0, (3, 2)), requires_grad=True)
    r = rng.standard_normal((3, 2))
    return [x], lambda: ops.sum(ops.log(x) * r)


def case_clamp_min(rng):
    x = away_from_zero(rng, 5)
    r = rng.standard_normal(5)
    return [x], lambda: ops.sum(ops.clamp_min(x, 0.0) * r)


def case_channel_affine(rng):
    x, s, t = param(rng, 2, 3, 4), param(rng, 4), param(rng, 4)
    r = rng.standard_normal((2, 3, 4))
    return [x, s, t], lambda: ops.sum(ops.channel_affine(x, s, t) * r)


def case_gru(rng):
    x, h = param(rng, 2, 3), param(rng, 2, 4)
    wx, wh = param(rng, 3, 12, scale=0.5), param(rng, 4, 12, scale=0.5)
    bx, bh = param(rng, 12, scale=0.1), param(rng, 12, scale=0.1)
    r = rng.standard_normal((2, 4))
    return [x, h, wx, wh, bx, bh], lambda: ops.sum(ops.gru_cell(x, h, wx, wh, bx, bh) * r)


def case_index_pad(rng):
    x = param(rng, 3, 3, 2)
    r = rng.standard_normal((2, 2, 2))
    return [x], lambda: ops.sum(ops.pad2d(x, 1, 1)[1:3, 2:4] * r)


CASES = [v for k, v in sorted(globals().items()) if k.startswith("case_")]


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.__name__[5:])
def test_primitive_gradients(case):
    worst = 0.0
    for seed in range(100):
        params, f = case(np.random.default_rng(seed))
        worst = max(worst, grad_check(f, params, eps=1e-5))
    assert worst < 1e-5


def test_softmax_symmetric_and_normalized():
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    rng = np.random.default_rng(0)
    y = ops.softmax(Tensor(rng.standard_normal((50, 7)) * 10)).data
    assert np.all(y > 0)
    assert np.abs(y.sum(-1) - 1).max() < 1e-9


def test_identity_conv_is_identity():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((5, 7, 3)))
    w1 = Tensor(np.eye(3)[None, None])
    np.testing.assert_array_equal(ops.conv2d(x, w1).data, x.data)
    w3 = np.zeros((3, 3, 3, 3))
    w3[1, 1] = np.eye(3)
    np.testing.assert_allclose(ops.conv2d(x, Tensor(w3)).data, x.data, atol=1e-15)


def test_linear_against_finite_differences():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((2, 4)))
    w = Tensor(rng.standard_normal((3, 4)).T.copy(), requires_grad=True)
    assert grad_check(lambda: ops.sum(ops.tanh(ops.linear(x, w))), [w], eps=1e-5) < 1e-6


def test_constant_function_has_zero_error():
    w = Tensor(np.ones(3), requires_grad=True)
    assert grad_check(lambda: ops.sum(w * 0.0) + 2.0, [w]) == 0.0


def test_sum_tanh_wx():
    rng = np.random.default_rng(5)
    w = Tensor(rng.standard_normal((3, 3)) * 0.1, requires_grad=True)
    x = Tensor(rng.standard_normal(3))
    assert grad_check(lambda: ops.sum(ops.tanh(w @ x)), [w]) < 1e-6


def test_shape_errors_name_the_op():
    with pytest.raises(ShapeError, match="matmul"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="conv2d"):
        ops.conv2d(Tensor(np.ones((4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))
    with pytest.raises(ShapeError, match="add"):
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_rowwise_matmul_independent_of_batch():
    rng = np.random.default_rng(0)
    for dt in (np.float32, np.float64):
        w = Tensor(rng.standard_normal((64, 96)).astype(dt))
        x = Tensor(rng.standard_normal((5, 64)).astype(dt))
        full = ops.linear(x, w, rowwise=True).data
        for i in range(5):
            np.testing.assert_array_equal(full[i], ops.linear(x[i:i + 1], w, rowwise=True).data[0])


def test_no_recording_outside_graph():
    w = Tensor(np.ones(2), requires_grad=True)
    with Graph() as g:
        ops.sum(w * 2.0)
        assert len(g) == 2
    ops.sum(w * 2.0)
    assert len(g) == 2


def test_backward_accumulates_shared_use():
    w = Tensor(np.array([3.0]), requires_grad=True)
    with Graph() as g:
        y = ops.sum(w * w + w)
        g.backward(y)
    np.testing.assert_allclose(w.grad, [7.0])


def test_deterministic_forward():
    def run():
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((6, 6, 4)).astype(np.float32))
        w = Tensor(rng.standard_normal((3, 3, 4, 4)).astype(np.float32))
        return ops.conv2d(ops.relu(ops.conv2d(x, w, stride=2)), w).data.tobytes()

    assert run() == run()


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b.c": np.array([1.5, -2.0])}
    path = save_checkpoint(tmp_path / "m.json", arrays, {"vocab": ["x"]})
    loaded, meta = load_checkpoint(path)
    assert meta == {"vocab": ["x"]}
    for k, v in arrays.items():
        np.testing.assert_array_equal(loaded[k], v)
        assert loaded[k].dtype == v.dtype
    manifest = path.read_text()
    assert "TCPN-CKPT-1" in manifest
    assert (tmp_path / "m.bin").stat().st_size == 6 * 4 + 2 * 8
