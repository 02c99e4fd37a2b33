import numpy as np
import pytest

from posegraphnet import compute as C
from posegraphnet.errors import DataError, ShapeError

SHAPES = [(3, 4), (2, 3, 5), (4, 1, 6)]


def leaf(rng, shape, offset=0.0):
    return C.Tensor(rng.normal(size=shape) + offset, requires_grad=True)


def weighted_sum(t, w):
    return C.tsum(t * w)


def away_from_zero(rng, shape):
    # keeps relu/abs kinks farther than the FD step from every probe point
    x = rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return C.Tensor(x, requires_grad=True)


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "scale", "square", "sqrt", "abs",
                                "relu", "sigmoid"])
def test_elementwise_gradients(op, shape, rng):
    w = rng.normal(size=shape)
    a = away_from_zero(rng, shape)
    b = away_from_zero(rng, shape)
    fns = {
        "add": (lambda x, y: weighted_sum(x + y, w), [a, b]),
        "sub": (lambda x, y: weighted_sum(x - y, w), [a, b]),
        "mul": (lambda x, y: weighted_sum(x * y, w), [a, b]),
        "div": (lambda x, y: weighted_sum(x / y, w), [a, b]),
        "scale": (lambda x: weighted_sum(C.scale(x, -2.5), w), [a]),
        "square": (lambda x: weighted_sum(C.square(x), w), [a]),
        "sqrt": (lambda x: weighted_sum(C.sqrt(C.absolute(x)), w), [a]),
        "abs": (lambda x: weighted_sum(C.absolute(x), w), [a]),
        "relu": (lambda x: weighted_sum(C.relu(x), w), [a]),
        "sigmoid": (lambda x: weighted_sum(C.sigmoid(x), w), [a]),
    }
    f, inputs = fns[op]
    assert C.grad_check(f, inputs) < 1e-6


@pytest.mark.parametrize("shape", SHAPES)
def test_broadcast_gradients(shape, rng):
    a = leaf(rng, shape)
    b = leaf(rng, shape[-1:])
    c = leaf(rng, (1,) * (len(shape) - 1) + shape[-1:])
    w = rng.normal(size=shape)
    assert C.grad_check(lambda x, y, z: weighted_sum(x * y + z, w), [a, b, c]) < 1e-6


@pytest.mark.parametrize("sa, sb", [((4, 5), (5, 3)), ((2, 4, 5), (5, 3)), ((4, 4), (3, 4, 2)),
                                    ((2, 3, 4), (2, 4, 2))])
def test_matmul_gradient(sa, sb, rng):
    a, b = leaf(rng, sa), leaf(rng, sb)
    out_shape = np.broadcast_shapes(sa[:-2], sb[:-2]) + (sa[-2], sb[-1])
    w = rng.normal(size=out_shape)
    assert C.grad_check(lambda x, y: weighted_sum(x @ y, w), [a, b]) < 1e-6


def test_matmul_relu_sum_composite(rng):
    a, b = leaf(rng, (4, 5)), leaf(rng, (5, 3))
    assert C.grad_check(lambda x, y: C.tsum(C.relu(x @ y)), [a, b]) < 1e-6


def test_sum_of_squares_gradient(rng):
    x = leaf(rng, (6,))
    C.tsum(C.square(x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-15)
    x.grad = None
    assert C.grad_check(lambda t: C.tsum(C.square(t)), [x]) < 1e-8


@pytest.mark.parametrize("shape", SHAPES)
def test_structural_gradients(shape, rng):
    a, b = leaf(rng, shape), leaf(rng, shape[:-1] + (2,))
    w_cat = rng.normal(size=shape[:-1] + (shape[-1] + 2,))
    assert C.grad_check(lambda x, y: weighted_sum(C.concat([x, y], -1), w_cat), [a, b]) < 1e-6
    w_t = rng.normal(size=shape[:-2] + (shape[-1], shape[-2]))
    assert C.grad_check(lambda x: weighted_sum(C.transpose(x), w_t), [a]) < 1e-6
    w_s = rng.normal(size=shape + (2,))
    assert C.grad_check(lambda x: weighted_sum(C.stack([x, C.square(x)], -1), w_s), [a]) < 1e-6
    assert C.grad_check(lambda x: C.tsum(C.square(C.mean(x, axis=-2, keepdims=True))), [a]) < 1e-6
    assert C.grad_check(lambda x: C.tsum(C.square(x[..., 1:3] - x[..., 0:2])), [a]) < 1e-6
    assert C.grad_check(lambda x: C.tsum(C.square(C.reshape(x, (-1,)))), [a]) < 1e-6


@pytest.mark.parametrize("shape", [(4, 3), (3, 5, 4), (2, 6, 3)])
@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_gradient(shape, mode, rng):
    c = shape[-1]
    x = leaf(rng, shape)
    g = C.Tensor(rng.uniform(0.5, 1.5, c), requires_grad=True)
    b = leaf(rng, (c,))
    w = rng.normal(size=shape)
    state = C.BatchNormState.fresh(c)
    state.running_mean.data = rng.normal(size=c)
    state.running_var.data = rng.uniform(0.5, 2.0, c)
    frozen = (state.running_mean.data.copy(), state.running_var.data.copy())

    def f(x, g, b):
        # reset running stats so repeated FD evaluations are identical
        state.running_mean.data, state.running_var.data = frozen[0].copy(), frozen[1].copy()
        return weighted_sum(C.batchnorm(x, g, b, state, mode), w)

    assert C.grad_check(f, [x, g, b]) < 1e-6


def test_batchnorm_train_statistics(rng):
    x = rng.normal(2.0, 3.0, size=(8, 5, 4))
    state = C.BatchNormState.fresh(4)
    y = C.batchnorm(C.Tensor(x), np.ones(4), np.zeros(4), state, "train").data
    np.testing.assert_allclose(y.reshape(-1, 4).mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(y.reshape(-1, 4).var(0), 1, atol=1e-4)
    flat = x.reshape(-1, 4)
    np.testing.assert_allclose(state.running_mean.data, 0.1 * flat.mean(0), rtol=1e-12)
    np.testing.assert_allclose(state.running_var.data, 0.9 + 0.1 * flat.var(0, ddof=1), rtol=1e-12)


def test_dropout(rng):
    x = C.Tensor(np.ones((200, 50)), requires_grad=True)
    assert C.dropout(x, 0.2, "eval", None) is x
    y = C.dropout(x, 0.2, "train", np.random.default_rng(0))
    kept = y.data != 0
    assert 0.75 < kept.mean() < 0.85
    np.testing.assert_allclose(y.data[kept], 1.25)
    C.tsum(y).backward()
    np.testing.assert_array_equal(x.grad, y.data)
    y2 = C.dropout(x, 0.2, "train", np.random.default_rng(0))
    assert np.array_equal(y.data, y2.data)


def test_backward_accumulates(rng):
    x = leaf(rng, (3, 4))
    w = rng.normal(size=(4, 2))
    out = C.tsum(C.sigmoid(x @ w))
    out.backward()
    first = x.grad.copy()
    out.backward()
    assert np.array_equal(x.grad, 2 * first)


def test_reused_tensor_gradient(rng):
    x = leaf(rng, (5,))
    C.tsum(x * x + x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1, rtol=1e-15)


def test_shape_errors():
    with pytest.raises(ShapeError):
        C.matmul(C.Tensor(np.ones((2, 3))), C.Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        C.matmul(C.Tensor(np.ones(3)), C.Tensor(np.ones((3, 2))))


def test_numpy_operands_defer_to_tensor():
    t = C.Tensor(np.ones((3, 3)), requires_grad=True)
    out = np.eye(3) - t
    assert isinstance(out, C.Tensor)
    np.testing.assert_array_equal(out.data, np.eye(3) - 1)


# ---- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = {"w": C.Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    state = C.AdamState()
    C.adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    p = {"w": C.Tensor(np.zeros(3), requires_grad=True)}
    g = np.array([3.0, -0.5, 1e-3])
    C.adam_step(p, {"w": g}, C.AdamState(), lr=0.01)
    # m_hat = g, v_hat = g^2 after bias correction, so step = lr * g / (|g| + eps)
    np.testing.assert_allclose(p["w"].data, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(p["w"].data, -0.01 * np.sign(g), rtol=1e-4)


def test_adam_quadratic_bowl(rng):
    w = C.Tensor(rng.normal(size=5), requires_grad=True)
    opt = C.Adam({"w": w}, lr=0.05)
    for step in range(500):
        opt.zero_grad()
        loss = C.tsum(C.square(w))
        if loss.item() < 1e-6:
            break
        loss.backward()
        opt.step()
    assert C.tsum(C.square(w)).item() < 1e-6


# ---- checkpoints ----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"a.W": rng.normal(size=(3, 4)), "b": np.array(2.5), "é.name": rng.normal(size=(2, 1, 3)),
               "special": np.array([np.inf, -0.0, 1e-308, np.nan])}
    path = tmp_path / "ck.pgn"
    C.save_checkpoint(path, tensors)
    raw = path.read_bytes()
    assert raw[:4] == b"PGN2"
    back = C.load_checkpoint(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == np.asarray(tensors[k], float).tobytes()
    assert C.encode_checkpoint(back) == raw


def test_checkpoint_layout():
    buf = C.encode_checkpoint({"x": np.array([[1.0, 2.0]])})
    assert buf == (b"PGN2" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
                   + (1).to_bytes(2, "little") + b"x" + bytes([2])
                   + (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
                   + np.array([1.0, 2.0], "<f8").tobytes())


@pytest.mark.parametrize("buf", [b"XXXX", b"PGN2" + b"\x02\x00\x00\x00\x00\x00\x00\x00",
                                 b"PGN2\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00"])
def test_checkpoint_rejects_garbage(buf):
    with pytest.raises(DataError):
        C.decode_checkpoint(buf)


def test_rng_streams_are_deterministic():
    a = C.make_rng(7, 2).random(5)
    b = C.make_rng(7, 2).random(5)
    c = C.make_rng(7, 3).random(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
