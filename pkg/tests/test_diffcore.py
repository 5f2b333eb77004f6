import json

import numpy as np
import pytest

from mvhand import diffcore as dc

N_CASES = 50


def _shape(rng, ndim=2, lo=1, hi=4):
    return tuple(int(s) for s in rng.integers(lo, hi + 1, size=ndim))


def _readout(rng, shape):
    """Fixed random weights so the scalar readout exercises every output entry."""
    return dc.constant(rng.normal(size=shape))


# Each builder: rng -> (fn(*nodes) -> scalar node, list of input arrays)


def case_matmul(rng):
    m, k, n = _shape(rng, 3)
    W = _readout(rng, (m, n))
    return (lambda a, b: dc.reduce_sum(dc.matmul(a, b) * W)), [rng.normal(size=(m, k)), rng.normal(size=(k, n))]


def case_batched_matmul(rng):
    b, m, k, n = _shape(rng, 4)
    W = _readout(rng, (b, m, n))
    return (lambda a, c: dc.reduce_sum(dc.matmul(a, c) * W)), [rng.normal(size=(b, m, k)), rng.normal(size=(b, k, n))]


def case_add_sub_mul(rng):
    s = _shape(rng)
    W = _readout(rng, s)
    return (lambda a, b: dc.reduce_sum((dc.add(a, b) * dc.sub(a, b)) * W)), [rng.normal(size=s), rng.normal(size=s)]


def case_scale(rng):
    s = _shape(rng)
    W = _readout(rng, s)
    c = float(rng.normal())
    return (lambda a: dc.reduce_sum(dc.scale(a, c) * W)), [rng.normal(size=s)]


def case_div(rng):
    s = _shape(rng)
    W = _readout(rng, s)
    return (lambda a, b: dc.reduce_sum(dc.div(a, b) * W)), [rng.normal(size=s), rng.uniform(0.5, 2, size=s)]


def case_concat(rng):
    s1, s2 = (2, int(rng.integers(1, 4))), (2, int(rng.integers(1, 4)))
    W = _readout(rng, (2, s1[1] + s2[1]))
    return (lambda a, b: dc.reduce_sum(dc.concat([a, b], axis=1) * W)), [rng.normal(size=s1), rng.normal(size=s2)]


def case_reshape_transpose(rng):
    a, b, c = _shape(rng, 3)
    W = _readout(rng, (c, a * b))
    return (lambda x: dc.reduce_sum(dc.reshape(dc.transpose(x, (2, 0, 1)), (c, a * b)) * W)), [rng.normal(size=(a, b, c))]


def case_leaky_relu(rng):
    s = _shape(rng)
    W = _readout(rng, s)
    x = rng.normal(size=s)
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    return (lambda a: dc.reduce_sum(dc.leaky_relu(a, 0.01) * W)), [x]


def case_softmax(rng):
    s = _shape(rng)
    ax = int(rng.integers(0, 2))
    W = _readout(rng, s)
    return (lambda a: dc.reduce_sum(dc.softmax(a, axis=ax) * W)), [rng.normal(size=s)]


def case_reduce_mean(rng):
    s = _shape(rng, 3)
    ax = int(rng.integers(0, 3))
    W = _readout(rng, tuple(d for i, d in enumerate(s) if i != ax))
    return (lambda a: dc.reduce_sum(dc.reduce_mean(a, axis=ax) * W)), [rng.normal(size=s)]


def case_reduce_sum(rng):
    s = _shape(rng, 3)
    ax = int(rng.integers(0, 3))
    W = _readout(rng, tuple(d for i, d in enumerate(s) if i != ax))
    return (lambda a: dc.reduce_sum(dc.reduce_sum(a, axis=ax) * W)), [rng.normal(size=s)]


def case_max_axis(rng):
    s = _shape(rng, 3, lo=2)
    ax = int(rng.integers(0, 3))
    W = _readout(rng, tuple(d for i, d in enumerate(s) if i != ax))
    x = rng.permutation(np.arange(np.prod(s), dtype=float)).reshape(s) * 0.1  # distinct entries
    return (lambda a: dc.reduce_sum(dc.max_axis(a, ax) * W)), [x]


def case_gather_rows(rng):
    m, c = _shape(rng, 2, lo=2)
    idx = rng.integers(0, m, size=int(rng.integers(1, 6)))
    W = _readout(rng, (len(idx), c))
    return (lambda a: dc.reduce_sum(dc.gather_rows(a, idx) * W)), [rng.normal(size=(m, c))]


def case_bilinear(rng):
    h, w, c = int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(1, 4))
    m = int(rng.integers(1, 5))
    coords = np.stack([rng.uniform(0.05, w - 1.05, m), rng.uniform(0.05, h - 1.05, m)], axis=1)
    coords = np.where(np.abs(coords - np.round(coords)) < 1e-3, coords + 0.01, coords)
    W = _readout(rng, (m, c))
    return (lambda f, x: dc.reduce_sum(dc.bilinear_sample(f, x) * W)), [rng.normal(size=(h, w, c)), coords]


def case_l1(rng):
    s = _shape(rng)
    a = rng.normal(size=s)
    b = a + rng.choice([-1, 1], size=s) * rng.uniform(0.1, 1, size=s)
    return (lambda x, y: dc.l1_distance(x, y)), [a, b]


def case_l2(rng):
    s = _shape(rng)
    return (lambda x, y: dc.l2_squared(x, y)), [rng.normal(size=s), rng.normal(size=s)]


def case_broadcast_repeat(rng):
    a, b = _shape(rng, 2)
    W = _readout(rng, (3, a, b))
    return (lambda x: dc.reduce_sum(dc.broadcast_repeat(x, (3, a, b)) * W)), [rng.normal(size=(a, 1))]


def case_elementwise_math(rng):
    s = _shape(rng)
    W = _readout(rng, s)
    return (lambda x: dc.reduce_sum((dc.exp(dc.sin(x)) + dc.log(dc.softplus(x)) + dc.sqrt(dc.square(x) + dc.constant(np.ones(s)))) * W)), \
        [rng.normal(size=s)]


def case_rodrigues(rng):
    u = rng.uniform(0, 10, size=(4,)) ** 2 * rng.choice([1e-12, 1e-3, 1.0], size=4)
    W = _readout(rng, (4,))
    return (lambda x: dc.reduce_sum((dc.rodrigues_a(x) + dc.rodrigues_b(x) * 2.0) * W)), [u]


CASES = {name[5:]: fn for name, fn in globals().items() if name.startswith("case_")}


@pytest.mark.parametrize("op", sorted(CASES))
def test_op_gradients_match_finite_differences(op):
    rng = np.random.default_rng(1234)
    worst = 0.0
    for _ in range(N_CASES):
        fn, arrays = CASES[op](rng)
        worst = max(worst, dc.check_gradients(fn, arrays))
    assert worst < 1e-4, f"{op}: worst relative error {worst:.3g}"


def test_random_three_layer_compositions():
    rng = np.random.default_rng(7)
    unary = [lambda x: dc.leaky_relu(x, 0.1), lambda x: dc.softmax(x, axis=-1), dc.sin, dc.square,
             lambda x: dc.scale(x, 0.7)]
    for _ in range(N_CASES):
        ops = [unary[i] for i in rng.integers(0, len(unary), size=3)]
        W = rng.normal(size=(3, 4))
        R = dc.constant(rng.normal(size=(3, 4)))

        def fn(x, ops=ops, W=W, R=R):
            y = dc.matmul(x, dc.constant(W))
            for op in ops:
                y = op(y)
            return dc.reduce_sum(y * R)

        assert dc.check_gradients(fn, [rng.normal(size=(3, 3))]) < 1e-4


def test_forward_examples():
    assert np.allclose(dc.softmax(dc.tensor([0.0, 0.0, 0.0])).value, [1 / 3] * 3)
    X = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(dc.matmul(dc.tensor(np.eye(3)), dc.tensor(X)).value, X)
    assert np.allclose(dc.leaky_relu(dc.tensor([-1.0, 2.0]), 0.01).value, [-0.01, 2.0])
    assert dc.forward(dc.tensor(3.0)) == 3.0


def test_backward_product_rule():
    x, y = dc.tensor(3.0, requires_grad=True), dc.tensor(5.0, requires_grad=True)
    dc.backward(x * y)
    assert x.grad == 5.0 and y.grad == 3.0


def test_softmax_mean_gradient_sums_to_zero():
    x = dc.tensor(np.random.default_rng(0).normal(size=(4, 6)), requires_grad=True)
    dc.backward(dc.reduce_mean(dc.softmax(x, axis=1) * dc.constant(np.arange(24.0).reshape(4, 6))))
    assert np.allclose(x.grad.sum(axis=1), 0.0, atol=1e-15)


def test_max_ties_route_to_lowest_index():
    x = dc.tensor([[1.0, 3.0, 3.0, 0.0], [2.0, 2.0, 2.0, 2.0]], requires_grad=True)
    dc.backward(dc.reduce_sum(dc.max_axis(x, 1)))
    assert np.array_equal(x.grad, [[0, 1, 0, 0], [1, 0, 0, 0]])


def test_l1_subgradient_zero_at_zero():
    a = dc.tensor([1.0, 2.0], requires_grad=True)
    dc.backward(dc.l1_distance(a, dc.constant([1.0, 0.0])))
    assert np.array_equal(a.grad, [0.0, 1.0])


def test_backward_is_deterministic():
    rng = np.random.default_rng(3)
    A, B = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))

    def grads():
        a, b = dc.tensor(A, requires_grad=True), dc.tensor(B, requires_grad=True)
        out = dc.reduce_sum(dc.softmax(dc.leaky_relu(dc.matmul(a, b)), axis=0) * dc.constant(np.arange(15.0).reshape(5, 3)))
        dc.backward(out)
        return a.grad.tobytes() + b.grad.tobytes()

    assert grads() == grads()


def test_grad_shapes_match_values():
    a = dc.tensor(np.ones((2, 3)), requires_grad=True)
    b = dc.tensor(np.ones((3, 4)), requires_grad=True)
    dc.backward(dc.reduce_sum(dc.matmul(a, b)))
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(dc.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        dc.matmul(dc.tensor(np.ones((2, 3))), dc.tensor(np.ones((2, 3))))
    with pytest.raises(dc.ShapeError, match="add"):
        dc.add(dc.tensor(np.ones(3)), dc.tensor(np.ones((3, 1))))


def test_non_scalar_root_rejected():
    with pytest.raises(dc.ShapeError):
        dc.backward(dc.tensor(np.ones(3), requires_grad=True))


def test_nonfinite_input_rejected():
    with pytest.raises(ValueError):
        dc.tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        dc.tensor([np.inf])


def test_bilinear_examples():
    f = np.arange(5 * 6 * 2, dtype=float).reshape(5, 6, 2)
    out = dc.bilinear_sample(dc.tensor(f), dc.tensor([[2.0, 3.0], [2.5, 3.0]])).value
    assert np.array_equal(out[0], f[3, 2])
    assert np.allclose(out[1], 0.5 * (f[3, 2] + f[3, 3]))


def test_bilinear_clamps_and_zeroes_coordinate_gradient_outside():
    f = dc.tensor(np.random.default_rng(0).normal(size=(4, 4, 3)), requires_grad=True)
    c = dc.tensor([[-2.0, 1.5], [1.5, 9.0]], requires_grad=True)
    out = dc.bilinear_sample(f, c)
    assert np.allclose(out.value[0], dc.bilinear_sample(f, dc.constant([[0.0, 1.5]])).value[0])
    dc.backward(dc.reduce_sum(out))
    assert c.grad[0, 0] == 0.0 and c.grad[1, 1] == 0.0


def test_bilinear_coordinate_gradient_20_interior_points():
    rng = np.random.default_rng(11)
    f = rng.normal(size=(8, 9, 3))
    coords = np.stack([rng.uniform(0.1, 7.9, 20), rng.uniform(0.1, 6.9, 20)], axis=1)
    W = dc.constant(rng.normal(size=(20, 3)))
    err = dc.check_gradients(lambda fm, x: dc.reduce_sum(dc.bilinear_sample(fm, x) * W), [f, coords])
    assert err < 1e-4


def test_stop_gradient_blocks_flow():
    a = dc.tensor([1.0, 2.0], requires_grad=True)
    b = dc.stop_gradient(a * 2.0)
    assert not b.requires_grad
    out = dc.reduce_sum(a * b)
    dc.backward(out)
    assert np.array_equal(a.grad, [2.0, 4.0])


def test_graph_dump_lists_nodes():
    a = dc.tensor(np.ones((2, 2)), requires_grad=True)
    out = dc.reduce_sum(dc.leaky_relu(a))
    nodes = json.loads(dc.graph_to_json(out))
    assert {n["op"] for n in nodes} == {"reduce_sum", "leaky_relu", "leaf"}
    assert all({"id", "op", "shape", "parents"} <= set(n) for n in nodes)
