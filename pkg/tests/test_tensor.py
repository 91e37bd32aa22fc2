"""Tensor core: forward semantics, backward rules vs finite differences,
tape contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dims import tensor as T
from dims.tensor import ContractError, DimensionError, Tape

from oracles import softmax_highprec


def fd_check(f, params, eps=1e-5, tol=1e-4):
    report = T.grad_check(f, params, eps=eps, tol=tol)
    assert report.ok, report.summary()


class TestMatmul:
    def test_identity(self):
        a = T.tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        eye = T.tensor(np.eye(3))
        assert np.array_equal(T.matmul(eye, a).numpy(), a.numpy())

    def test_hand_2x2(self):
        out = T.matmul(T.tensor([[1.0, 2.0], [3.0, 4.0]]), T.tensor([[1.0], [1.0]]))
        assert np.array_equal(out.numpy(), [[3.0], [7.0]])

    def test_grads_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        a = T.tensor(rng.normal(size=(4, 5)), requires_grad=True)
        b = T.tensor(rng.normal(size=(5, 3)), requires_grad=True)
        w = rng.normal(size=(4, 3))
        fd_check(lambda: T.tsum(T.matmul(a, b) * T.tensor(w)), {"a": a, "b": b})

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))

    @pytest.mark.parametrize("sa,sb", [((4,), (4, 3)), ((2, 4), (4,)), ((4,), (4,))])
    def test_vector_cases(self, sa, sb):
        rng = np.random.default_rng(1)
        a = T.tensor(rng.normal(size=sa), requires_grad=True)
        b = T.tensor(rng.normal(size=sb), requires_grad=True)
        assert T.matmul(a, b).shape == (np.ones(sa) @ np.ones(sb)).shape
        fd_check(lambda: T.tsum(T.matmul(a, b)), {"a": a, "b": b})


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(T.tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.numpy(), [1 / 3] * 3, atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=7)
        for c in (-3.0, 1e3, 12.345):
            a = T.softmax(T.tensor(x)).numpy()
            b = T.softmax(T.tensor(x + c)).numpy()
            assert np.allclose(a, b, atol=1e-12)

    def test_against_high_precision(self):
        out = T.softmax(T.tensor([1.0, 2.0, 3.0])).numpy()
        expected = softmax_highprec([1.0, 2.0, 3.0])
        assert np.allclose(out, expected, atol=1e-15)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=9))
    @settings(max_examples=80, deadline=None)
    def test_sums_to_one_and_positive(self, values):
        out = T.softmax(T.tensor(values)).numpy()
        assert abs(out.sum() - 1.0) < 1e-6
        assert (out > 0).all()

    def test_empty_axis_rejected(self):
        with pytest.raises(DimensionError):
            T.softmax(T.tensor(2.0))


class TestElementwise:
    def test_sigmoid_symmetry_point(self):
        assert T.sigmoid(T.tensor(0.0)).item() == 0.5

    def test_relu_definition(self):
        assert T.relu(T.tensor(-2.0)).item() == 0.0
        assert T.relu(T.tensor(3.0)).item() == 3.0

    def test_tanh_grad_at_07(self):
        x = T.tensor(0.7, requires_grad=True)
        fd_check(lambda: T.tanh(x), {"x": x})

    def test_broadcast_rejected(self):
        with pytest.raises(DimensionError):
            T.add(T.tensor(np.ones((2, 3))), T.tensor(np.ones(3)))

    def test_scalar_broadcast(self):
        out = T.mul(T.tensor([[1.0, 2.0]]), T.tensor(3.0))
        assert np.array_equal(out.numpy(), [[3.0, 6.0]])


class TestConcat:
    def test_single_input(self):
        x = T.tensor([1.0, 2.0])
        assert np.array_equal(T.concat([x]).numpy(), x.numpy())

    def test_shape_arithmetic(self):
        out = T.concat([T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 2)))], axis=1)
        assert out.shape == (2, 5)

    def test_backward_distributes_slicewise(self):
        rng = np.random.default_rng(3)
        a = T.tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = T.tensor(rng.normal(size=(2, 2)), requires_grad=True)
        w = rng.normal(size=(2, 5))
        with Tape():
            out = T.concat([a, b], axis=1)
            loss = T.tsum(out * T.tensor(w))
            loss.backward()
        assert np.array_equal(a.grad, w[:, :3])
        assert np.array_equal(b.grad, w[:, 3:])

    def test_mismatched_dims(self):
        with pytest.raises(DimensionError):
            T.concat([T.tensor(np.ones((2, 3))), T.tensor(np.ones((3, 3)))], axis=1)


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        gain = T.tensor(np.ones(4))
        bias = T.tensor(np.zeros(4))
        out = T.layer_norm(T.tensor([[5.0, 5.0, 5.0, 5.0]]), gain, bias)
        assert np.allclose(out.numpy(), 0.0, atol=1e-10)

    def test_row_mean_equals_bias_mean(self):
        rng = np.random.default_rng(4)
        gain = T.tensor(np.ones(6))
        bias = T.tensor(rng.normal(size=6))
        out = T.layer_norm(T.tensor(rng.normal(size=(3, 6))), gain, bias)
        assert np.allclose(out.numpy().mean(axis=1), bias.numpy().mean(), atol=1e-9)

    def test_grads_vs_finite_differences(self):
        rng = np.random.default_rng(5)
        x = T.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        gain = T.tensor(rng.normal(size=4), requires_grad=True)
        bias = T.tensor(rng.normal(size=4), requires_grad=True)
        w = rng.normal(size=(3, 4))
        fd_check(lambda: T.tsum(T.layer_norm(x, gain, bias) * T.tensor(w)),
                 {"x": x, "gain": gain, "bias": bias})


class TestBackward:
    def test_square_at_three(self):
        with Tape():
            x = T.tensor(3.0, requires_grad=True)
            (x * x).backward()
        assert x.grad == 6.0

    def test_sigmoid_of_linear(self):
        rng = np.random.default_rng(6)
        w = T.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        x = T.tensor(rng.normal(size=4))
        fd_check(lambda: T.tsum(T.sigmoid(T.matmul(w, x))), {"w": w})

    def test_disconnected_parameter_stays_zero(self):
        with Tape():
            x = T.tensor(2.0, requires_grad=True)
            unused = T.tensor(np.ones(3), requires_grad=True)
            (x * x).backward()
        assert unused.grad is None or not unused.grad.any()

    def test_non_scalar_loss_rejected(self):
        with Tape():
            x = T.tensor([1.0, 2.0], requires_grad=True)
            y = x * 2.0
            with pytest.raises(ContractError):
                y.backward()

    def test_repeat_backward_accumulates(self):
        with Tape():
            x = T.tensor(3.0, requires_grad=True)
            y = x * x
            y.backward()
            first = x.grad.copy()
            y.backward()
        assert np.array_equal(x.grad, 2 * first)

    def test_reset_backward_idempotent(self):
        rng = np.random.default_rng(7)
        w = T.tensor(rng.normal(size=(4, 4)), requires_grad=True)
        x = T.tensor(rng.normal(size=4))
        with Tape():
            loss = T.tsum(T.tanh(T.matmul(w, x)))
            loss.backward()
            g1 = w.grad.copy()
            w.grad = None
            loss.backward()
        assert np.array_equal(g1, w.grad)

    def test_requires_tape(self):
        x = T.tensor(1.0, requires_grad=True)
        y = x * x
        with pytest.raises(ContractError):
            y.backward()


class TestGradCheckOp:
    def test_quadratic_exact(self):
        x = T.tensor([1.3, -0.4, 2.0], requires_grad=True)
        report = T.grad_check(lambda: T.tsum(x * x), {"x": x}, tol=1e-6)
        assert report.ok, report.summary()

    def test_corrupted_rule_fails(self):
        x = T.tensor([1.0, 2.0], requires_grad=True)

        def corrupt(analytic):
            analytic["x"] = analytic["x"] + 1.0

        report = T.grad_check(lambda: T.tsum(x * x), {"x": x}, mutate_grads=corrupt)
        assert not report.ok

    def test_non_finite_reports_diagnostics(self):
        x = T.tensor([1e30, 2.0], requires_grad=True)
        report = T.grad_check(lambda: T.exp(T.tsum(x * x)), {"x": x})
        assert not report.ok
        assert report.failures


def _reducer(rng, shape):
    """A fixed random weighting so the scalarized loss has generic grads."""
    w = T.tensor(rng.normal(size=shape))
    return lambda out: T.tsum(out * w)


def _op_cases():
    """(name, builder) pairs; builder(rng) -> (scalar_fn, params)."""

    def unary(op, lo=-2.0, hi=2.0, shape=(3, 4)):
        def build(rng):
            x = T.tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)
            red = _reducer(rng, shape)
            return lambda: red(op(x)), {"x": x}
        return build

    def binary(op, shape=(3, 4)):
        def build(rng):
            a = T.tensor(rng.normal(size=shape), requires_grad=True)
            b = T.tensor(rng.normal(size=shape), requires_grad=True)
            red = _reducer(rng, shape)
            return lambda: red(op(a, b)), {"a": a, "b": b}
        return build

    def build_softmax(rng):
        x = T.tensor(rng.normal(size=(3, 5)), requires_grad=True)
        red = _reducer(rng, (3, 5))
        return lambda: red(T.softmax(x, axis=1)), {"x": x}

    def build_matmul(rng):
        a = T.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = T.tensor(rng.normal(size=(4, 2)), requires_grad=True)
        red = _reducer(rng, (3, 2))
        return lambda: red(T.matmul(a, b)), {"a": a, "b": b}

    def build_concat(rng):
        a = T.tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = T.tensor(rng.normal(size=(2, 2)), requires_grad=True)
        red = _reducer(rng, (2, 5))
        return lambda: red(T.concat([a, b], axis=1)), {"a": a, "b": b}

    def build_stack(rng):
        vs = [T.tensor(rng.normal(size=4), requires_grad=True) for _ in range(3)]
        red = _reducer(rng, (3, 4))
        return lambda: red(T.stack(vs)), {f"v{i}": v for i, v in enumerate(vs)}

    def build_layer_norm(rng):
        x = T.tensor(rng.normal(size=(3, 5)), requires_grad=True)
        gain = T.tensor(rng.normal(size=5), requires_grad=True)
        bias = T.tensor(rng.normal(size=5), requires_grad=True)
        red = _reducer(rng, (3, 5))
        return (lambda: red(T.layer_norm(x, gain, bias)),
                {"x": x, "gain": gain, "bias": bias})

    def build_rowscale(rng):
        m = T.tensor(rng.normal(size=(4, 3)), requires_grad=True)
        s = T.tensor(rng.normal(size=4), requires_grad=True)
        red = _reducer(rng, (4, 3))
        return lambda: red(T.rowscale(m, s)), {"m": m, "s": s}

    def build_add_rowvec(rng):
        m = T.tensor(rng.normal(size=(4, 3)), requires_grad=True)
        v = T.tensor(rng.normal(size=3), requires_grad=True)
        red = _reducer(rng, (4, 3))
        return lambda: red(T.add_rowvec(m, v)), {"m": m, "v": v}

    def build_mul_rowvec(rng):
        m = T.tensor(rng.normal(size=(4, 3)), requires_grad=True)
        v = T.tensor(rng.normal(size=3), requires_grad=True)
        red = _reducer(rng, (4, 3))
        return lambda: red(T.mul_rowvec(m, v)), {"m": m, "v": v}

    def build_take(rng):
        x = T.tensor(rng.normal(size=(5, 4)), requires_grad=True)
        red = _reducer(rng, (3, 4))
        return lambda: red(x[1:4]), {"x": x}

    def build_embedding(rng):
        table = T.tensor(rng.normal(size=(6, 3)), requires_grad=True)
        ids = [0, 2, 2, 5]
        red = _reducer(rng, (4, 3))
        return lambda: red(T.embedding(table, ids)), {"table": table}

    def build_gather(rng):
        x = T.tensor(rng.normal(size=7), requires_grad=True)
        red = _reducer(rng, (4,))
        return lambda: red(T.gather(x, [0, 3, 3, 6])), {"x": x}

    def build_scatter(rng):
        v = T.tensor(rng.normal(size=5), requires_grad=True)
        red = _reducer(rng, (8,))
        return lambda: red(T.scatter_add(8, [1, 4, 4, 0, 7], v)), {"v": v}

    def build_conv2d(rng):
        x = T.tensor(rng.normal(size=(7, 6, 2)), requires_grad=True)
        w = T.tensor(rng.normal(size=(3, 3, 2, 4)), requires_grad=True)
        b = T.tensor(rng.normal(size=4), requires_grad=True)
        red = _reducer(rng, (3, 2, 4))
        return (lambda: red(T.conv2d(x, w, b, stride=2)),
                {"x": x, "w": w, "b": b})

    def build_transpose(rng):
        x = T.tensor(rng.normal(size=(3, 5)), requires_grad=True)
        red = _reducer(rng, (5, 3))
        return lambda: red(T.transpose(x)), {"x": x}

    def build_reshape(rng):
        x = T.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        red = _reducer(rng, (2, 6))
        return lambda: red(T.reshape(x, (2, 6))), {"x": x}

    def build_mean_axis(rng):
        x = T.tensor(rng.normal(size=(4, 5)), requires_grad=True)
        red = _reducer(rng, (5,))
        return lambda: red(T.tmean(x, axis=0)), {"x": x}

    return [
        ("add", binary(T.add)),
        ("mul", binary(T.mul)),
        ("sub", binary(lambda a, b: a - b)),
        ("sigmoid", unary(T.sigmoid)),
        ("tanh", unary(T.tanh)),
        ("relu", unary(T.relu, lo=0.1, hi=2.0)),        # keep away from the kink
        ("relu_neg", unary(T.relu, lo=-2.0, hi=-0.1)),
        ("exp", unary(T.exp)),
        ("log", unary(T.log, lo=0.2, hi=3.0)),
        ("clamp_min", unary(lambda x: T.clamp_min(x, 0.5), lo=0.8, hi=2.0)),
        ("softmax", build_softmax),
        ("matmul", build_matmul),
        ("concat", build_concat),
        ("stack", build_stack),
        ("layer_norm", build_layer_norm),
        ("rowscale", build_rowscale),
        ("add_rowvec", build_add_rowvec),
        ("mul_rowvec", build_mul_rowvec),
        ("take", build_take),
        ("embedding", build_embedding),
        ("gather", build_gather),
        ("scatter_add", build_scatter),
        ("conv2d", build_conv2d),
        ("transpose", build_transpose),
        ("reshape", build_reshape),
        ("mean_axis", build_mean_axis),
    ]


@pytest.mark.parametrize("name,builder", _op_cases(), ids=[n for n, _ in _op_cases()])
@pytest.mark.parametrize("seed", range(5))
def test_op_gradients_match_finite_differences(name, builder, seed):
    # 26 ops x 5 seeds = 130 random instances
    rng = np.random.default_rng(hash((name, seed)) % (2 ** 32))
    f, params = builder(rng)
    report = T.grad_check(f, params, eps=1e-5, tol=1e-4)
    assert report.ok, f"{name}: {report.summary()}"


def test_forward_determinism():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(4, 4))
    w = rng.normal(size=(4, 4))
    a = T.tanh(T.matmul(T.tensor(x), T.tensor(w))).numpy()
    b = T.tanh(T.matmul(T.tensor(x), T.tensor(w))).numpy()
    assert np.array_equal(a, b)


def test_tensor_invariants():
    x = T.tensor(np.ones((2, 3)), requires_grad=True)
    assert int(np.prod(x.shape)) == x.data.size
    with Tape():
        T.tsum(x * x).backward()
    assert x.grad.shape == x.data.shape


def test_parameter_store_contract():
    store = T.ParameterStore()
    rng = np.random.default_rng(9)
    store.add("a", (2, 2), rng)
    store.add("b", (3,), rng)
    with pytest.raises(ValueError):
        store.add("a", (1,), rng)
    assert store.names() == ["a", "b"]
    assert all(t.requires_grad for t in store.tensors())
    assert store.count() == 7


def test_float32_mode():
    T.set_default_dtype(np.float32)
    try:
        x = T.tensor([1.0, 2.0])
        assert x.data.dtype == np.float32
        assert T.sigmoid(x).data.dtype == np.float32
    finally:
        T.set_default_dtype(np.float64)


def test_tapes_are_thread_local():
    import threading

    rng = np.random.default_rng(10)
    inputs = [rng.normal(size=(4, 4)) for _ in range(4)]
    weight = rng.normal(size=(4, 4))

    def work(x):
        w = T.tensor(weight.copy(), requires_grad=True)
        with Tape():
            T.tsum(T.tanh(T.matmul(w, T.tensor(x)))).backward()
        return w.grad.copy()

    serial = [work(x) for x in inputs]
    parallel = [None] * 4
    threads = [threading.Thread(target=lambda i=i: parallel.__setitem__(i, work(inputs[i])))
               for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for a, b in zip(serial, parallel):
        assert np.array_equal(a, b)

    # a tape on this thread must not observe another thread's active tape
    done = {}

    def nested():
        done["tape"] = T._active_tape()

    with Tape():
        th = threading.Thread(target=nested)
        th.start()
        th.join()
    assert done["tape"] is None
