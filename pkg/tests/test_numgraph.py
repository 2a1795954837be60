import numpy as np
import pytest

from hetskel import numgraph as ng
from hetskel.numgraph import checkpoint


def test_softmax_uniform():
    out = ng.softmax(ng.const(np.full(4, 1.7)))
    np.testing.assert_allclose(out.value, [0.25] * 4, atol=1e-15)


def test_max_pool_rows():
    out = ng.max_pool(ng.const([[1.0, 5.0], [3.0, 2.0]]), axis=0)
    assert out.value.tolist() == [3.0, 5.0]


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(2, 3))
    out = ng.matmul(ng.const(np.eye(2)), ng.const(a))
    assert np.array_equal(out.value, a)


def test_max_pool_routes_gradient_to_first_argmax():
    x = ng.param([[2.0, 7.0, 7.0, 1.0], [4.0, 4.0, 0.0, 4.0]])
    ng.backward(ng.sum_(ng.max_pool(x, axis=1)))
    assert x.grad.tolist() == [[0, 1, 0, 0], [1, 0, 0, 0]]


def test_quadratic_gradient_exact():
    x = ng.param([1.0, 2.0])
    rep = ng.grad_check(lambda: ng.sum_(x * x), [x], step=1e-4, tol=1e-9)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    assert rep.passed, rep


def test_l2_normalize_unit_norm():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 7)) * rng.uniform(1e-3, 1e3, size=(50, 1))
    y = ng.l2_normalize(ng.const(x)).value
    assert np.max(np.abs(np.linalg.norm(y, axis=-1) - 1)) <= 1e-12


def test_l2_normalize_gradient_orthogonal_to_output():
    rng = np.random.default_rng(4)
    x = ng.param(rng.normal(size=(3, 5)))
    w = rng.normal(size=(3, 5))
    y = ng.l2_normalize(x)
    ng.backward(ng.sum_(y * ng.const(w)))
    # gradient of a unit-norm map has no radial component
    np.testing.assert_allclose(np.sum(x.grad * x.value, axis=-1), 0.0, atol=1e-12)
    rep = ng.grad_check(lambda: ng.sum_(ng.l2_normalize(x) * ng.const(w)), [x], tol=1e-6)
    assert rep.passed, rep


def test_non_finite_raises():
    with pytest.raises(ng.NumGraphError):
        ng.log(ng.const([0.0, 1.0]))
    with pytest.raises(ng.NumGraphError):
        ng.exp(ng.const([1e6]))


def test_shape_mismatch_raises():
    with pytest.raises(ng.NumGraphError):
        ng.matmul(ng.const(np.ones((2, 3))), ng.const(np.ones((2, 3))))
    with pytest.raises(ng.NumGraphError):
        ng.add(ng.const(np.ones((2, 3))), ng.const(np.ones((4,))))


def test_layer_norm_rejects_bad_eps():
    with pytest.raises(ng.NumGraphError):
        ng.layer_norm(ng.const(np.ones((2, 3))), ng.const(np.ones(3)), ng.const(np.zeros(3)), eps=0.0)


def _rng_param(rng, *shape):
    return ng.param(rng.normal(size=shape))


PRIMITIVE_CASES = {
    "add_broadcast": lambda r: ((a := _rng_param(r, 3, 4), b := _rng_param(r, 4)), lambda: ng.sum_((a + b) * (a + b))),
    "sub": lambda r: ((a := _rng_param(r, 2, 3), b := _rng_param(r, 2, 3)), lambda: ng.sum_(ng.exp(a - b))),
    "mul_broadcast": lambda r: ((a := _rng_param(r, 2, 3, 2), b := _rng_param(r, 3, 1)), lambda: ng.sum_(a * b * a)),
    "matmul_2d": lambda r: ((a := _rng_param(r, 3, 4), b := _rng_param(r, 4, 2)), lambda: ng.sum_(ng.gelu(a @ b))),
    "matmul_batched": lambda r: (
        (a := _rng_param(r, 2, 3, 4), b := _rng_param(r, 2, 4, 3)),
        lambda: ng.sum_(ng.gelu(ng.matmul(a, b))),
    ),
    "matmul_weight": lambda r: ((a := _rng_param(r, 2, 5, 4), b := _rng_param(r, 4, 3)), lambda: ng.sum_(ng.gelu(a @ b))),
    "transpose": lambda r: ((a := _rng_param(r, 2, 3, 4),), lambda: ng.sum_(ng.transpose(a, (2, 0, 1)) * ng.const(np.arange(24.0).reshape(4, 2, 3)))),
    "reshape": lambda r: ((a := _rng_param(r, 2, 6),), lambda: ng.sum_(ng.gelu(ng.reshape(a, (3, 4))))),
    "concat": lambda r: ((a := _rng_param(r, 2, 3), b := _rng_param(r, 2, 2)), lambda: ng.sum_(ng.softmax(ng.concat([a, b], axis=1)) * ng.const(np.arange(10.0).reshape(2, 5)))),
    "slice": lambda r: ((a := _rng_param(r, 4, 5),), lambda: ng.sum_(ng.gelu(a[1:3, ::2]))),
    "take": lambda r: ((a := _rng_param(r, 4, 3),), lambda: ng.sum_(ng.gelu(ng.take(a, [0, 2, 2, 3], axis=0)))),
    "softmax": lambda r: ((a := _rng_param(r, 3, 5),), lambda: ng.sum_(ng.softmax(a) * ng.const(np.arange(15.0).reshape(3, 5)))),
    "layer_norm": lambda r: (
        (a := _rng_param(r, 3, 6), g := _rng_param(r, 6), b := _rng_param(r, 6)),
        lambda: ng.sum_(ng.gelu(ng.layer_norm(a, g, b))),
    ),
    "gelu": lambda r: ((a := _rng_param(r, 4, 3),), lambda: ng.sum_(ng.gelu(a) * a)),
    "relu": lambda r: ((a := ng.param(r.uniform(0.1, 1.0, size=(3, 3)) * r.choice([-1, 1], size=(3, 3))),), lambda: ng.sum_(ng.relu(a) * a)),
    "exp_log": lambda r: ((a := _rng_param(r, 5),), lambda: ng.sum_(ng.log(ng.exp(a) + 1.0))),
    "log1p": lambda r: ((a := ng.param(r.uniform(0.1, 2.0, size=5)),), lambda: ng.sum_(ng.log1p(a * a))),
    "mean": lambda r: ((a := _rng_param(r, 3, 4),), lambda: ng.sum_(ng.mean(a * a, axis=1) * ng.const([1.0, 2.0, 3.0]))),
    "max_pool": lambda r: ((a := _rng_param(r, 3, 5, 2),), lambda: ng.sum_(ng.max_pool(a, axis=1) * ng.const([[1.0, -2.0]]))),
    "l2_normalize": lambda r: ((a := _rng_param(r, 3, 4),), lambda: ng.sum_(ng.l2_normalize(a) * ng.const(np.arange(12.0).reshape(3, 4)))),
    "scalar_ops": lambda r: ((a := _rng_param(r, 4),), lambda: ng.sum_((-a * 3.0 + 2.0 - 1.0) / 4.0 * a)),
    "group_max": lambda r: (
        (a := _rng_param(r, 2, 6, 3),),
        lambda: ng.sum_(ng.group_max(a, [0, 0, 1, 2, 2, 2], 3) * ng.const(np.arange(9.0).reshape(3, 3))),
    ),
    "stack": lambda r: ((a := _rng_param(r, 3), b := _rng_param(r, 3)), lambda: ng.sum_(ng.gelu(ng.stack([a, b], axis=0)))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
@pytest.mark.parametrize("seed", [0, 1])
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(seed)
    params, f = PRIMITIVE_CASES[name](rng)
    rep = ng.grad_check(f, list(params), step=1e-5, tol=1e-6)
    assert rep.passed, (name, rep)


def test_grad_check_refines_kinks():
    # two entries 5e-6 apart: the max switches inside a +/-1e-4 window
    x = ng.param(np.array([[1.0, 1.0 - 5e-6, -3.0]]))
    f = lambda: ng.sum_(ng.max_pool(x, axis=1))
    raw = ng.grad_check(f, [x], step=1e-4, tol=1e-6, refine_kinks=False)
    assert not raw.passed
    rep = ng.grad_check(f, [x], step=1e-4, tol=1e-6)
    assert rep.passed and rep.n_refined >= 1


def test_grad_check_rejects_bad_step():
    x = ng.param([1.0])
    with pytest.raises(ValueError):
        ng.grad_check(lambda: ng.sum_(x * x), [x], step=1e-2)


def test_backward_visits_shared_node_once():
    x = ng.param([3.0])
    y = x * x
    z = y + y
    ng.backward(ng.sum_(z))
    assert x.grad.tolist() == [12.0]


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a": rng.normal(size=(2, 3)), "b.c": rng.normal(size=(4,)), "s": np.array(2.5)}
    path = tmp_path / "ck.bin"
    checkpoint.save(path, params)
    raw = path.read_bytes()
    header = raw[: raw.index(b"\n")]
    assert header.startswith(b'{"version":1,"params":[{"name":"a","shape":[2,3]}')
    assert len(raw) - len(header) - 1 == 8 * (6 + 4 + 1)
    back = checkpoint.load(path)
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k], params[k])


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "ck.bin"
    checkpoint.save(path, {"a": np.ones(4)})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        checkpoint.load(path)
