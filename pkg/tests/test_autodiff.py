import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graspkit import autodiff as ad
from graspkit.autodiff import Tensor, finite_difference_check


def rng(seed=0):
    return np.random.default_rng(seed)


def test_sigmoid_at_zero():
    x = Tensor(0.0, requires_grad=True)
    y = ad.sigmoid(x)
    y.backward()
    assert y.item() == 0.5
    assert x.grad == pytest.approx(0.25)


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == 6.0


def test_identity_rotation():
    R = ad.axis_angle_to_rotation(np.zeros(3)).data
    assert np.array_equal(R, np.eye(3))


def test_matmul_fd():
    r = rng(1)
    A, B = r.normal(size=(4, 5)), r.normal(size=(5, 3))
    W = r.normal(size=(4, 3))
    assert finite_difference_check(lambda a: (ad.matmul(a, Tensor(B)) * W).sum(), A) < 1e-6
    assert finite_difference_check(lambda b: (ad.matmul(Tensor(A), b) * W).sum(), B) < 1e-6


def test_constant_graph_gives_zero_grads():
    x = Tensor(np.ones(3))
    y = (x * 2.0).sum()
    assert y.requires_grad is False
    (g,) = ad.grad(y, [x])
    assert np.array_equal(g, np.zeros(3))


def test_unused_input_zero_grad():
    x, z = Tensor(np.ones(2), True), Tensor(np.ones(2), True)
    gx, gz = ad.grad((x * x).sum(), [x, z])
    assert np.array_equal(gz, np.zeros(2))
    assert np.array_equal(gx, 2 * np.ones(2))


def test_non_scalar_backward_raises():
    x = Tensor(np.ones(3), True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_topological_order_inputs_first():
    a = Tensor(1.0, True)
    b = a * 2.0
    c = b + a
    d = c * b
    order = ad.topological_order(d)
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for p in node._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(node)]


def test_shared_subexpression_accumulates():
    x = Tensor(2.0, True)
    y = x * x
    (y + y).backward()
    assert x.grad == 8.0


_UNARY = {
    "relu": (ad.relu, lambda r: r.uniform(0.1, 2, 6) * r.choice([-1, 1], 6)),
    "sigmoid": (ad.sigmoid, lambda r: r.normal(size=6)),
    "tanh": (ad.tanh, lambda r: r.normal(size=6)),
    "log": (ad.log, lambda r: r.uniform(0.2, 3, 6)),
    "exp": (ad.exp, lambda r: r.normal(size=6)),
    "sqrt": (ad.sqrt, lambda r: r.uniform(0.2, 3, 6)),
    "acos": (ad.acos, lambda r: r.uniform(-0.9, 0.9, 6)),
    "abs": (ad.tabs, lambda r: r.uniform(0.1, 2, 6) * r.choice([-1, 1], 6)),
    "clamp": (lambda t: ad.clamp(t, -0.5, 0.5), lambda r: r.choice([-1, 1], 6) * r.uniform(0.6, 1, 6) * r.choice([1, 0.3], 6)),
    "power": (lambda t: ad.power(t, 3.0), lambda r: r.normal(size=6)),
    "mean": (lambda t: ad.mean(t * t), lambda r: r.normal(size=6)),
    "rodrigues": (ad.axis_angle_to_rotation, lambda r: r.normal(size=(4, 3))),
    "rodrigues_small": (ad.axis_angle_to_rotation, lambda r: 1e-3 * r.normal(size=(4, 3))),
}


@pytest.mark.parametrize("name", sorted(_UNARY))
def test_unary_ops_fd(name):
    fn, draw = _UNARY[name]
    for seed in range(5):
        r = rng(seed)
        x = draw(r)
        w = r.normal(size=fn(Tensor(x)).shape)
        assert finite_difference_check(lambda t: (fn(t) * w).sum(), x) < 1e-5


def test_binary_ops_fd_with_broadcast():
    r = rng(3)
    a, b = r.normal(size=(3, 4)), r.uniform(0.5, 2, size=(4,))
    w = r.normal(size=(3, 4))
    for op in (ad.add, ad.sub, ad.mul, ad.div):
        assert finite_difference_check(lambda t: (op(t, Tensor(b)) * w).sum(), a) < 1e-6
        assert finite_difference_check(lambda t: (op(Tensor(a), t) * w).sum(), b) < 1e-6


def test_structural_ops_fd():
    r = rng(4)
    x = r.normal(size=(2, 3, 4))
    w_stack, w_t = Tensor(r.normal(size=(2, 2, 3, 4))), Tensor(r.normal(size=(4, 2, 3)))
    checks = [
        lambda t: (ad.concat([t, t * 2.0], axis=1) ** 2).sum(),
        lambda t: (ad.stack([t, t], axis=0) * w_stack).sum(),
        lambda t: (ad.broadcast_to(t[:, :1], (2, 5, 4)) ** 2).sum(),
        lambda t: (ad.reshape(t, (6, 4)) @ Tensor(np.arange(8.0).reshape(4, 2))).sum(),
        lambda t: (ad.transpose(t, (2, 0, 1)) * w_t).sum(),
        lambda t: (ad.take(t, np.array([0, 2, 2]), axis=1) ** 2).sum(),
        lambda t: (ad.max_pool_over_points(t) ** 2).sum(),
        lambda t: (t.sum(axis=1) ** 2).sum(),
    ]
    for f in checks:
        assert finite_difference_check(f, x) < 1e-6


def test_batch_norm_eval_fd():
    r = rng(5)
    x = r.normal(size=(2, 7, 3))
    mean, var = r.normal(size=3), r.uniform(0.5, 2, 3)
    gamma, beta = r.normal(size=3), r.normal(size=3)
    w = r.normal(size=x.shape)
    f = lambda t: (ad.batch_norm_eval(t, mean, var, Tensor(gamma), Tensor(beta)) * w).sum()
    assert finite_difference_check(f, x) < 1e-6
    g = lambda t: (ad.batch_norm_eval(Tensor(x), mean, var, t, Tensor(beta)) * w).sum()
    assert finite_difference_check(g, gamma) < 1e-6


def test_bn_relu_matches_composition():
    r = rng(6)
    x = Tensor(r.normal(size=(2, 9, 4)), True)
    mean, var = r.normal(size=4), r.uniform(0.5, 2, 4)
    gamma, beta = Tensor(r.normal(size=4), True), Tensor(r.normal(size=4), True)
    w = r.normal(size=(2, 9, 4))
    fused = (ad.bn_relu(x, mean, var, gamma, beta) * w).sum()
    plain = (ad.relu(ad.batch_norm_eval(x, mean, var, gamma, beta)) * w).sum()
    assert fused.item() == pytest.approx(plain.item(), rel=1e-12)
    for a, b in zip(ad.grad(fused, [x, gamma, beta]), ad.grad(plain, [x, gamma, beta])):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_dense_bn_relu_max_matches_composition():
    r = rng(7)
    x = Tensor(r.normal(size=(3, 11, 5)), True)
    W, b = Tensor(r.normal(size=(5, 6)), True), Tensor(r.normal(size=6), True)
    mean, var = r.normal(size=6), r.uniform(0.5, 2, 6)
    gamma, beta = Tensor(r.uniform(0.5, 1.5, 6), True), Tensor(r.normal(size=6), True)
    w = r.normal(size=(3, 6))
    fused = (ad.dense_bn_relu_max(x, W, b, mean, var, gamma, beta) * w).sum()
    h = ad.relu(ad.batch_norm_eval(ad.matmul(x, W) + b, mean, var, gamma, beta))
    plain = (ad.max_pool_over_points(h) * w).sum()
    assert fused.item() == pytest.approx(plain.item(), rel=1e-12)
    params = [x, W, b, gamma, beta]
    for a, c in zip(ad.grad(fused, params), ad.grad(plain, params)):
        np.testing.assert_allclose(a, c, rtol=1e-9, atol=1e-12)


def test_acos_is_clamped_at_the_ends():
    x = Tensor(np.array([1.0, -1.0]), True)
    y = ad.acos(x)
    assert np.all(np.isfinite(y.data))
    y.sum().backward()
    assert np.all(np.isfinite(x.grad))


def test_backward_is_deterministic():
    r = rng(8)
    x0 = r.normal(size=(5, 3))

    def grads():
        x = Tensor(x0, True)
        loss = (ad.sigmoid(ad.matmul(x, Tensor(np.ones((3, 2))))) ** 2).sum()
        return ad.grad(loss, [x])[0]

    assert np.array_equal(grads(), grads())


def test_fd_check_quadratic_and_relu():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    quad = lambda t: (t * ad.matmul(Tensor(A), t)).sum()
    assert finite_difference_check(quad, np.array([[0.3], [-0.7]])) < 1e-8
    assert finite_difference_check(lambda t: ad.relu(t).sum(), np.array([2.0, -3.0])) < 1e-8


# ---------------------------------------------------------------- adam


def test_adam_zero_gradient():
    p = [np.array([1.0, -2.0])]
    new, state = ad.adam_step(p, [np.zeros(2)], ad.AdamState(), lr=0.1)
    assert np.array_equal(new[0], p[0])
    assert state.t == 1


def test_adam_one_step_hand_computed():
    g = np.array([0.5, -2.0])
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    new, _ = ad.adam_step([np.zeros(2)], [g], ad.AdamState(), lr, b1, b2, eps)
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    np.testing.assert_allclose(new[0], -lr * m_hat / (np.sqrt(v_hat) + eps), rtol=1e-14)
    # the first step is about -lr * sign(g)
    np.testing.assert_allclose(new[0], -lr * np.sign(g), rtol=1e-6)


def test_adam_constant_gradient_descends():
    p, state = [np.array([0.0])], ad.AdamState()
    for _ in range(50):
        p, state = ad.adam_step(p, [np.array([3.0])], state)
    assert p[0][0] < 0


def test_adam_lr_zero_is_identity():
    x = Tensor(np.array([0.3, 0.1]), True)
    opt = ad.Adam([x], lr=0.0)
    before = x.data.copy()
    for _ in range(3):
        opt.zero_grad()
        (x * x).sum().backward()
        opt.step()
    assert np.array_equal(x.data, before)
    assert opt.state.t == 3


def test_adam_does_not_mutate_inputs():
    p, g = np.array([1.0]), np.array([1.0])
    ad.adam_step([p], [g], ad.AdamState())
    assert p[0] == 1.0 and g[0] == 1.0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)))
def test_sum_of_squares_gradient_property(x):
    t = Tensor(x, True)
    (t * t).sum().backward()
    np.testing.assert_allclose(t.grad, 2 * x)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    arrays_in = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(2.5)}
    path = tmp_path / "x.ckpt"
    ad.save_checkpoint(path, arrays_in, {"type": "t", "lr": 1e-4})
    manifest, out = ad.load_checkpoint(path)
    assert path.read_bytes()[:8] == b"C2GCKPT1"
    assert manifest["lr"] == 1e-4
    for k in arrays_in:
        assert np.array_equal(out[k], arrays_in[k])


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\0" * 8)
    with pytest.raises(ValueError, match="magic"):
        ad.load_checkpoint(path)
