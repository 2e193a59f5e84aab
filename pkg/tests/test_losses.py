import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from graspkit import autodiff as ad
from graspkit import losses, shapes
from graspkit.geometry import GeometryError, TriMesh

N = 16
REL = 1e-9


def _rel(a, b):
    return abs(float(a) - float(b)) / max(abs(float(b)), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="module")
def ball():
    return shapes.icosphere(0.03, 2)


# ---------------------------------------------------------------- contact terms


def test_bce_examples():
    gt = np.array([0.0, 1.0] * 4)
    assert losses.bce_loss(gt, gt).data < 8 * 2e-7
    assert losses.bce_loss(np.full(8, 0.5), gt).data == pytest.approx(8 * math.log(2), rel=1e-12)


def test_bce_oracle(rng):
    p, y = rng.uniform(0, 1, N), (rng.uniform(size=N) > 0.5).astype(float)
    assert _rel(losses.bce_loss(p, y).data, oracles.bce(p, y)) < REL


def test_bce_size_mismatch():
    with pytest.raises(ValueError):
        losses.bce_loss(np.zeros(3), np.zeros(4))


def test_dice_examples():
    gt = np.array([1.0, 1.0, 0.0, 0.0])
    assert losses.dice_loss(gt, gt).data == pytest.approx(0.0, abs=1e-7)
    assert losses.dice_loss(gt[::-1], gt).data == pytest.approx(1.0)


def test_dice_oracle(rng):
    p, y = rng.uniform(0, 1, N), rng.uniform(0, 1, N)
    assert _rel(losses.dice_loss(p, y).data, oracles.dice(p, y)) < REL


def test_kl_examples():
    assert losses.kl_loss(np.zeros(64), np.zeros(64)).data == 0.0
    mu = np.zeros(64)
    mu[5] = 1.0
    assert losses.kl_loss(mu, np.zeros(64)).data == pytest.approx(0.5)


def test_kl_direct(rng):
    mu, lv = rng.normal(size=64), rng.normal(size=64)
    expected = sum(-0.5 * (1 + l - m * m - math.exp(l)) for m, l in zip(mu, lv))
    assert _rel(losses.kl_loss(mu, lv).data, expected) < REL


def test_contact_loss_weights_and_sum(rng):
    assert losses.CONTACT_WEIGHTS == (0.5, 0.5, 1e-3)
    p, y = rng.uniform(0, 1, N), rng.uniform(0, 1, N)
    mu, lv = rng.normal(size=64), rng.normal(size=64)
    manual = 0.5 * oracles.bce(p, y) + 0.5 * oracles.dice(p, y) + 1e-3 * losses.kl_loss(mu, lv).data
    assert _rel(losses.contact_loss(p, y, mu, lv).data, manual) < REL
    z = np.zeros(64)
    assert losses.contact_loss(y.round(), y.round(), z, z).data < 1e-5


def test_batch_is_mean(rng):
    p, y = rng.uniform(0, 1, (3, N)), rng.uniform(0, 1, (3, N))
    per = [losses.bce_loss(p[i], y[i]).data for i in range(3)]
    assert losses.bce_loss(p, y).data == pytest.approx(np.mean(per), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    r = np.random.default_rng(seed)
    p, y = r.uniform(0, 1, N), r.uniform(0, 1, N)
    perm = r.permutation(N)
    for fn in (losses.bce_loss, losses.dice_loss):
        a, b = fn(p, y).data, fn(p[perm], y[perm]).data
        assert a >= 0
        assert a == pytest.approx(b, rel=1e-12)


# ---------------------------------------------------------------- grasp terms


def test_vertex_loss(rng):
    v = rng.normal(size=(N, 3))
    assert losses.vertex_loss(v, v).data == 0.0
    assert losses.vertex_loss(v + [0.01, 0, 0], v).data == pytest.approx(1e-4, rel=1e-9)
    w = rng.normal(size=(N, 3))
    expected = sum(sum((a[k] - b[k]) ** 2 for k in range(3)) for a, b in zip(v, w)) / N
    assert _rel(losses.vertex_loss(v, w).data, expected) < REL
    with pytest.raises(ValueError):
        losses.vertex_loss(v, v[:-1])


def test_chamfer(rng):
    assert losses.chamfer_loss(np.zeros((1, 3)), np.array([[0.0, 0.0, 0.02]])).data == pytest.approx(2 * 0.02 ** 2)
    h = rng.normal(size=(N, 3))
    assert losses.chamfer_loss(h, h).data == 0.0
    o = rng.normal(size=(N + 5, 3))
    assert _rel(losses.chamfer_loss(h, o).data, oracles.chamfer(h, o)) < REL
    with pytest.raises(ValueError):
        losses.chamfer_loss(np.zeros((0, 3)), o)


def test_penetration_examples(ball):
    outside = np.array([[0.05, 0, 0], [0, -0.06, 0]])
    assert losses.penetration_loss(outside, ball).data == 0.0
    block = shapes.box((0.04, 0.04, 0.04))
    v = np.array([[0.0, 0.0, 0.018]])
    assert losses.penetration_loss(v, block).data == pytest.approx(0.002, abs=1e-12)


def test_penetration_oracle(ball, rng):
    h = rng.uniform(-0.04, 0.04, (N, 3))
    expected = oracles.penetration(h, ball)
    assert expected > 0
    assert _rel(losses.penetration_loss(h, ball).data, expected) < REL


def test_penetration_requires_watertight(ball):
    open_mesh = TriMesh(ball.vertices, ball.faces[:-1])
    with pytest.raises(GeometryError):
        losses.penetration_loss(np.zeros((2, 3)), open_mesh)


def test_translation_loss(rng):
    a = np.zeros(51)
    b = a.copy()
    b[:3] = [0.01, 0.0, -0.02]
    assert losses.translation_loss(a, a).data == 0.0
    assert losses.translation_loss(b, a).data == pytest.approx(0.03)
    c, d = rng.normal(size=51), rng.normal(size=51)
    assert _rel(losses.translation_loss(c, d).data, sum(abs(c[k] - d[k]) for k in range(3))) < REL


def test_geodesic_examples():
    a = np.zeros(51)
    assert losses.geodesic_pose_loss(a, a).data <= 16 * math.sqrt(2e-7) * (1 + 1e-6)
    b = a.copy()
    b[3 + 3 * 7 + 2] = math.pi
    # the 15 untouched joints each contribute the clamp floor
    assert losses.geodesic_pose_loss(b, a).data == pytest.approx(math.pi, abs=16 * math.sqrt(2e-7))


def test_geodesic_oracle(rng):
    a, b = rng.normal(0, 0.8, 51), rng.normal(0, 0.8, 51)
    assert losses.geodesic_pose_loss(a, b).data == pytest.approx(oracles.geodesic(a, b), abs=1e-6)


def test_geodesic_symmetry_and_sign_flip(rng):
    a, b = rng.normal(0, 0.8, 51), rng.normal(0, 0.8, 51)
    assert losses.geodesic_pose_loss(a, b).data == pytest.approx(losses.geodesic_pose_loss(b, a).data, abs=1e-12)
    # r and r - 2*pi*r/|r| are the same rotation
    flipped = a.copy()
    r = a[3:6]
    flipped[3:6] = r - 2 * math.pi * r / np.linalg.norm(r)
    assert losses.geodesic_pose_loss(flipped, b).data == pytest.approx(losses.geodesic_pose_loss(a, b).data, abs=1e-6)


def test_contact_from_mesh_values():
    cloud = np.array([[0.005, 0, 0], [0.2, 0, 0]])
    c = losses.contact_from_mesh(np.zeros((1, 3)), cloud).data
    assert c[0] == pytest.approx(0.5, abs=1e-9)
    assert c[1] < 1e-12
    with pytest.raises(ValueError):
        losses.contact_from_mesh(np.zeros((1, 3)), cloud, s=0.0)


def test_consistency(rng):
    hand = rng.uniform(-0.01, 0.01, (N, 3))
    cloud = rng.uniform(-0.012, 0.012, (N, 3))
    same = losses.contact_from_mesh(hand, cloud).data
    assert losses.consistency_loss(same, hand, cloud).data == 0.0
    c = rng.uniform(0, 1, N)
    assert _rel(losses.consistency_loss(c, hand, cloud).data, oracles.consistency(c, hand, cloud)) < REL
    # every point touching the hand with a wide offset gives C'' = 1
    near = np.zeros((N, 3))
    assert losses.consistency_loss(np.zeros(N), near, near, t=0.05).data == pytest.approx(N, rel=1e-12)


def test_grasp_weights_and_sum(ball, rng):
    assert losses.GRASP_WEIGHTS == {"vertex": 35.0, "chamfer": 20.0, "penetration": 5.0,
                                    "translation": 0.1, "pose": 0.1, "consistency": 0.05}
    pv, gv = rng.uniform(-0.04, 0.04, (N, 3)), rng.uniform(-0.04, 0.04, (N, 3))
    cloud = rng.uniform(-0.03, 0.03, (N, 3))
    pt, gt = rng.normal(0, 0.3, 51), rng.normal(0, 0.3, 51)
    c = rng.uniform(0, 1, N)
    total, terms = losses.grasp_loss(pv, gv, cloud, ball, pt, gt, c)
    manual = sum(losses.GRASP_WEIGHTS[k] * terms[k].data for k in terms)
    assert _rel(total.data, manual) < 1e-12
    assert all(t.data >= 0 for t in terms.values())
    far = gv + [0.5, 0, 0]
    zero_total, _ = losses.grasp_loss(far, far, far, ball, gt, gt, losses.contact_from_mesh(far, far).data)
    assert zero_total.data <= 0.1 * 16 * math.sqrt(2e-7) * (1 + 1e-6)


# ---------------------------------------------------------------- gradients


def _grad_cases(ball):
    r = np.random.default_rng(11)
    y = r.uniform(0.05, 0.95, N)
    cloud = r.uniform(-0.012, 0.012, (N, 3))
    theta_b = r.normal(0, 0.5, (1, 51))
    c = r.uniform(0, 1, N)
    return [
        ("bce", lambda t: losses.bce_loss(t, y), r.uniform(0.1, 0.9, N)),
        ("dice", lambda t: losses.dice_loss(t, y), r.uniform(0.1, 0.9, N)),
        ("kl", lambda t: losses.kl_loss(t, np.full(8, 0.3)), r.normal(size=8)),
        ("vertex", lambda t: losses.vertex_loss(t, cloud), r.normal(0, 0.01, (N, 3))),
        ("chamfer", lambda t: losses.chamfer_loss(t, cloud), r.normal(0, 0.01, (N, 3))),
        ("penetration", lambda t: losses.penetration_loss(t, ball), r.uniform(-0.02, 0.02, (N, 3))),
        ("translation", lambda t: losses.translation_loss(t, theta_b), r.normal(0, 0.5, (1, 51))),
        ("geodesic", lambda t: losses.geodesic_pose_loss(t, theta_b), r.normal(0, 0.5, (1, 51))),
        ("contact_from_mesh", lambda t: (losses.contact_from_mesh(t, cloud) * c).sum(), r.uniform(-0.01, 0.01, (N, 3))),
        ("consistency", lambda t: losses.consistency_loss(c, t, cloud), r.uniform(-0.01, 0.01, (N, 3))),
    ]


@pytest.mark.parametrize("case", range(10))
def test_loss_gradients(ball, case):
    name, f, x = _grad_cases(ball)[case]
    assert ad.finite_difference_check(f, x) < 1e-4, name
