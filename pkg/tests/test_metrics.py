import numpy as np
import pytest

import oracles
from graspkit import metrics, shapes
from graspkit.geometry import GeometryError, TriMesh
from graspkit.metrics import GraspEvaluation


@pytest.fixture(scope="module")
def ball():
    return shapes.icosphere(0.03, 2)


def _ev(volume=0.0, disp=0.0, contact=True):
    return GraspEvaluation(0.0, 0.0, volume, disp, contact, metrics.is_success(volume, disp))


def test_depth_examples():
    block = shapes.box((0.04, 0.04, 0.04))
    assert metrics.penetration_depth(np.array([[0.1, 0, 0]]), block) == (0.0, 0.0)
    dmax, dmean = metrics.penetration_depth(np.array([[0.0, 0.0, 0.017], [0.0, 0.1, 0.0]]), block)
    assert dmax == pytest.approx(0.3, abs=1e-9)
    assert dmean == pytest.approx(0.3, abs=1e-9)


def test_depth_oracle(ball):
    pts = np.random.default_rng(0).uniform(-0.04, 0.04, (24, 3))
    depths = [min(oracles.point_triangle_distance(p, *ball.vertices[f]) for f in ball.faces)
              for p in pts if oracles.ray_parity_inside(ball, p)]
    dmax, dmean = metrics.penetration_depth(pts, ball)
    assert dmax == pytest.approx(100 * max(depths), rel=1e-9)
    assert dmean == pytest.approx(100 * np.mean(depths), rel=1e-9)
    assert dmax >= dmean >= 0


def test_volume_examples():
    a = shapes.box((0.05, 0.05, 0.05))
    b = shapes.box((0.05, 0.05, 0.05), center=(0.04, 0.0, 0.0))
    far = shapes.box((0.05, 0.05, 0.05), center=(0.2, 0.0, 0.0))
    layer = 5 * 5 * 0.5
    assert abs(metrics.penetration_volume(a, b) - 25.0) <= layer
    assert metrics.penetration_volume(a, far) == 0.0
    assert metrics.penetration_volume(a, a) == pytest.approx(125.0, abs=2 * layer)
    assert metrics.penetration_volume(a, b) == metrics.penetration_volume(b, a)


def test_volume_needs_watertight(ball):
    with pytest.raises(GeometryError):
        metrics.penetration_volume(TriMesh(ball.vertices, ball.faces[:-1]), ball)


def test_free_fall():
    obj = shapes.box((0.04, 0.04, 0.04))
    disp = metrics.simulate_displacement(None, obj)
    assert abs(disp - 490.5) <= 0.01 * 490.5
    assert metrics.simulate_displacement(None, obj, gravity=0.0) == 0.0


def _cage(inner, wall):
    """Closed box shell: outer box plus an inward-facing inner box."""
    outer = shapes.box((inner + 2 * wall,) * 3)
    hole = shapes.box((inner,) * 3)
    return shapes.merge([outer, TriMesh(hole.vertices, hole.faces[:, ::-1])])


def test_cage_holds_object():
    obj = shapes.box((0.04, 0.04, 0.04))
    cage = _cage(0.046, 0.01)
    free = metrics.simulate_displacement(None, obj)
    held = metrics.simulate_displacement(cage, obj)
    assert held * 10 <= free
    assert held < metrics.SUCCESS_DISPLACEMENT_CM


def test_rest_on_floor_is_stable():
    obj = shapes.box((0.04, 0.04, 0.04))
    floor = shapes.box((0.2, 0.2, 0.02), center=(0, 0, -0.0295))
    disp, traj = metrics.simulate_displacement(floor, obj, return_trajectory=True)
    assert disp < 1.0
    assert np.all(np.isfinite(traj))


def test_success_thresholds():
    assert metrics.is_success(4.9, 1.9)
    assert not metrics.is_success(5.0, 1.9)
    assert not metrics.is_success(4.9, 2.0)
    assert not metrics.is_success(0.0, 490.5)


def test_rates():
    evs = [_ev(contact=True), _ev(contact=True), _ev(contact=True), _ev(contact=False, disp=490.0)]
    assert metrics.contact_rate(evs) == 75.0
    assert metrics.contact_rate(evs[:3]) == 100.0
    assert metrics.contact_rate(evs[3:]) == 0.0
    assert metrics.success_rate(evs) == 75.0
    with pytest.raises(ValueError):
        metrics.contact_rate([])


def test_contact_oracle(ball):
    rng = np.random.default_rng(1)
    for k in range(6):
        pts = rng.uniform(-0.05, 0.05, (6, 3)) + [0.0, 0.0, 0.01 * k]
        expected = any(oracles.ray_parity_inside(ball, p) for p in pts)
        assert metrics.in_contact(pts, ball) == expected
    assert metrics.in_contact(ball.vertices[:1], ball)


def test_contact_rate_of_evaluations(ball):
    touching = TriMesh(ball.vertices * 0.9, ball.faces)
    away = TriMesh(ball.vertices + [0.2, 0, 0], ball.faces)
    evs = [metrics.evaluate_grasp(h, ball, duration=0.1) for h in (touching, away, away, touching)]
    assert metrics.contact_rate(evs) == 50.0
    # a detached hand cannot hold the object
    assert not evs[1].success


def test_diversity_closed_forms():
    v = np.random.default_rng(2).normal(size=(30, 3))
    assert metrics.diversity([v, v, v]) == 0.0
    d = 0.01
    assert metrics.diversity([v, v + d]) == pytest.approx(np.sqrt(30 * 3) * d * 100, rel=1e-12)
    with pytest.raises(ValueError):
        metrics.diversity([v])
    with pytest.raises(ValueError):
        metrics.diversity([v, v[:-1]])


def test_diversity_double_loop():
    rng = np.random.default_rng(3)
    meshes = [rng.normal(size=(20, 3)) for _ in range(5)]
    total = 0.0
    for i in range(5):
        for k in range(5):
            if i != k:
                total += np.sqrt(np.sum((meshes[i] - meshes[k]) ** 2)) * 100
    assert metrics.diversity(meshes) == pytest.approx(total / 20, rel=1e-12)
    assert metrics.diversity(meshes[::-1]) == pytest.approx(metrics.diversity(meshes), rel=1e-12)


def test_summary_keys():
    v = np.zeros((4, 3))
    s = metrics.summarize([_ev(1.0, 1.0), _ev(3.0, 3.0)], [v, v + 0.01])
    assert set(s) == {"Dep", "Vol", "Mean", "Var", "CR", "Div", "Sim-SR"}
    assert s["Vol"] == 2.0 and s["Mean"] == 2.0 and s["Var"] == 1.0
    assert s["Sim-SR"] == 50.0
