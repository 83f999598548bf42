import numpy as np
import pytest

from plvo.errors import IllPosed
from plvo.geometry import Pose, hessian_from_endpoints, project_normalized, quat_from_axis_angle, transform
from plvo.triangulation import (
    StereoFrame,
    _rotations,
    epipolar_distance,
    inverse_depth_line,
    inverse_depth_line_batch,
    inverse_depth_line_jacobian,
    inverse_depth_point,
    inverse_depth_point_batch,
    inverse_depth_point_trig_jacobian,
    line_endpoint_depth,
    plane_normal,
    point_depth_trig,
    triangulate_line_endpoint,
    triangulate_point_linear,
    triangulate_points_batch,
    validate_line_endpoint,
    validate_point,
)

from conftest import points_in_front, random_pose

SIDE = StereoFrame(Pose([-1.0, 0, 0]))


def epipolar_residual(p, q, stereo):
    E = np.cross(np.eye(3), stereo.t) @ stereo.R
    return float(np.r_[q, 1] @ E @ np.r_[p, 1])


def exact_pair(rng):
    stereo = StereoFrame(random_pose(rng, 0.3, 1.0))
    while stereo.baseline < 0.1:
        stereo = StereoFrame(random_pose(rng, 0.3, 1.0))
    while True:
        P = points_in_front(rng, 1)[0]
        Pc = transform(stereo.pose, P)
        if Pc[2] > 0.5:
            return project_normalized(P), project_normalized(Pc), P, stereo


def test_line_endpoint_worked_example():
    N = plane_normal([-0.5, -0.2], [-0.5, 0.3])
    np.testing.assert_allclose(N, [-0.5, 0, -0.25])
    res = triangulate_line_endpoint([0, 0], [[-0.5, -0.2], [-0.5, 0.3]], SIDE)
    assert res.depth == 2.0 and res.valid
    np.testing.assert_allclose(res.point, [0, 0, 2])


def test_line_endpoint_ill_posed_and_zero_baseline():
    # the current viewing plane contains the anchor ray direction
    with pytest.raises(IllPosed):
        triangulate_line_endpoint([0, 0], [[0, -0.5], [0, 0.5]], StereoFrame(Pose([0, 0, -1.0])))
    res = triangulate_line_endpoint([0, 0], [[-0.5, -0.2], [-0.5, 0.3]], StereoFrame(Pose.identity()))
    assert res.depth == 0 and not res.valid
    with pytest.raises(IllPosed):
        triangulate_line_endpoint([0, 0], [[0.1, 0.1], [0.1, 0.1]], SIDE)


def test_line_depth_normal_scale_invariance(rng):
    for _ in range(20):
        p, q, P, stereo = exact_pair(rng)
        N = rng.normal(size=3)
        z = line_endpoint_depth(p, N, stereo)
        for s in (-3.0, 1e-3, 250.0):
            assert line_endpoint_depth(p, s * N, stereo) == pytest.approx(z, rel=1e-12)


def test_line_endpoints_recovered(rng):
    for _ in range(100):
        p, q, P, stereo = exact_pair(rng)
        # a second point on the same 3D line, projected in the current frame
        P2 = P + rng.normal(size=3) * 0.5
        Pc2 = transform(stereo.pose, P2)
        if Pc2[2] < 0.3:
            continue
        e = np.stack([q, project_normalized(Pc2)])
        if np.linalg.norm(e[0] - e[1]) < 1e-3:
            continue
        try:
            res = triangulate_line_endpoint(p, e, stereo)
        except IllPosed:
            continue
        assert abs(res.depth - P[2]) < 1e-6 * max(1.0, P[2] * 100)


def test_linear_worked_example():
    res = triangulate_point_linear([0, 0], [-0.5, 0], SIDE)
    np.testing.assert_allclose(res.point, [0, 0, 2], atol=1e-12)
    np.testing.assert_allclose(res.corrected, [[0, 0], [-0.5, 0]], atol=1e-12)
    assert res.valid and res.depth_current == pytest.approx(2.0)


def test_linear_corrected_points_satisfy_epipolar():
    res = triangulate_point_linear([0, 0], [-0.5, 1e-3], SIDE)
    c = res.corrected
    assert np.linalg.norm(c[0] - [0, 0]) <= 1e-3
    assert np.linalg.norm(c[1] - [-0.5, 1e-3]) <= 1e-3
    assert abs(epipolar_residual(c[0], c[1], SIDE)) < 1e-12


def test_linear_no_parallax():
    with pytest.raises(IllPosed):
        triangulate_point_linear([0.1, 0.1], [0.1, 0.1], StereoFrame(Pose.identity()))


def test_trig_worked_example():
    # beta = 90 deg, alpha = atan(2) = 63.435 deg, lambda = 2
    assert point_depth_trig([0, 0], [-0.5, 0], SIDE) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(IllPosed):
        # both rays parallel to the baseline
        point_depth_trig([0, 0], [0, 0], StereoFrame(Pose([0, 0, -1.0])))


def test_trig_equals_linear_on_exact_pairs(rng):
    worst = 0.0
    for _ in range(100):
        p, q, P, stereo = exact_pair(rng)
        z_lin = triangulate_point_linear(p, q, stereo).depth
        worst = max(worst, abs(point_depth_trig(p, q, stereo) - z_lin), abs(z_lin - P[2]))
    assert worst <= 1e-6


def test_baseline_covariance():
    P = np.array([0.3, -0.2, 4.0])
    for s in (0.5, 2.0, 7.0):
        stereo = StereoFrame(Pose([-s * 0.2, 0.05 * s, 0]))
        q = project_normalized(P + stereo.t)
        assert point_depth_trig(project_normalized(P), q, stereo) == pytest.approx(4.0, rel=1e-9)
        # scaling t alone scales the recovered depth
        scaled = StereoFrame(Pose(2 * stereo.t))
        assert point_depth_trig(project_normalized(P), q, scaled) == pytest.approx(8.0, rel=1e-9)


def test_validation():
    line = hessian_from_endpoints([-0.5, -0.2], [-0.5, 0.3])
    assert validate_line_endpoint([0, 0], 2.0, line, SIDE)
    # a line 0.1 normalized units away exceeds 2 px at fx = 500
    off = hessian_from_endpoints([-0.6, -0.2], [-0.6, 0.3])
    assert not validate_line_endpoint([0, 0], 2.0, off, SIDE, tol_px=2.0, fx=500)
    # invalid depths fall back to the arbitrary positive depth
    assert validate_line_endpoint([0, 0], -3.0, hessian_from_endpoints([-1, -1], [-1, 1]), SIDE)
    res = triangulate_point_linear([0, 0], [-0.5, 0.5 / 500], SIDE)
    assert validate_point([0, 0], [-0.5, 0.5 / 500], res, tol_px=2.0, fx=500)
    bad = triangulate_point_linear([0, 0], [-0.5, 0.05], SIDE)
    assert not validate_point([0, 0], [-0.5, 0.05], bad, tol_px=2.0, fx=500)
    assert epipolar_distance([0, 0], [-0.5, 0.01], SIDE) == pytest.approx(0.01)


def test_closed_form_jacobians(rng):
    h = 1e-6
    for _ in range(50):
        p, q, P, stereo = exact_pair(rng)
        params = np.r_[p, q, stereo.pose.minimal()]
        rho, J = inverse_depth_point_trig_jacobian(params)
        assert rho == pytest.approx(inverse_depth_point(params), rel=1e-9)
        fd = np.array([(inverse_depth_point_trig_jacobian(params + e)[0]
                        - inverse_depth_point_trig_jacobian(params - e)[0]) / (2 * h) for e in np.eye(10) * h])
        np.testing.assert_allclose(J, fd, rtol=1e-4, atol=1e-6)

        e2 = q + rng.normal(size=2) * 0.2
        lp = np.r_[p, q, e2, stereo.pose.minimal()]
        rho, J = inverse_depth_line_jacobian(lp)
        assert rho == pytest.approx(inverse_depth_line(lp), rel=1e-12)
        fd = np.array([(inverse_depth_line(lp + e) - inverse_depth_line(lp - e)) / (2 * h) for e in np.eye(12) * h])
        np.testing.assert_allclose(J, fd, rtol=1e-4, atol=1e-6)


def test_batch_forms_equal_scalar(rng):
    rows_p, rows_l = [], []
    for _ in range(40):
        p, q, P, stereo = exact_pair(rng)
        q_noisy = q + rng.normal(0, 1e-3, 2)
        rows_p.append(np.r_[p, q_noisy, stereo.pose.minimal()])
        rows_l.append(np.r_[p, q, q + rng.normal(size=2) * 0.2, stereo.pose.minimal()])
    rows_p, rows_l = np.array(rows_p), np.array(rows_l)
    np.testing.assert_allclose(inverse_depth_point_batch(rows_p), [inverse_depth_point(r) for r in rows_p], rtol=1e-10)
    np.testing.assert_allclose(inverse_depth_line_batch(rows_l), [inverse_depth_line(r) for r in rows_l], rtol=1e-10)
    np.testing.assert_allclose(_rotations(rows_p[:, 7:10]), [Pose.from_minimal(r[4:10]).R for r in rows_p], atol=1e-15)
    X, Xc, valid = triangulate_points_batch(rows_p[:, :2], rows_p[:, 2:4], _rotations(rows_p[:, 7:10]), rows_p[:, 4:7])
    for r, x, ok in zip(rows_p, X, valid):
        ref = triangulate_point_linear(r[:2], r[2:4], StereoFrame(Pose.from_minimal(r[4:10])))
        assert ok == ref.valid
        np.testing.assert_allclose(x, ref.point, rtol=1e-9)


def test_batch_ill_posed_rows_are_nan():
    zero_baseline = np.r_[0.1, 0.1, 0.1, 0.1, 0, 0, 0, 0, 0, 0]
    assert np.isnan(inverse_depth_point_batch(zero_baseline[None])).all()
    parallel = np.r_[0, 0, 0, -0.5, 0, 0.5, 0, 0, -1.0, 0, 0, 0]
    assert np.isnan(inverse_depth_line_batch(parallel[None])).all()
