import numpy as np
import pytest

from plvo.errors import InsufficientMatches, ZeroBaseline
from plvo.geometry import Pose, hessian_from_endpoints, inverse, project_normalized, quat_angle, quat_from_axis_angle, transform
from plvo.robust_pose import (
    FAMILIES,
    MatchSets,
    PoseWithCovariance,
    SolverConfig,
    check_degeneracy,
    estimate_pose,
    family_residuals,
    residual_line_2d_to_3d,
    residual_line_3d_to_2d,
    residual_point_2d_to_2d,
    residual_point_2d_to_3d,
    residual_point_3d_to_2d,
    robust_scale,
    tukey_weight,
    velocity_fallback,
)

from conftest import points_in_front, random_pose

TRUE = Pose([0.1, 0.0, 0.05], quat_from_axis_angle([0, 1, 0], np.radians(5)))


def synthetic_matches(rng, pose, n=20, families=FAMILIES, noise=0.0):
    """Exact (or noisy) matches of every requested family for one frame pair."""
    kw = {}
    if "S1" in families:
        P = points_in_front(rng, n)
        kw["s1_P"] = P
        kw["s1_p"] = project_normalized(transform(pose, P)) + rng.normal(0, noise, (n, 2))
    if "S2" in families:
        Pc = points_in_front(rng, n)
        kw["s2_P"] = Pc
        kw["s2_p"] = project_normalized(transform(inverse(pose), Pc)) + rng.normal(0, noise, (n, 2))
    if "S3" in families:
        E = points_in_front(rng, 2 * n).reshape(n, 2, 3)
        x = project_normalized(transform(pose, E.reshape(-1, 3))).reshape(n, 2, 2)
        kw["s3_P"] = E
        kw["s3_l"] = np.array([hessian_from_endpoints(*e) for e in x])
    if "S4" in families:
        E = points_in_front(rng, 2 * n).reshape(n, 2, 3)
        x = project_normalized(transform(inverse(pose), E.reshape(-1, 3))).reshape(n, 2, 2)
        kw["s4_P"] = E
        kw["s4_l"] = np.array([hessian_from_endpoints(*e) for e in x])
    if "S5" in families:
        P = points_in_front(rng, n)
        kw["s5_p"] = project_normalized(P)
        kw["s5_q"] = project_normalized(transform(pose, P))
    return MatchSets(**kw)


def pose_error(a, b):
    d = inverse(a) @ b
    return np.linalg.norm(d.t), quat_angle(d.q)


# -- single-match residuals --------------------------------------------------

def test_point_3d_to_2d_examples():
    np.testing.assert_allclose(residual_point_3d_to_2d([0, 0, 2], [0, 0], Pose.identity()), [0, 0])
    pose = Pose([0.2, 0, 0])
    np.testing.assert_allclose(residual_point_3d_to_2d([0, 0, 2], [0.1, 0], pose), [0, 0], atol=1e-15)
    np.testing.assert_allclose(residual_point_3d_to_2d([0, 0, 2], [0.15, 0], pose), [0.05, 0], atol=1e-15)


def test_point_2d_to_3d_examples(rng):
    np.testing.assert_allclose(residual_point_2d_to_3d([0, 0], [0, 0, 2], Pose.identity()), [0, 0])
    np.testing.assert_allclose(residual_point_2d_to_3d([0, 0], [0.2, 0, 2], Pose([0.2, 0, 0])), [0, 0], atol=1e-15)
    pose = random_pose(rng)
    P, p = np.array([0.3, -0.2, 3.0]), np.array([0.05, 0.1])
    np.testing.assert_allclose(residual_point_2d_to_3d(p, P, pose),
                               residual_point_3d_to_2d(P, p, inverse(pose)))


def test_line_3d_to_2d_examples():
    x_axis = np.array([0.0, 1.0, 0.0])
    P1, P2 = np.array([0, 0, 2.0]), np.array([1, 0, 2.0])
    np.testing.assert_allclose(residual_line_3d_to_2d(P1, P2, x_axis, Pose.identity()), [0, 0])
    P1, P2 = np.array([0, 0.2, 2.0]), np.array([1, 0.2, 2.0])
    np.testing.assert_allclose(residual_line_3d_to_2d(P1, P2, x_axis, Pose.identity()), [0.1, 0.1])
    np.testing.assert_allclose(residual_line_3d_to_2d(P1, P2, x_axis, Pose([0, -0.2, 0])), [0, 0], atol=1e-15)
    np.testing.assert_allclose(residual_line_2d_to_3d(x_axis, P1, P2, Pose([0, 0.2, 0])), [0, 0], atol=1e-15)


def test_point_2d_to_2d_examples(rng):
    lam = 0.01
    pose = Pose([1, 0, 0])
    assert residual_point_2d_to_2d([0, 0], [0.5, 0], pose, lam) == pytest.approx(0.0, abs=1e-15)
    # triple product by hand: bracket = (0 - 0, 0 - 1, 1*0.1 - 0) = (0, -1, 0.1); R p = (0, 0, 1)
    assert residual_point_2d_to_2d([0, 0], [0.5, 0.1], pose, lam) == pytest.approx(lam * 0.1)
    with pytest.raises(ZeroBaseline):
        residual_point_2d_to_2d([0, 0], [0, 0], Pose.identity(), lam)
    # vanishes on exact pairs under the forward convention
    for _ in range(50):
        pose = random_pose(rng)
        P = points_in_front(rng, 1)[0]
        r = residual_point_2d_to_2d(project_normalized(P), project_normalized(transform(pose, P)), pose)
        assert abs(r) < 1e-14


def test_epipolar_example_with_paper_baseline():
    # camera moves to C2 = (1, 0, 0); P = (0, 0, 2) appears at (-0.5, 0) in the second view
    pose = Pose([-1, 0, 0])
    assert residual_point_2d_to_2d([0, 0], [-0.5, 0], pose) == pytest.approx(0.0, abs=1e-15)
    assert residual_point_2d_to_2d([0, 0], [-0.5, 0.1], pose) != 0.0


# -- vectorized residuals and Jacobians ----------------------------------------

def test_family_residuals_match_reference_forms(rng):
    pose = random_pose(rng, 0.3, 0.3)
    m = synthetic_matches(rng, random_pose(rng, 0.3, 0.3), n=5)
    res = family_residuals(m, pose.minimal(), 0.01)
    for i in range(5):
        np.testing.assert_allclose(res["S1"][0][i], residual_point_3d_to_2d(m.s1_P[i], m.s1_p[i], pose), atol=1e-14)
        np.testing.assert_allclose(res["S2"][0][i], residual_point_2d_to_3d(m.s2_p[i], m.s2_P[i], pose), atol=1e-14)
        np.testing.assert_allclose(res["S3"][0][i], residual_line_3d_to_2d(*m.s3_P[i], m.s3_l[i], pose), atol=1e-14)
        np.testing.assert_allclose(res["S4"][0][i], residual_line_2d_to_3d(m.s4_l[i], *m.s4_P[i], pose), atol=1e-14)
        assert res["S5"][0][i, 0] == pytest.approx(residual_point_2d_to_2d(m.s5_p[i], m.s5_q[i], pose), abs=1e-15)


def test_jacobians_against_finite_differences(rng):
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        m = synthetic_matches(rng, random_pose(rng, 0.3, 0.5), n=3)
        xi = random_pose(rng, 0.3, 0.5).minimal()
        res = family_residuals(m, xi, 0.01)
        for fam, (_, J, valid) in res.items():
            fd = np.empty_like(J)
            for k in range(6):
                e = np.zeros(6)
                e[k] = h
                fd[..., k] = (family_residuals(m, xi + e, 0.01)[fam][0] - family_residuals(m, xi - e, 0.01)[fam][0]) / (2 * h)
            scale = np.maximum(np.abs(fd), 1e-3)
            worst = max(worst, float(np.max(np.abs(J - fd)[valid] / scale[valid])))
    assert worst <= 1e-4


def test_invalid_depth_zeroes_match():
    m = MatchSets(s1_P=[[0, 0, 2.0], [0, 0, -2.0]], s1_p=[[0, 0], [0, 0]])
    r, J, valid = family_residuals(m, np.zeros(6), 0.01)["S1"]
    assert valid.tolist() == [True, False]
    assert np.all(r[1] == 0) and np.all(J[1] == 0)


# -- robust weights --------------------------------------------------------------

def test_tukey_weight_properties():
    assert tukey_weight(0.0) == 1.0
    assert tukey_weight(4.685) == 0.0
    assert tukey_weight(10.0) == 0.0
    u = np.linspace(0, 6, 200)
    assert np.all(np.diff(tukey_weight(u)) <= 0)
    # closed form at half the cutoff
    assert tukey_weight(4.685 / 2) == pytest.approx(0.75**2)


def test_robust_scale_is_mad_about_zero():
    assert robust_scale(np.array([1.0, 2.0, 3.0])) == pytest.approx(1.4826 * 2.0)
    assert robust_scale(np.zeros(4)) == pytest.approx(1e-12)


# -- solver ----------------------------------------------------------------------

def test_recovers_pose_from_s1():
    rng = np.random.default_rng(0)
    m = synthetic_matches(rng, TRUE, n=20, families=("S1",))
    est = estimate_pose(m, Pose.identity())
    dt, dr = pose_error(est.pose, TRUE)
    assert dt < 1e-6 and dr < 1e-6
    assert est.converged


@pytest.mark.parametrize("families", [FAMILIES, ("S2",), ("S3",), ("S4",), ("S1", "S5"), ("S3", "S4", "S5")])
def test_recovers_pose_from_any_family_mix(families):
    rng = np.random.default_rng(1)
    m = synthetic_matches(rng, TRUE, n=20, families=families)
    est = estimate_pose(m, Pose.identity())
    dt, dr = pose_error(est.pose, TRUE)
    assert dt < 1e-6 and dr < 1e-6


def test_cost_non_increasing():
    rng = np.random.default_rng(2)
    m = synthetic_matches(rng, TRUE, n=30, noise=1e-3)
    est = estimate_pose(m, Pose.identity())
    by_outer = {}
    for outer, cost in est.cost_history:
        by_outer.setdefault(outer, []).append(cost)
    for costs in by_outer.values():
        assert np.all(np.diff(costs) <= 1e-15)


def test_outliers_are_downweighted():
    rng = np.random.default_rng(3)
    m = synthetic_matches(rng, TRUE, n=40, families=("S1",))
    bad = rng.choice(40, 12, replace=False)
    m.s1_p[bad] = rng.uniform(-0.6, 0.6, (12, 2))
    est = estimate_pose(m, Pose.identity())
    dt, dr = pose_error(est.pose, TRUE)
    assert dt < 1e-3 and dr < 1e-3
    assert np.all(est.weights["S1"][bad] < 0.1)


def test_insufficient_matches():
    rng = np.random.default_rng(4)
    m = synthetic_matches(rng, TRUE, n=2, families=("S1", "S5"))
    with pytest.raises(InsufficientMatches):
        estimate_pose(m)
    with pytest.raises(ValueError):
        SolverConfig(min_depth_matches=2)
    with pytest.raises(ValueError):
        SolverConfig(lambda_2d2d=0)


def test_covariance_monte_carlo():
    """Predicted S1 covariance diagonal agrees with the scatter of 500 noisy solves within 30%."""
    rng = np.random.default_rng(5)
    P = points_in_front(rng, 30)
    clean = project_normalized(transform(TRUE, P))
    sigma = 2e-3
    xis, covs = [], []
    for _ in range(500):
        m = MatchSets(s1_P=P, s1_p=clean + rng.normal(0, sigma, clean.shape))
        est = estimate_pose(m, TRUE, SolverConfig(tukey_constant=1e9))
        xis.append(est.pose.minimal())
        covs.append(np.diag(est.cov))
    empirical = np.var(np.array(xis), axis=0)
    predicted = np.mean(covs, axis=0)
    np.testing.assert_allclose(predicted, empirical, rtol=0.3)


def test_covariance_symmetric_psd():
    rng = np.random.default_rng(6)
    est = estimate_pose(synthetic_matches(rng, TRUE, n=15, noise=1e-3))
    np.testing.assert_allclose(est.cov, est.cov.T, atol=1e-15)
    assert np.linalg.eigvalsh(est.cov).min() >= -1e-9


# -- degeneracy and fallback --------------------------------------------------------

def test_check_degeneracy_examples(rng):
    ok = PoseWithCovariance(Pose.identity(), np.diag([1e-6] * 6))
    assert not check_degeneracy(ok)
    assert check_degeneracy(PoseWithCovariance(Pose.identity(), np.diag([1e-6, 1e-2, 1e-6, 1, 1, 1])))
    for _ in range(50):
        A = rng.normal(size=(3, 3)) * 7e-3
        block = A @ A.T
        cov = np.eye(6)
        cov[:3, :3] = block
        # largest root of the characteristic polynomial as an independent oracle
        largest = max(np.roots(np.poly(block)).real)
        assert check_degeneracy(PoseWithCovariance(Pose.identity(), cov)) == (largest > 1e-4)


def test_velocity_fallback_examples():
    last = Pose([0.1, 0, 0])
    np.testing.assert_allclose(velocity_fallback(last, 0.5).t, [0.05, 0, 0])
    rot = Pose([0.1, 0.2, 0], quat_from_axis_angle([1, 2, 3], np.radians(10)))
    same = velocity_fallback(rot, 1.0)
    np.testing.assert_allclose(same.t, rot.t)
    np.testing.assert_allclose(same.q, rot.q, atol=1e-15)
    half = velocity_fallback(rot, 0.5)
    assert np.degrees(quat_angle(half.q)) == pytest.approx(5.0)
    np.testing.assert_allclose(half.q[:3] / np.linalg.norm(half.q[:3]), rot.q[:3] / np.linalg.norm(rot.q[:3]))
    with pytest.raises(ValueError):
        velocity_fallback(rot, 0.0)
