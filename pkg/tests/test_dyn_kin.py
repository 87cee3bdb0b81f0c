import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bumpercar.core import DomainError
from bumpercar.dyn_kin import AppendixDModel, TransitionModel, appendix_d_step, g_kin, rollout
from bumpercar.params import NeParams

LF, LR = 0.54, 0.33

angles = st.floats(-1.4, 1.4)


def test_g_kin_straight_and_standstill():
    assert np.allclose(g_kin((1.7, 0, 0, 0)), (1.7, 0, 0))
    assert np.allclose(g_kin((0.0, 0.3, -0.2, 1.1)), (0, 0, 0))


def test_g_kin_full_lock():
    # consistent lever arms: the centre of rotation sits on the rear axle
    assert np.allclose(g_kin((1, 0, 0, math.pi / 2)), (0, LR / (LR + LF), 1 / (LR + LF)), atol=1e-15)
    printed = g_kin((1, 0, 0, math.pi / 2), printed=True)
    assert np.allclose(printed, (0, 0.6207, 1.1494), atol=1e-4)


def test_g_kin_rejects_singular_slip():
    with pytest.raises(DomainError):
        g_kin((1.0, 0.0, math.pi / 2, 0.0))
    with pytest.raises(DomainError):
        g_kin(np.array([[1.0, 0.0, 0.0, 0.0], [1.0, -2.0, 0.0, 0.0]]))


def test_g_kin_reverse_heading_allowed():
    vx, _, _ = g_kin((1.0, 0.0, 0.0, 2.0))
    assert vx == pytest.approx(math.cos(2.0))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 3), angles, angles, st.floats(-2, 2), st.floats(0.01, 10))
def test_g_kin_homogeneous(v, af, ar, d, s):
    assert np.allclose(g_kin((s * v, af, ar, d)), s * g_kin((v, af, ar, d)), rtol=1e-12, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 3), angles, angles, st.floats(-2, 2))
def test_g_kin_mirror(v, af, ar, d):
    a = g_kin((v, af, ar, d))
    b = g_kin((v, -af, -ar, -d))
    assert np.allclose(b, (a[0], -a[1], -a[2]), atol=1e-13)


def test_g_kin_batch_matches_scalar(rng):
    X = np.column_stack([rng.uniform(0, 2, 50), rng.uniform(-1, 1, (50, 2)), rng.uniform(-2, 2, 50)])
    out = g_kin(X)
    for k in (0, 13, 49):
        assert np.array_equal(out[k], g_kin(X[k]))


def test_reference_model_examples():
    assert np.array_equal(appendix_d_step((0, 0, 0, 0), (0, 0)), (0, 0, 0))
    assert np.allclose(appendix_d_step((1, 0, 0, 0), (0, 0)), (0.9904, 0, 0), atol=1e-12)
    assert np.allclose(appendix_d_step((1, 0.1, 0, 0), (0, 0)), (0.98565, 0.0777, -0.00485), atol=1e-12)


def test_reference_model_clamps_speed():
    # hard braking at low speed would undershoot zero
    assert appendix_d_step((0.05, 0.3, 0, 0), (0, -1))[0] == 0.0


def test_reference_model_coast_is_contraction():
    v = np.arange(0, 2.0 + 1e-9, 1e-3)
    nxt = np.array([appendix_d_step((x, 0, 0, 0), (0, 0))[0] for x in v])
    assert np.all(nxt[1:] < v[1:])
    # slope below one everywhere on the interval
    assert np.all(np.diff(nxt) / np.diff(v) < 1)


def test_reference_model_slip_decay():
    x = np.array([1.2, 0.2, 0.0, 0.0])
    for _ in range(5):
        y = appendix_d_step(x, (0, 0))
        assert y[1] == pytest.approx(0.777 * x[1], rel=1e-12)
        x = np.array([y[0], y[1], y[2], 0.0])


def test_model_step_many_matches_step(rng):
    m = AppendixDModel()
    X = np.column_stack([rng.uniform(0, 2, 40), rng.uniform(-0.3, 0.3, (40, 2)), rng.uniform(-2, 2, 40)])
    U = np.column_stack([rng.uniform(-2, 2, 40), rng.uniform(-1, 1, 40)])
    many = m.step_many(X, U)
    for k in range(40):
        assert np.allclose(many[k], m.step(X[k], U[k]), atol=1e-15)


def test_protocol():
    assert isinstance(AppendixDModel(), TransitionModel)


def test_rollout_from_rest():
    tr = rollout(AppendixDModel(), (0, 0, 0, 0), np.zeros((50, 2)))
    assert np.all(tr.velocities == 0) and np.all(tr.poses == 0)


def test_rollout_throttle_fixed_point():
    tr = rollout(AppendixDModel(), (0, 0, 0, 0), np.tile((0.0, 1.0), (300, 1)))
    v = tr.kin_states[:, 0]
    assert np.all(np.diff(v) >= -1e-15)
    # fixed point of the speed map with u = (0, 1)
    f = lambda x: appendix_d_step((x, 0, 0, 0), (0, 1))[0]
    lo, hi = 0.0, 3.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) > mid else (lo, mid)
    assert v[-1] == pytest.approx(lo, abs=1e-9)


def test_rollout_pose_straight_line():
    tr = rollout(AppendixDModel(), (1.0, 0, 0, 0), np.tile((0.0, 0.5), (30, 1)))
    assert np.allclose(tr.poses[:, 1:], 0)
    # trapezoid of the speed history
    dist = np.concatenate([[0], np.cumsum(0.05 * (tr.velocities[1:, 0] + tr.velocities[:-1, 0]))])
    assert np.allclose(tr.poses[:, 0], dist, atol=1e-12)


def test_rollout_domain_error_reports_step():
    class Bad:
        description = "diverging slip"

        def step(self, x, u):
            return np.array([1.0, x[1] + 0.5, 0.0])

    with pytest.raises(DomainError, match="step 3"):
        rollout(Bad(), (1.0, 0.0, 0.0, 0.0), np.zeros((10, 2)))


def test_rollout_mirror_symmetry(rng):
    U = np.column_stack([rng.uniform(-2, 2, 200), rng.uniform(0, 1, 200)])
    a = rollout(AppendixDModel(), (0.5, 0.05, 0.01, 0.3), U)
    b = rollout(AppendixDModel(), (0.5, -0.05, -0.01, -0.3), U * (-1, 1))
    assert np.allclose(b.velocities, a.velocities * (1, -1, -1), atol=1e-12)
    assert np.allclose(b.poses, a.poses * (1, -1, -1), atol=1e-10)


def test_rollout_respects_params():
    p = NeParams(l_f=0.3, l_r=0.6)
    tr = rollout(AppendixDModel(), (1.0, 0.0, 0.0, 0.5), np.tile((0.5, 0.5), (5, 1)), p)
    assert np.allclose(tr.velocities, g_kin(tr.kin_states, 0.3, 0.6))
