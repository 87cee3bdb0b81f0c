import numpy as np
import pytest

from bumpercar.core import DimensionError, NormalizationWeights, nmse
from bumpercar.dyn_kin import AppendixDModel, rollout
from bumpercar.harness import generate_dataset, rich_profile, split_dataset
from bumpercar.ident_sindy import SparseModel, appendix_d_reference
from bumpercar.nn import (
    NARX_LAG, KinematicMlp, Mlp, NarxModel, ResidualModel, TrainConfig, k_mlp, ksindy_mlp, load_model, narx_features,
    narx_mlp, train,
)
from helpers import gradient_error

FAST = TrainConfig(lr=1e-3, epochs=60, patience=20)


def test_zero_weights_give_biases():
    net = Mlp([4, 5, 2], dropout=0.0)
    net.set_params([np.zeros((4, 5)), np.zeros((5, 2)), np.zeros(5), np.array([0.3, -1.0])])
    assert np.allclose(net(np.ones(4)), (0.3, -1.0))


def test_single_linear_layer():
    net = Mlp([3, 2], dropout=0.5, seed=1)
    x = np.array([0.5, -1.0, 2.0])
    assert np.allclose(net(x), x @ net.W[0] + net.b[0])


def test_inference_is_deterministic(rng):
    net = Mlp([6, 16, 3], dropout=0.3)
    X = rng.standard_normal((10, 6))
    assert np.array_equal(net(X), net(X))
    noisy = net.forward(X, training=True, rng=np.random.default_rng(0))
    assert not np.array_equal(noisy, net(X))


def test_dimension_mismatch():
    net = Mlp([6, 8, 3])
    with pytest.raises(DimensionError):
        net(np.zeros(5))
    with pytest.raises(ValueError):
        Mlp([3])
    with pytest.raises(ValueError):
        Mlp([3, 2], dropout=1.0)


@pytest.mark.parametrize("sizes", [[3, 7, 2], [5, 6, 4, 3], [2, 9, 8, 5, 1]])
def test_gradients_match_finite_differences(sizes, rng):
    net = Mlp(sizes, dropout=0.0, seed=sum(sizes))
    assert gradient_error(net, rng) < 1e-4


def test_zero_output_gradient_leaves_decay_only(rng):
    net = Mlp([4, 6, 2], dropout=0.0)
    _, cache = net.forward_normalized(rng.standard_normal((5, 4)))
    grads = net.backward(cache, np.zeros((5, 2)), weight_decay=0.1)
    for g, W in zip(grads[:2], net.W):
        assert np.allclose(g, 0.1 * W)
    assert all(np.all(g == 0) for g in grads[2:])


def test_linear_gradient_closed_form(rng):
    net = Mlp([3, 2], dropout=0.0)
    X, Y = rng.standard_normal((8, 3)), rng.standard_normal((8, 2))
    _, (gW, gb) = net.loss_and_grad(X, Y)
    R = X @ net.W[0] + net.b[0] - Y
    assert np.allclose(gW, 2 * X.T @ R / R.size)
    assert np.allclose(gb, 2 * R.sum(axis=0) / R.size)


def test_normalization_statistics(rng):
    net = Mlp([3, 4, 2])
    X = rng.normal(5, 3, (200, 3))
    net.fit_normalization(X, rng.standard_normal((200, 2)))
    Z = net.normalize_x(X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-10)
    assert np.allclose(Z.std(axis=0), 1, atol=1e-10)


def test_teacher_student_convergence(rng):
    teacher = Mlp([4, 32, 16, 2], dropout=0.0, seed=11)
    X = rng.standard_normal((2000, 4))
    Y = teacher(X)
    student = Mlp([4, 32, 16, 2], dropout=0.0, seed=12)
    # a faster rate than the default so the check runs in seconds
    res = train(student, X, Y, TrainConfig(lr=1e-3, epochs=400, patience=400, holdout=0.0))
    assert res.loss[0] / res.loss[-1] >= 100


def test_zero_learning_rate_is_frozen(rng):
    net = Mlp([3, 5, 1], dropout=0.0)
    before = [p.copy() for p in net.params()]
    res = train(net, rng.standard_normal((50, 3)), rng.standard_normal(50), TrainConfig(lr=0.0, epochs=5))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))
    assert len(set(res.loss)) == 1


def test_single_sample_memorized():
    net = Mlp([3, 16, 2], dropout=0.0)
    res = train(net, [[0.1, 0.2, 0.3]], [[1.0, -2.0]], TrainConfig(lr=1e-2, epochs=300), normalize=False)
    assert res.loss[-1] < 1e-8


def test_training_is_seeded(rng):
    X, Y = rng.standard_normal((300, 3)), rng.standard_normal((300, 2))
    a, b = Mlp([3, 8, 2], seed=4), Mlp([3, 8, 2], seed=4)
    train(a, X, Y, TrainConfig(epochs=5, seed=9))
    train(b, X, Y, TrainConfig(epochs=5, seed=9))
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_train_shape_errors(rng):
    net = Mlp([3, 4, 2])
    with pytest.raises(ValueError):
        train(net, np.zeros((0, 3)), np.zeros((0, 2)))
    with pytest.raises(DimensionError):
        train(net, np.zeros((5, 4)), np.zeros((5, 2)))


def test_narx_features_layout():
    V = np.arange(15.0).reshape(5, 3)
    U = np.arange(10.0).reshape(5, 2) + 100
    F = narx_features(V, U)
    assert F.shape == (3, 15)
    assert np.array_equal(F[0], [6, 7, 8, 3, 4, 5, 0, 1, 2, 104, 105, 102, 103, 100, 101])
    with pytest.raises(ValueError):
        narx_features(V[:2], U[:2])


@pytest.fixture(scope="module")
def ne_split():
    return split_dataset(generate_dataset(rich_profile(420.0, seed=21)))


def test_narx_constant_motion():
    from bumpercar.core import Trajectory
    n = 400
    t = 0.1 * np.arange(n)
    V = np.tile((1.0, 0.0, 0.2), (n, 1))
    data = Trajectory(t, np.zeros((n, 3)), np.tile((0.1, 0.5), (n, 1)), V, None)
    m = narx_mlp(data, hidden=(8, 8), config=TrainConfig(lr=1e-3, epochs=200, holdout=0.0), dropout=0.0)
    out, failed = m.rollout(V[:3], data.inputs[:50])
    assert failed == -1 and np.allclose(out, V[:50], atol=1e-2)


def test_narx_beats_persistence(ne_split):
    tr, va = ne_split
    m = narx_mlp(tr, config=FAST)
    pred = m.predict_one_step(va.velocities, va.inputs)
    ok = va.pair_mask(NARX_LAG)[NARX_LAG:]
    k = np.arange(NARX_LAG, len(va))[ok]
    truth = va.velocities[k + 1]
    w = NormalizationWeights.from_targets(tr.velocities)
    assert nmse(pred[ok], truth, w) < nmse(va.velocities[k], truth, w)


def test_k_mlp_interface_and_standstill(ne_split):
    tr, _ = ne_split
    m = k_mlp(tr, config=FAST)
    y = m.step((0, 0, 0, 0.4), (0.4, 0))
    assert y.shape == (3,)
    assert np.all(np.abs(y) < 0.05)


@pytest.fixture(scope="module")
def reference_split():
    U = rich_profile(1200.0, seed=8).inputs()
    return rollout(AppendixDModel(), (0, 0, 0, 0), U)


def test_k_mlp_on_reference_model_rollout(reference_split):
    m = k_mlp(reference_split, config=TrainConfig(lr=1e-3, epochs=400, patience=400), dropout=0.0)
    U = rich_profile(110.0, seed=31).inputs()
    ref = rollout(AppendixDModel(), (0, 0, 0, 0), U)
    got = rollout(m, (0, 0, 0, 0), U)
    w = NormalizationWeights.from_targets(ref.velocities)
    assert nmse(got.velocities, ref.velocities, w) <= 5e-3


def test_residual_on_perfect_base_stays_small(reference_split):
    m = ksindy_mlp(reference_split, appendix_d_reference(), config=FAST)
    X = reference_split.kin_states[:-1]
    U = reference_split.inputs[:-1]
    r = m.net(np.column_stack([X, U]))
    assert np.sqrt(np.mean(r ** 2)) < 1e-3


def test_residual_repairs_detuned_base(reference_split):
    ref = appendix_d_reference()
    base = SparseModel(0.9 * ref.xi_vf, 0.9 * ref.xi_alpha_f, 0.9 * ref.xi_alpha_r)
    m = ksindy_mlp(reference_split, base, config=TrainConfig(lr=1e-3, epochs=120, patience=40))
    U = rich_profile(110.0, seed=32).inputs()
    truth = rollout(AppendixDModel(), (0.5, 0, 0, 0), U)
    w = NormalizationWeights.from_targets(truth.velocities)
    combined = nmse(rollout(m, (0.5, 0, 0, 0), U).velocities, truth.velocities, w)
    alone = nmse(rollout(base, (0.5, 0, 0, 0), U).velocities, truth.velocities, w)
    assert combined < alone
    m.residual_enabled = False
    assert np.array_equal(m.step((1.0, 0.1, 0.0, 0.2), (0.3, 0.5)), base.step((1.0, 0.1, 0.0, 0.2), (0.3, 0.5)))


def test_save_load_all_kinds(tmp_path, rng):
    ref = appendix_d_reference()
    models = [KinematicMlp(Mlp([6, 5, 3], seed=1)), ResidualModel(ref, Mlp([6, 4, 3], seed=2)),
              NarxModel(Mlp([15, 6, 3], seed=3))]
    for m in models:
        m.net.fit_normalization(rng.standard_normal((20, m.net.n_in)), rng.standard_normal((20, 3)))
        m.save(tmp_path / f"{m.kind}.npz")
        back = load_model(tmp_path / f"{m.kind}.npz")
        assert type(back) is type(m)
        X = rng.standard_normal((4, m.net.n_in))
        assert np.array_equal(back.net(X), m.net(X))
    assert np.array_equal(load_model(tmp_path / "residual.npz").base.xi_vf, ref.xi_vf)
