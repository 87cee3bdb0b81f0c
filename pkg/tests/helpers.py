"""Shared oracles for the unit and acceptance suites."""

import numpy as np


def gradient_error(net, rng, n=7, eps=1e-4, weight_decay=1e-3):
    """Largest relative gap between backprop and central differences over every parameter."""
    Zx = rng.standard_normal((n, net.n_in))
    Zy = rng.standard_normal((n, net.n_out))
    # push hidden pre-activations away from the ReLU kink
    for b in net.b[:-1]:
        b += 0.05
    _, grads = net.loss_and_grad(Zx, Zy, weight_decay)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up, _ = net.loss_and_grad(Zx, Zy, weight_decay)
            flat[i] = keep - eps
            down, _ = net.loss_and_grad(Zx, Zy, weight_decay)
            flat[i] = keep
            fd = (up - down) / (2 * eps)
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8))
    return worst


def kernel_outputs():
    """Results of every compiled kernel on fixed inputs, for backend comparisons."""
    from bumpercar._accel import backend_name
    from bumpercar.dyn_kin import g_kin
    from bumpercar.dyn_ne import ne_rollout, ne_step_many
    from bumpercar.estimator import run_filter
    from bumpercar.harness import generate_dataset, rich_profile
    from bumpercar.ident_ga import ga_fitness
    from bumpercar.ident_sindy import appendix_d_reference
    from bumpercar.params import NeParams

    rng = np.random.default_rng(0)
    p = NeParams()
    V = rng.uniform(-2, 2, (300, 3))
    D = rng.uniform(-2, 2, 300)
    U = np.column_stack([rng.uniform(-2, 2, 300), rng.uniform(-1, 1, 300)])
    out = {"backend": np.array(backend_name())}
    out["step_V"], out["step_D"], _ = ne_step_many(V, D, U, p)
    out["roll_V"], out["roll_D"], out["roll_P"], _ = ne_rollout((0.5, 0, 0), 0.0, (0, 0, 0), U, p)
    data = generate_dataset(rich_profile(60.0, seed=4), noise=(1e-3, 1e-3, 1e-3))
    out["gen_P"], out["gen_V"] = data.poses, data.velocities
    out["ekf"] = run_filter(data.with_(velocities=None, kin_states=None)).trajectory.kin_states
    out["fit"] = np.array(ga_fitness(p.with_values(K_t=250.0), data))
    X = np.column_stack([rng.uniform(0, 2, 300), rng.uniform(-1, 1, (300, 2)), D])
    out["gkin"] = g_kin(X)
    ref = appendix_d_reference()
    out["sparse_X"], out["sparse_V"], out["sparse_P"], _ = ref.rollout_arrays(
        np.array([0.3, 0.0, 0.0, 0.0]), np.zeros(3), U, p)
    return out


ACCEPTANCE_LINES = []


def record(line):
    """Keep an acceptance verdict for the terminal summary and print it."""
    ACCEPTANCE_LINES.append(line)
    print(line)
