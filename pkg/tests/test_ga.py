import math

import numpy as np
import pytest

from bumpercar.harness import generate_dataset, rich_profile
from bumpercar.ident_ga import (
    GaConfig, PairData, ParamSpec, _Genome, _evaluate, default_spec, ga_fitness, ga_run, read_spec, write_spec,
)
from bumpercar.params import OPTIMIZED, NeParams

TRUTH = NeParams()


@pytest.fixture(scope="module")
def data():
    return generate_dataset(rich_profile(120.0, seed=9))


@pytest.fixture(scope="module")
def pairs(data):
    return PairData.from_trajectory(data)


def test_truth_is_self_consistent(pairs):
    assert ga_fitness(TRUTH, pairs) < 1e-8


def test_detuned_stiffness_is_worse(pairs):
    worse = TRUTH.with_values(C_alpha_f=2 * TRUTH.C_alpha_f)
    assert ga_fitness(worse, pairs) > ga_fitness(TRUTH, pairs)


def test_too_little_data(data):
    with pytest.raises(ValueError):
        ga_fitness(TRUTH, data.slice(0, 1))
    with pytest.raises(ValueError):
        ga_fitness(TRUTH, data.with_(kin_states=None))


def test_numeric_failure_is_infinite(pairs):
    # a vanishing mass turns tire forces into accelerations past the guard
    assert ga_fitness(TRUTH.with_values(m=1e-6, I_z=1e-6), pairs) == math.inf


def test_failed_individuals_get_batch_penalty(pairs):
    spec = default_spec(free=("m", "I_z"), factor=(1e-8, 1.0))
    g = _Genome(spec, TRUTH)
    G = np.array([[1.0, 1.0], [0.0, 0.0], [0.97, 0.97]])
    f = _evaluate(g, pairs, G)
    assert np.isfinite(f).all()
    assert f[1] == pytest.approx(10 * max(f[0], f[2]))


def test_default_spec_bounds():
    spec = {s.name: s for s in default_spec()}
    assert {n for n, s in spec.items() if not s.fixed} == set(OPTIMIZED)
    assert spec["K_t"].lower == pytest.approx(0.2 * 274.8) and spec["K_t"].upper == pytest.approx(5 * 274.8)
    # sign preserved for the negative drag coefficient
    assert spec["R2"].lower == pytest.approx(-5 * 15.61) and spec["R2"].upper == pytest.approx(-0.2 * 15.61)
    assert spec["m"].fixed and spec["m"].value == 319.6


def test_param_spec_validation():
    with pytest.raises(ValueError):
        ParamSpec("K_t", 1.0, False, 2.0, 1.0)
    with pytest.raises(ValueError):
        ParamSpec("R2", -1.0, False, -1.0, 1.0)
    with pytest.raises(KeyError):
        ParamSpec("wheels", 4.0)


def test_spec_file_roundtrip(tmp_path):
    spec = default_spec()
    write_spec(spec, tmp_path / "s.toml")
    back = read_spec(tmp_path / "s.toml")
    for a, b in zip(back, spec):
        assert (a.name, a.value, a.fixed, a.unit) == (b.name, b.value, b.fixed, b.unit)
        assert np.array_equal([a.lower, a.upper], [b.lower, b.upper], equal_nan=True)
    (tmp_path / "bad.toml").write_text("[wings]\nvalue = 2\n")
    with pytest.raises(KeyError):
        read_spec(tmp_path / "bad.toml")


def test_config_validation():
    with pytest.raises(ValueError):
        GaConfig(population_size=1)
    with pytest.raises(ValueError):
        GaConfig(population_size=4, elite_count=4)


def test_zero_generations_returns_best_initial(pairs):
    spec = default_spec(free=("I_z", "K_t"))
    seen = []
    res = ga_run(spec, pairs, GaConfig(population_size=20, max_generations=0, seed=3),
                 callback=lambda g, f: seen.append((g, f)))
    assert res.evaluations == 20 and len(res.history) == 1 and seen == [(0, res.fitness)]
    g = _Genome(spec, TRUTH)
    pop = np.random.default_rng(3).random((20, 2))
    assert res.fitness == pytest.approx(_evaluate(g, pairs, pop).min())


def test_single_parameter_recovery(pairs):
    spec = default_spec(free=("I_z",))
    res = ga_run(spec, pairs, GaConfig(population_size=40, max_generations=50, seed=1))
    assert res.params.I_z == pytest.approx(TRUTH.I_z, rel=0.05)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_bounds_and_determinism(pairs):
    spec = default_spec(free=("K_t", "c", "R1", "R2"))
    cfg = GaConfig(population_size=30, max_generations=8, seed=5)
    a = ga_run(spec, pairs, cfg)
    b = ga_run(spec, pairs, cfg)
    assert a.params.to_array().tobytes() == b.params.to_array().tobytes()
    assert a.history == b.history
    for s in spec:
        if not s.fixed:
            assert s.lower <= a.free_values(spec)[s.name] <= s.upper


def test_genes_decode_inside_bounds(rng):
    spec = default_spec()
    g = _Genome(spec, TRUTH)
    free = [s for s in spec if not s.fixed]
    for gene in (np.zeros(len(free)), np.ones(len(free)), rng.random(len(free))):
        p = g.decode(gene).to_flat()
        for s in free:
            assert s.lower - 1e-12 * abs(s.lower) <= p[s.name] <= s.upper + 1e-12 * abs(s.upper)
    # the nominal value sits in the middle of a [0.2x, 5x] log range
    mid = g.decode(np.full(len(free), 0.5)).to_flat()
    for s in free:
        assert mid[s.name] == pytest.approx(s.value, rel=1e-12)


def test_decode_array_matches_decode(rng):
    from bumpercar.dyn_ne import _p
    g = _Genome(default_spec(), TRUTH)
    gene = rng.random(len(OPTIMIZED))
    assert np.array_equal(g.decode_array(gene), _p(g.decode(gene)))
