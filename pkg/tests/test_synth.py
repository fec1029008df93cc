import numpy as np
import pytest

from impmc.data import RatingsDataset
from impmc.model import GroupModel
from impmc.synth import (
    SynthSpec,
    empirical_block_histograms,
    generate,
    point_mass_model,
    separated_model,
)


def _tv(p, q):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def test_point_mass_single_group():
    data, ug, vg = generate(SynthSpec(20, 15, point_mass_model(1, 1, 5, 3), "fixed_degree", degree=4, rng_seed=0))
    assert np.all(data.ratings == 3)
    assert np.all(ug == 0) and np.all(vg == 0)


def test_fixed_degree_full():
    data, _, _ = generate(SynthSpec(7, 9, separated_model(2, 2), "fixed_degree", degree=9, rng_seed=1))
    assert len(data) == 63
    assert np.all(data.user_degrees() == 9)


def test_fixed_degree_exact():
    data, _, _ = generate(SynthSpec(50, 30, separated_model(2, 2), "fixed_degree", degree=7, rng_seed=2))
    assert np.all(data.user_degrees() == 7)


def test_degree_above_movies_is_an_error():
    with pytest.raises(ValueError):
        SynthSpec(10, 10, separated_model(1, 1), "fixed_degree", degree=11)
    with pytest.raises(ValueError):
        SynthSpec(10, 10, separated_model(1, 1), "bernoulli", obs_per_user=11)


def test_seed_determinism():
    spec = SynthSpec(40, 30, separated_model(2, 4), "bernoulli", obs_per_user=5, rng_seed=8)
    a, ua, va = generate(spec)
    b, ub, vb = generate(spec)
    assert a.same_as(b) and np.array_equal(ua, ub) and np.array_equal(va, vb)
    c, _, _ = generate(SynthSpec(40, 30, separated_model(2, 4), "bernoulli", obs_per_user=5, rng_seed=9))
    assert not c.same_as(a)


def test_separated_model_means():
    model = separated_model(4, 4)
    model.validate()
    means = model.conditional_means()
    assert np.allclose(sorted(set(np.round(means.ravel(), 12))), [1.5, 2.5, 3.5, 4.5], atol=1e-9)
    # every user group sees every level once
    assert np.allclose(np.sort(means, axis=1), [[1.5, 2.5, 3.5, 4.5]] * 4, atol=1e-9)


def test_block_histograms_match_w():
    model = separated_model(4, 4, spread=0.8)
    data, ug, vg = generate(SynthSpec(1000, 1000, model, "bernoulli", obs_per_user=10, rng_seed=21))
    hist = empirical_block_histograms(data, ug, vg, 4, 4)
    assert not hist.empty.any()
    assert _tv(hist.freqs, model.w).max() < 0.05


def test_marginal_histogram_single_user_group():
    rng = np.random.default_rng(5)
    w = rng.dirichlet(np.ones(5), size=(1, 3))
    model = GroupModel([1.0], [0.2, 0.3, 0.5], w)
    data, _, _ = generate(SynthSpec(1000, 400, model, "fixed_degree", degree=100, rng_seed=5))
    assert len(data) == 10**5
    emp = np.bincount(data.ratings, minlength=6)[1:] / len(data)
    assert _tv(emp, model.p_v @ w[0]) < 0.05


def test_block_histogram_examples():
    data = RatingsDataset.from_arrays([0, 0, 1, 2], [0, 1, 0, 1], [3, 3, 5, 1], 3, 2)
    hist = empirical_block_histograms(data, [0, 0, 0], [0, 0], 2, 1)
    # user group 0 holds all observations; its block has {3, 3, 5, 1}
    assert hist.freqs[0, 0].tolist() == [0.25, 0, 0.5, 0, 0.25]
    assert hist.empty.tolist() == [[False], [True]]
    assert not np.isnan(hist.freqs).any() and hist.freqs[1, 0].tolist() == [0] * 5

    data = RatingsDataset.from_arrays([0, 1, 2], [0, 0, 0], [3, 3, 5], 3, 1)
    assert np.allclose(empirical_block_histograms(data, [0, 0, 0], [0]).freqs[0, 0], [0, 0, 2 / 3, 0, 1 / 3])


def test_full_observation_single_group_equals_global():
    data, ug, vg = generate(SynthSpec(30, 20, separated_model(1, 1), "fixed_degree", degree=20, rng_seed=3))
    hist = empirical_block_histograms(data, ug, vg)
    glob = np.bincount(data.ratings, minlength=6)[1:] / len(data)
    assert np.allclose(hist.freqs[0, 0], glob, atol=1e-15)
