import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impmc.data import (
    RatingsDataset,
    RatingsFormatError,
    SplitSpec,
    cold_start_split,
    degree_stats,
    load_dataset,
    load_ratings,
    save_dataset,
    split_holdout,
)
from impmc.synth import SynthSpec, generate, separated_model


def test_load_toy(toy_file):
    data = load_ratings(toy_file)
    assert (data.num_users, data.num_movies, len(data)) == (2, 2, 3)
    assert data.user_ids == ("a", "b") and data.movie_ids == ("x", "y")
    assert data.by_user(0) == [(0, 5), (1, 1)]
    assert data.by_movie(0) == [(0, 5), (1, 3)]


def test_load_csv_and_comments(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("# header comment\nu1,m1,4\n\nu2,m1,2\n", encoding="utf-8")
    data = load_ratings(p)
    assert len(data) == 2 and data.num_movies == 1


def test_empty_file_is_an_error(tmp_path):
    p = tmp_path / "empty.tsv"
    p.write_text("", encoding="utf-8")
    with pytest.raises(RatingsFormatError, match="no observations"):
        load_ratings(p)


def test_rating_out_of_alphabet_names_line(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("a\tx\t5\nb\tx\t6\n", encoding="utf-8")
    with pytest.raises(RatingsFormatError, match=r":2: rating 6 outside \[1, 5\]"):
        load_ratings(p)
    # a larger alphabet accepts it
    assert load_ratings(p, r_max=10).ratings.max() == 6


@pytest.mark.parametrize("body, msg", [
    ("a\tx\t5\na\tx\t4\n", "duplicate pair"),
    ("a\tx\n", "expected 3 fields"),
    ("a\tx\tfive\n", "cannot parse rating"),
    ("a\tx\t2.5\n", "not an integer"),
])
def test_parse_errors(tmp_path, body, msg):
    p = tmp_path / "bad.tsv"
    p.write_text(body, encoding="utf-8")
    with pytest.raises(RatingsFormatError, match=msg):
        load_ratings(p)


def test_round_trip_with_id_maps(tmp_path, rng):
    # first-appearance order on reload would differ without the id maps
    src = tmp_path / "src.tsv"
    src.write_text("a\tx\t1\nb\ty\t2\na\tz\t3\nc\tq\t4\n", encoding="utf-8")
    data = load_ratings(src)
    train, _ = split_holdout(data, SplitSpec(1, 3))
    save_dataset(train, tmp_path / "out")
    again = load_dataset(tmp_path / "out")
    assert again.same_as(train)
    save_dataset(again, tmp_path / "out2")
    assert load_dataset(tmp_path / "out2").same_as(train)


def _random_dataset(seed, N=15, M=12, density=0.4):
    rng = np.random.default_rng(seed)
    mask = rng.random((N, M)) < density
    mask[0, 0] = True
    u, m = np.nonzero(mask)
    return RatingsDataset.from_arrays(u, m, rng.integers(1, 6, len(u)), N, M)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_transpose_consistency(seed):
    data = _random_dataset(seed)
    by_user = {(n, m, r) for n in range(data.num_users) for m, r in data.by_user(n)}
    by_movie = {(n, m, r) for m in range(data.num_movies) for n, r in data.by_movie(m)}
    assert by_user == by_movie == set(data.triples())
    assert data.user_degrees().sum() == data.movie_degrees().sum() == len(data)
    for n in range(data.num_users):
        ms = [m for m, _ in data.by_user(n)]
        assert ms == sorted(ms)


def test_duplicate_arrays_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        RatingsDataset.from_arrays([0, 0], [1, 1], [3, 4])


def test_contains():
    data = RatingsDataset.from_arrays([0, 1, 1], [1, 0, 2], [1, 2, 3], 3, 3)
    got = data.contains(np.array([0, 0, 1, 2]), np.array([1, 0, 2, 2]))
    assert got.tolist() == [True, False, True, False]


def test_split_is_deterministic_and_partitions():
    data = _random_dataset(0, 4, 5, 0.6)
    assert len(data) >= 10
    data = data.subset(np.arange(10))
    a = split_holdout(data, SplitSpec(3, 7))
    b = split_holdout(data, SplitSpec(3, 7))
    assert a[0].same_as(b[0]) and a[1].same_as(b[1])
    train, held = a
    assert len(train) + len(held) == 10 and len(held) == 3
    assert not train.contains(held.users, held.movies).any()
    union = set(train.triples()) | set(held.triples())
    assert union == set(data.triples())


def test_split_rejects_oversized_holdout():
    data = _random_dataset(1)
    with pytest.raises(ValueError, match="must be <"):
        split_holdout(data, SplitSpec(len(data), 0))


def test_per_user_cap_counts():
    data = RatingsDataset.from_arrays([0] * 5 + [1], [0, 1, 2, 3, 4, 0], [1, 2, 3, 4, 5, 3], 2, 5)
    train, held = split_holdout(data, SplitSpec(None, 0, "per_user_cap", 2))
    assert train.user_degrees().tolist() == [2, 1]
    assert held.user_degrees().tolist() == [3, 0]


def test_per_user_cap_sweep_average_below_cap():
    model = separated_model(2, 2)
    data, _, _ = generate(SynthSpec(200, 100, model, "bernoulli", obs_per_user=12, rng_seed=3))
    for k in range(1, 31):
        train, held = split_holdout(data, SplitSpec(None, k, "per_user_cap", k))
        assert train.user_degrees().mean() <= k
        assert len(train) + len(held) == len(data)


def test_cold_start_split_orders():
    model = separated_model(2, 2)
    data, _, _ = generate(SynthSpec(100, 80, model, "fixed_degree", degree=10, rng_seed=3))
    for order in ("after", "before"):
        train, held = cold_start_split(data, 3, 150, 5, order)
        assert len(held) == 150
        assert train.user_degrees().max() <= 3
        assert not train.contains(held.users, held.movies).any()


def test_degree_stats_basic():
    data = RatingsDataset.from_arrays([0, 0, 1, 1], [0, 1, 1, 2], [1, 1, 1, 1], 2, 3)
    s = degree_stats(data)
    assert s.mean("users") == 2.0 and s.fraction_below(3, "users") == 1.0
    assert (s.minimum("movies"), s.maximum("movies")) == (1, 2)


def test_degree_stats_zero_degree_user():
    data = RatingsDataset.from_arrays([0, 1, 2], [0, 0, 0], [2, 2, 2], 4, 1)
    assert degree_stats(data).fraction_below(1, "users") == 0.25


def test_degree_stats_synthetic_mean():
    model = separated_model(4, 4)
    data, _, _ = generate(SynthSpec(1000, 1000, model, "bernoulli", obs_per_user=10, rng_seed=11))
    mean = degree_stats(data).mean("users")
    assert mean == len(data) / 1000
    assert abs(mean - 10) <= 0.5
