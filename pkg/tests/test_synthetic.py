import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from buildsensys import synthetic as syn
from buildsensys.correlation import daily_vectors, pearson_daily
from buildsensys.errors import ConfigError

M = 2**64 - 1


def py_mix(z):
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & M
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & M
    return z ^ (z >> 31)


def py_bits(seed, stream, i):
    key = py_mix(seed ^ py_mix((stream + 0x9E3779B97F4A7C15) & M))
    return py_mix((key + (i + 1) * 0x9E3779B97F4A7C15) & M)


def test_prng_matches_pure_python_definition():
    got = syn.random_bits(42, 6, 5)
    assert [int(x) for x in got] == [py_bits(42, 6, i) for i in range(5)]
    u = syn.uniform(7, 3, 4)
    ref = [((py_bits(7, 3, i) >> 11) + 0.5) / 2**53 for i in range(4)]
    assert list(u) == ref
    n = syn.normal(7, 3, 2)
    ref_n = [math.sqrt(-2 * math.log(ref[2 * k])) * math.cos(2 * math.pi * ref[2 * k + 1]) for k in range(2)]
    np.testing.assert_allclose(n, ref_n, rtol=1e-15)


def test_same_seed_bitwise_identical():
    a = syn.generate(syn.GenConfig(days=7, seed=5))
    b = syn.generate(syn.GenConfig(days=7, seed=5))
    assert a.equals(b)
    assert syn.frame_digest(a) == syn.frame_digest(b)
    assert not a.equals(syn.generate(syn.GenConfig(days=7, seed=6)))


def test_length_and_hourly():
    f = syn.generate(syn.GenConfig(days=7))
    assert len(f) == 168 and f.is_hourly
    assert f.n_occ == 3 and f.n_env == 5


def test_invalid_configs():
    for kw in ({"days": 0}, {"coupling": 1.5}, {"noise_std": -1.0}, {"zones": 0}):
        with pytest.raises(ConfigError):
            syn.GenConfig(**kw)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63), st.floats(0, 1), st.integers(0, 3), st.floats(0, 0.5), st.integers(1, 4),
       st.integers(0, 12))
def test_nonnegative(seed, coupling, lag, noise, zones, env):
    f = syn.generate(syn.GenConfig(days=8, seed=seed, coupling=coupling, lag_hours=lag, noise_std=noise,
                                   zones=zones, env_channels=env))
    assert np.all(f.occupancy >= 0) and np.all(f.traffic >= 0)
    assert np.all(np.isfinite(f.channels))


def test_weekday_double_peak_and_flat_weekend():
    f = syn.generate(syn.GenConfig(days=14, noise_std=0.0, seed=1))
    occ = f.occupancy.sum(axis=1).reshape(14, 24)
    lobby = f.occupancy[:, -1].reshape(14, 24)  # movement-dominated zone
    monday = lobby[0]
    assert 7 <= np.argmax(monday[:13]) <= 11 and 15 <= 12 + np.argmax(monday[12:]) <= 19
    saturday = occ[5]
    assert np.ptp(saturday) < 1e-9
    assert saturday.mean() < occ[:5].mean()


@pytest.mark.parametrize("lag", [0, 2])
def test_noise_free_traffic_is_deterministic_function_of_occupancy(lag):
    f = syn.generate(syn.GenConfig(days=28, zones=3, coupling=1.0, noise_std=0.0, lag_hours=lag, seed=3))
    n = len(f)
    occ = f.occupancy
    shifted = np.vstack([np.repeat(occ[:1], lag, axis=0), occ[: n - lag]]) if lag else occ
    hour = np.tile(np.arange(24), 28)
    weekend = np.repeat((np.arange(28) % 7) >= 5, 24)
    dummies = np.zeros((n, 48))
    dummies[np.arange(n), hour + 24 * weekend] = 1.0
    X = np.column_stack([shifted, dummies])
    coef, *_ = np.linalg.lstsq(X, f.traffic, rcond=None)
    resid = f.traffic - X @ coef
    r2 = 1 - resid @ resid / np.sum((f.traffic - f.traffic.mean()) ** 2)
    assert r2 > 0.999


def weekday_pearson(frame):
    days, _ = daily_vectors(frame)
    r = pearson_daily(days)
    wk = np.array([d.weekday for d in days])
    return r[wk]


def test_coupling_monotone_in_weekday_pearson():
    for seed in range(5):
        means = [
            np.nanmean(weekday_pearson(syn.generate(syn.GenConfig(days=56, coupling=c, seed=seed))))
            for c in (0.0, 0.3, 0.6, 0.9, 1.0)
        ]
        assert all(a < b for a, b in zip(means, means[1:])), (seed, means)


def test_coupling_09_gives_strong_weekday_pearson():
    r = weekday_pearson(syn.generate(syn.GenConfig(days=140, coupling=0.9, noise_std=0.05)))
    assert np.mean(r >= 0.5) > 0.7


def test_benchmark_suite_structure():
    suite = syn.benchmark_suite(seed=3, days=28)
    assert list(suite) == ["road-a", "road-b", "road-c", "road-d"]
    couplings = [c for _, c, _, _ in syn.ROADS]
    assert couplings == sorted(couplings, reverse=True)
    occ = [f.occupancy for f in suite.values()]
    assert all(np.array_equal(occ[0], o) for o in occ[1:])
    assert np.nanmean(weekday_pearson(suite["road-a"])) > np.nanmean(weekday_pearson(suite["road-d"]))


def test_benchmark_suite_hash_stable():
    a = syn.benchmark_suite(seed=11, days=7)
    b = syn.benchmark_suite(seed=11, days=7)
    assert {k: syn.frame_digest(v) for k, v in a.items()} == {k: syn.frame_digest(v) for k, v in b.items()}


def test_aqi_anticorrelated_with_traffic_and_rain_sparse():
    f = syn.generate(syn.GenConfig(days=60, env_channels=8))
    names = f.names
    aqi = f.channels[:, names.index("env:aqi")]
    rain = f.channels[:, names.index("env:rain")]
    assert np.corrcoef(aqi, f.traffic)[0, 1] < -0.3
    assert np.all(rain >= 0) and np.mean(rain > 0) < 0.1
    co2 = f.channels[:, names.index("env:co2")]
    assert np.corrcoef(co2[1:], f.occupancy.sum(axis=1)[:-1])[0, 1] > 0.5
