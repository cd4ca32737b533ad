"""Count model fitting/sampling/quantiles and the robust counterpart,
cross-checked against scipy's distribution implementations."""

import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from eamod import (
    ArcLognormal,
    CountModel,
    InvalidParameter,
    RobustParams,
    count_quantile,
    fit_moments,
    robustify,
    sample,
    sample_chargers,
)
from eamod.forecast import DISPERSION_CAP, nb_pmf, read_counts_csv
from eamod.seeding import stream

from helpers import desk_instance


def scalar_model(mean, dispersion, t_bins=2):
    """One NB cell replicated over a couple of time bins."""
    m = np.full((t_bins, 1), float(mean))
    r = np.full((t_bins, 1), float(dispersion))
    return CountModel(mean=m, dispersion=r, seed=0)


# -- fitting -----------------------------------------------------------------

def test_fit_constant_history_caps_dispersion():
    history = [np.full((2, 2), 4.0) for _ in range(6)]
    model = fit_moments(history)
    np.testing.assert_allclose(model.mean, 4.0)
    np.testing.assert_allclose(model.dispersion, DISPERSION_CAP)


def test_fit_two_samples_solves_moment_equation():
    # mean 4, sample variance 8: 8 = 4 + 16/r gives r = 4
    model = fit_moments([np.array([[2.0]]), np.array([[6.0]])])
    assert model.mean[0, 0] == pytest.approx(4.0)
    assert model.dispersion[0, 0] == pytest.approx(4.0)
    assert model.variance()[0, 0] == pytest.approx(8.0)


def test_fit_zero_history_samples_zero():
    model = fit_moments([np.zeros((3, 3)) for _ in range(4)])
    np.testing.assert_allclose(model.mean, 0.0)
    draw = sample(model, 0, stream(7, "z"))
    np.testing.assert_array_equal(draw, 0)


def test_fit_rejects_degenerate_history():
    with pytest.raises(InvalidParameter):
        fit_moments([])
    with pytest.raises(InvalidParameter):
        fit_moments([np.ones((2, 2))])  # a single observation has no variance
    with pytest.raises(InvalidParameter):
        fit_moments([np.array([[1.0]]), np.array([[-1.0]])])


def test_count_model_validation_and_round_trip():
    with pytest.raises(InvalidParameter):
        CountModel(mean=np.ones((2, 2)), dispersion=np.ones((2, 3)))
    with pytest.raises(InvalidParameter):
        CountModel(mean=-np.ones((2, 2)), dispersion=np.ones((2, 2)))
    with pytest.raises(InvalidParameter):
        CountModel(mean=np.ones((2, 2)), dispersion=np.zeros((2, 2)))
    model = fit_moments([np.array([[2.0, 0.0]]), np.array([[6.0, 0.0]])], seed=11)
    back = CountModel.from_text(model.to_text())
    np.testing.assert_allclose(back.mean, model.mean)
    np.testing.assert_allclose(back.dispersion, model.dispersion)
    assert back.seed == 11
    with pytest.raises(InvalidParameter):
        CountModel.from_text('{"format": "bogus"}')


# -- sampling -----------------------------------------------------------------

def test_sample_reproducible_and_time_checked():
    model = scalar_model(4.0, 4.0)
    a = sample(model, 1, stream(3, "s"))
    b = sample(model, 1, stream(3, "s"))
    np.testing.assert_array_equal(a, b)
    c = sample(model, 1, stream(4, "s"))
    assert a.dtype == np.int64
    assert c.shape == a.shape
    with pytest.raises(InvalidParameter):
        sample(model, 2, stream(3, "s"))
    with pytest.raises(InvalidParameter):
        sample(model, -1, stream(3, "s"))


def test_sample_moments_converge():
    model = scalar_model(4.0, 4.0)
    rng = stream(123, "moments")
    draws = np.array([sample(model, 0, rng)[0] for _ in range(100_000)])
    # mean 4, variance 4 + 16/4 = 8; 3 sigma on the mean estimate
    assert abs(draws.mean() - 4.0) < 3.0 * math.sqrt(8.0 / len(draws))
    assert draws.var() == pytest.approx(8.0, rel=0.05)
    assert draws.min() >= 0


def test_sample_chargers_clip_at_nominal():
    model = scalar_model(50.0, 2.0, t_bins=1)
    nominal = np.array([3])
    rng = stream(5, "chg")
    for _ in range(50):
        got = sample_chargers(model, nominal, 0, rng)
        assert 0 <= got[0] <= 3


# -- pmf and quantiles vs scipy ------------------------------------------------

def test_nb_pmf_matches_scipy():
    for mean, r in ((4.0, 4.0), (0.7, 12.0), (15.0, 2.5)):
        p = r / (r + mean)
        for k in range(0, 40):
            assert nb_pmf(k, mean, r) == pytest.approx(
                scipy.stats.nbinom.pmf(k, r, p), rel=1e-10, abs=1e-300)
    assert nb_pmf(-1, 4.0, 4.0) == 0.0
    assert nb_pmf(0, 0.0, 4.0) == 1.0
    assert nb_pmf(3, 0.0, 4.0) == 0.0


@settings(deadline=None, max_examples=60, derandomize=True)
@given(st.integers(0, 10 ** 6))
def test_count_quantile_matches_scipy_ppf(seed):
    rng = np.random.default_rng(seed)
    mean = rng.uniform(0.1, 30.0)
    r = rng.uniform(0.3, 50.0)
    q = rng.uniform(0.01, 0.99)
    p = r / (r + mean)
    assert count_quantile(mean, r, q) == int(scipy.stats.nbinom.ppf(q, r, p))


def test_count_quantile_edges():
    assert count_quantile(0.0, 5.0, 0.99) == 0
    assert count_quantile(4.0, 4.0, 0.95) >= count_quantile(4.0, 4.0, 0.5)
    with pytest.raises(InvalidParameter):
        count_quantile(4.0, 4.0, 0.0)
    with pytest.raises(InvalidParameter):
        count_quantile(4.0, 4.0, 1.0)


# -- log-normal records -----------------------------------------------------------

def test_lognormal_quantile_matches_scipy():
    loc = np.array([10.0, 25.0, 0.0])
    cv = np.array([0.5, 0.2, 0.5])
    dist = ArcLognormal(loc, cv)
    for q in (0.2, 0.5, 0.8, 0.95):
        got = dist.quantile(q)
        for idx in range(2):
            sigma = math.sqrt(math.log(1.0 + cv[idx] ** 2))
            mu = math.log(loc[idx]) - 0.5 * sigma ** 2
            want = scipy.stats.lognorm.ppf(q, s=sigma, scale=math.exp(mu))
            assert got[idx] == pytest.approx(want, rel=1e-9)
        assert got[2] == 0.0  # zero location stays zero


def test_lognormal_mean_is_location():
    # the scale parameterization is mean-preserving: E[X] = location
    dist = ArcLognormal(np.array([10.0]), np.array([0.7]))
    sigma = math.sqrt(math.log(1.0 + 0.49))
    mu = math.log(10.0) - 0.5 * sigma ** 2
    assert scipy.stats.lognorm.mean(s=sigma, scale=math.exp(mu)) == pytest.approx(10.0)


def test_lognormal_degenerate_and_validation():
    dist = ArcLognormal(np.array([3.0, 7.0]), np.array([0.0, 0.0]))
    np.testing.assert_allclose(dist.quantile(0.01), [3.0, 7.0])
    np.testing.assert_allclose(dist.quantile(0.99), [3.0, 7.0])
    with pytest.raises(InvalidParameter):
        ArcLognormal(np.array([-1.0]), np.array([0.1]))
    with pytest.raises(InvalidParameter):
        ArcLognormal(np.array([1.0]), np.array([-0.1]))
    with pytest.raises(InvalidParameter):
        dist.quantile(1.0)


# -- robust counterpart ------------------------------------------------------------

def test_robust_params_validation():
    with pytest.raises(InvalidParameter):
        RobustParams(eps_energy=0.0)
    with pytest.raises(InvalidParameter):
        RobustParams(eps_time=1.0)
    with pytest.raises(InvalidParameter):
        robustify(desk_instance(), RobustParams())  # no records attached


def test_robustify_degenerate_distributions_change_nothing():
    inst = desk_instance(n=3, soc_bins=6, energy_bins=2, margin=1)
    robust = RobustParams.from_instance(inst)  # zero cv everywhere
    out = robustify(inst, robust)
    assert out is not inst
    np.testing.assert_array_equal(out.travel_energy, inst.travel_energy)
    np.testing.assert_array_equal(out.travel_time, inst.travel_time)
    np.testing.assert_array_equal(out.min_soc, inst.min_soc)
    np.testing.assert_array_equal(out.chargers, inst.chargers)


def test_robustify_energy_quantiles_match_scipy():
    inst = desk_instance(n=2, soc_bins=4, battery_kwh=40.0, energy_bins=1)
    robust = RobustParams.from_instance(inst, energy_cv=0.5, eps_energy=0.2)
    out = robustify(inst, robust)
    sigma = math.sqrt(math.log(1.0 + 0.25))
    for i in range(2):
        for j in range(2):
            for t in range(inst.horizon):
                kwh = inst.travel_energy[i, j, t] * inst.bin_kwh
                if kwh == 0.0:
                    want = 0
                else:
                    mu = math.log(kwh) - 0.5 * sigma ** 2
                    q80 = scipy.stats.lognorm.ppf(0.8, s=sigma, scale=math.exp(mu))
                    want = min(math.ceil(q80 / inst.bin_kwh - 1e-9), inst.soc_bins)
                assert out.travel_energy[i, j, t] == want
    # the min_soc margin over the worst-case arc energy is preserved
    margin = inst.min_soc - inst.travel_energy.max(axis=2)
    np.testing.assert_array_equal(
        out.min_soc, out.travel_energy.max(axis=2) + margin)


def test_robustify_time_keeps_self_loops():
    inst = desk_instance(n=2, travel_steps=2)
    robust = RobustParams.from_instance(inst, time_cv=0.8, eps_time=0.05)
    out = robustify(inst, robust)
    for i in range(2):
        assert np.all(out.travel_time[i, i, :] == 1)
    off = out.travel_time[0, 1, :]
    assert np.all(off >= inst.travel_time[0, 1, :])


def test_robustify_monotone_in_tolerance():
    inst = desk_instance(n=2, soc_bins=10, energy_bins=3)
    tight = robustify(inst, RobustParams.from_instance(inst, energy_cv=0.6,
                                                       eps_energy=0.05))
    loose = robustify(inst, RobustParams.from_instance(inst, energy_cv=0.6,
                                                       eps_energy=0.4))
    assert np.all(tight.travel_energy >= loose.travel_energy)


def test_robustify_rejects_shape_mismatch():
    inst = desk_instance(n=2)
    other = desk_instance(n=3)
    robust = RobustParams.from_instance(other)
    with pytest.raises(InvalidParameter):
        robustify(inst, robust)


# -- counts CSV ---------------------------------------------------------------------

def test_read_counts_csv_happy_path():
    lines = [
        "origin_station, dest_station, time_bin, count",
        "0, 1, 0, 3",
        "1, 0, 2, 5",
        "0, 1, 0, 2",  # duplicate cell accumulates
    ]
    out = read_counts_csv(lines, n_stations=2, n_time_bins=3)
    assert out.shape == (3, 2, 2)
    assert out[0, 0, 1] == 5
    assert out[2, 1, 0] == 5
    assert out.sum() == 10


def test_read_counts_csv_rejects_malformed():
    good_header = "origin_station, dest_station, time_bin, count"
    with pytest.raises(InvalidParameter):
        read_counts_csv([], 2, 3)
    with pytest.raises(InvalidParameter):
        read_counts_csv(["a, b, c, d"], 2, 3)
    with pytest.raises(InvalidParameter):
        read_counts_csv([good_header, "0, 1, 0"], 2, 3)
    with pytest.raises(InvalidParameter):
        read_counts_csv([good_header, "0, x, 0, 1"], 2, 3)
    with pytest.raises(InvalidParameter):
        read_counts_csv([good_header, "0, 5, 0, 1"], 2, 3)
    with pytest.raises(InvalidParameter):
        read_counts_csv([good_header, "0, 1, 0, -1"], 2, 3)
