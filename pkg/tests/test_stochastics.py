import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqlat.exceptions import ConvergenceError, DegenerateRatesError, InstabilityError, ParameterError
from pqlat.stochastics import (
    GeometricLaw,
    MM1Params,
    geometric_pmf,
    hypoexp_cdf_batch,
    hypoexp_pdf_batch,
    make_exponential,
    make_hypoexponential,
    make_rng,
    mm1_sojourn,
    numeric_convolution,
    sample,
    shift,
    sojourn_lst,
)

# 2 (e^-1 - e^-2): the two-stage density at t = 1
PDF_12_AT_1 = 2 * (math.exp(-1) - math.exp(-2))


class TestExponential:
    def test_mean(self):
        assert make_exponential(2.0).mean() == pytest.approx(0.5)

    def test_cdf_at_origin(self):
        assert make_exponential(1.0).cdf(0.0) == 0.0

    def test_pdf_value(self):
        assert make_exponential(1.0).pdf(1.0) == pytest.approx(0.3678794, abs=5e-8)

    @pytest.mark.parametrize("rate", [0.0, -1.0, math.inf, math.nan])
    def test_bad_rate(self, rate):
        with pytest.raises(ParameterError):
            make_exponential(rate)

    def test_quantile_inverts_cdf(self):
        d = make_exponential(0.7)
        u = np.array([0.01, 0.5, 0.99])
        assert np.allclose(d.cdf(d.quantile(u)), u, rtol=1e-12)


class TestHypoexponential:
    def test_mean(self):
        assert make_hypoexponential([1.0, 2.0]).mean() == pytest.approx(1.5)

    def test_pdf_vanishes_at_origin(self):
        assert make_hypoexponential([1.0, 2.0]).pdf(0.0) == 0.0

    def test_pdf_value(self):
        assert make_hypoexponential([1.0, 2.0]).pdf(1.0) == pytest.approx(PDF_12_AT_1, rel=1e-12)
        assert make_hypoexponential([1.0, 2.0]).pdf(1.0) == pytest.approx(0.4650883, abs=5e-8)

    def test_rates_sorted(self):
        assert make_hypoexponential([3.0, 1.0, 2.0]).rates == (1.0, 2.0, 3.0)

    def test_near_equal_rates_rejected(self):
        with pytest.raises(DegenerateRatesError):
            make_hypoexponential([1.0, 1.0 + 1e-12])

    def test_too_many_stages(self):
        with pytest.raises(ParameterError):
            make_hypoexponential(np.arange(1, 8, dtype=float))

    def test_variance(self):
        assert make_hypoexponential([1.0, 2.0]).var() == pytest.approx(1.25)

    def test_pdf_integrates_to_one(self):
        d = make_hypoexponential([0.5, 3.0, 11.0])
        t = np.linspace(0, 60, 200001)
        assert np.trapezoid(d.pdf(t), t) == pytest.approx(1.0, abs=1e-6)

    def test_cdf_matches_integrated_pdf(self):
        d = make_hypoexponential([1.0, 2.5, 7.0])
        t = np.linspace(0, 4, 40001)
        integral = np.concatenate([[0], np.cumsum(0.5 * (d.pdf(t[1:]) + d.pdf(t[:-1])) * np.diff(t))])
        assert np.allclose(d.cdf(t), integral, atol=1e-7)

    def test_shift(self):
        d = shift(make_hypoexponential([1.0, 2.0]), 0.5)
        assert d.mean() == pytest.approx(2.0)
        assert d.pdf(0.4) == 0.0
        assert d.pdf(1.5) == pytest.approx(PDF_12_AT_1)
        assert shift(d, 0.5).offset == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.1, 50.0), min_size=2, max_size=5, unique=True))
    def test_quantile_roundtrip(self, rates):
        srt = sorted(rates)
        if any((b - a) / b < 1e-3 for a, b in zip(srt, srt[1:])):
            return
        d = make_hypoexponential(rates)
        for u in (0.05, 0.5, 0.95):
            assert d.cdf(d.quantile(u)) == pytest.approx(u, abs=1e-9)

    def test_batch_matches_scalar(self):
        rates = np.array([[1.0, 2.0, 5.0], [0.5, 0.7, 3.0]])
        t = np.array([0.8, 2.0])
        pdf = hypoexp_pdf_batch(rates, t)
        cdf = hypoexp_cdf_batch(rates, t)
        for i in range(2):
            d = make_hypoexponential(rates[i])
            assert pdf[i] == pytest.approx(float(d.pdf(t[i])), rel=1e-10)
            assert cdf[i] == pytest.approx(float(d.cdf(t[i])), rel=1e-10)


class TestGeometric:
    def test_untruncated_value(self):
        assert geometric_pmf(GeometricLaw(0.9), 1) == pytest.approx(0.09)

    def test_no_failures(self):
        assert geometric_pmf(GeometricLaw(1.0), 0) == 1.0

    def test_truncated_renormalized(self):
        assert geometric_pmf(GeometricLaw(0.9, 2), 2) == pytest.approx(0.009 / 0.999, rel=1e-12)
        assert geometric_pmf(GeometricLaw(0.9, 2), 2) == pytest.approx(0.0090090, abs=5e-8)

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            geometric_pmf(GeometricLaw(0.9, 2), 3)
        with pytest.raises(ParameterError):
            geometric_pmf(GeometricLaw(0.9), -1)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.01, 1.0), st.integers(0, 30))
    def test_truncated_pmf_sums_to_one(self, p, n_max):
        assert GeometricLaw(p, n_max).pmf_vector().sum() == pytest.approx(1.0, abs=1e-12)

    def test_always_zero_when_certain(self):
        draws = sample(GeometricLaw(1.0), make_rng(0), 1000)
        assert np.all(draws == 0)

    def test_sample_mean(self):
        law = GeometricLaw(0.6, 4)
        draws = law.sample(make_rng(1), 200000)
        assert draws.max() <= 4
        assert draws.mean() == pytest.approx(law.mean(), abs=0.01)


class TestMM1:
    def test_sojourn_rate(self):
        assert mm1_sojourn(MM1Params(0.5, 1.0)).rates == (0.5,)

    def test_light_traffic(self):
        assert mm1_sojourn(MM1Params(1e-9, 1.0)).rates[0] == pytest.approx(1.0)

    def test_heavy_traffic_mean(self):
        assert mm1_sojourn(MM1Params(0.9, 1.0)).mean() == pytest.approx(10.0)

    def test_unstable(self):
        with pytest.raises(InstabilityError):
            MM1Params(1.0, 1.0)

    def test_lst_examples(self):
        assert sojourn_lst(0.0, MM1Params(0.3, 1.0)) == 1.0
        assert sojourn_lst(0.5, MM1Params(0.5, 1.0)) == pytest.approx(0.5, rel=1e-12)
        assert sojourn_lst(0.1, MM1Params(0.9, 1.0)) == pytest.approx(0.5, rel=1e-12)

    def test_lst_negative_argument(self):
        with pytest.raises(ParameterError):
            sojourn_lst(-1.0, MM1Params(0.5, 1.0))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 0.95), st.floats(0.1, 10.0), st.floats(0.0, 20.0))
    def test_lst_simplified_form(self, rho, mu, s):
        params = MM1Params(rho * mu, mu)
        r = mu * (1 - params.utilization)
        assert sojourn_lst(s, params) == pytest.approx(r / (r + s), rel=1e-12)


class TestConvolution:
    def test_matches_closed_form(self):
        got = numeric_convolution(make_exponential(1.0), make_exponential(2.0), 1.0)
        assert got == pytest.approx(PDF_12_AT_1, abs=1e-6)

    def test_origin(self):
        assert numeric_convolution(make_exponential(1.0), make_exponential(3.0), 0.0) == 0.0

    def test_erlang_limit(self):
        got = numeric_convolution(make_exponential(1.0), make_exponential(1.0 + 1e-12), 1.5)
        assert got == pytest.approx(1.5 * math.exp(-1.5), abs=1e-6)
        with pytest.raises(DegenerateRatesError):
            make_hypoexponential([1.0, 1.0 + 1e-12])

    def test_unresolved_grid(self):
        with pytest.raises(ConvergenceError):
            numeric_convolution(make_exponential(1.0), make_exponential(2.0), 1.0, n_points=2,
                                tol=1e-15, max_doublings=2)


class TestSampling:
    def test_exponential_mean(self):
        x = sample(make_exponential(2.0), make_rng(3), 10**6)
        assert abs(x.mean() - 0.5) < 3 * 0.5 / 1000

    def test_hypoexp_mean(self):
        x = sample(make_hypoexponential([1.0, 2.0]), make_rng(4), 10**6)
        assert abs(x.mean() - 1.5) < 3 * math.sqrt(1.25) / 1000

    def test_streams_reproducible_and_distinct(self):
        a = make_rng(7, 0).random(5)
        assert np.array_equal(a, make_rng(7, 0).random(5))
        assert not np.array_equal(a, make_rng(7, 1).random(5))

    def test_shifted_sample(self):
        d = shift(make_exponential(1.0), 2.0)
        assert sample(d, make_rng(0), 1000).min() >= 2.0
