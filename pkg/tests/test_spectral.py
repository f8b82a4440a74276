from fractions import Fraction

import numpy as np
import pytest

from bandnet.errors import CapacityError, DomainError
from bandnet.network import NetworkSpec, forward, init_network
from bandnet.rng import Rng
from bandnet.spectral import (
    SineTerm, activation_statistics, expand_network, layer_count_distribution,
    merge_expansion_terms, per_layer_frequency_variance, preactivation_pdf,
    predicted_frequency_variance, predicted_sine_activation_variance,
    predicted_sine_count, sine_product_expand,
)


def make_spec(n_layers, d_h, bw=1.5, d_in=1, quantize=False, heads=None):
    heads = heads if heads is not None else (n_layers - 1,)
    return NetworkSpec(d_in, d_h, n_layers, 1, bandwidths=(bw,) * n_layers,
                       heads=heads, quantize=quantize)


class TestSineProductExpand:
    def test_sin_squared_identity(self):
        a = SineTerm(1.0, np.array([1.0]), 0.0)
        t1, t2 = sine_product_expand(a, a)
        for x in (0.0, 0.3, 1.7):
            val = (t1.amplitude * np.sin(t1.frequency[0] * x + t1.phase)
                   + t2.amplitude * np.sin(t2.frequency[0] * x + t2.phase))
            assert val == pytest.approx(np.sin(x) ** 2, abs=1e-14)

    def test_zero_amplitude_annihilates(self):
        a = SineTerm(0.0, np.array([2.0]), 0.4)
        b = SineTerm(3.0, np.array([1.0]), -0.2)
        t1, t2 = sine_product_expand(a, b)
        assert t1.amplitude == 0.0 and t2.amplitude == 0.0

    def test_random_products_pointwise(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = SineTerm(rng.normal(), rng.normal(size=2), rng.normal())
            b = SineTerm(rng.normal(), rng.normal(size=2), rng.normal())
            t1, t2 = sine_product_expand(a, b)
            xs = rng.uniform(-2, 2, size=(50, 2))
            direct = (a.amplitude * np.sin(xs @ a.frequency + a.phase)
                      * b.amplitude * np.sin(xs @ b.frequency + b.phase))
            expanded = (t1.amplitude * np.sin(xs @ t1.frequency + t1.phase)
                        + t2.amplitude * np.sin(xs @ t2.frequency + t2.phase))
            assert np.max(np.abs(direct - expanded)) < 1e-12


class TestPredictedSineCount:
    def test_single_layer_is_width(self):
        for d_h in (1, 2, 7, 256):
            assert predicted_sine_count(1, d_h) == d_h

    def test_known_values(self):
        assert predicted_sine_count(2, 2) == 10
        assert predicted_sine_count(3, 3) == 3 + 18 + 108

    def test_bias_free_corollary(self):
        assert predicted_sine_count(3, 2, with_bias=False) == 32
        for n_l in range(1, 11):
            for d_h in (1, 2, 3, 5):
                assert (predicted_sine_count(n_l, d_h, with_bias=False)
                        == 2 ** (n_l - 1) * d_h ** n_l)

    def test_recursion(self):
        for d_h in (1, 2, 3, 4, 7):
            prev = d_h
            for n_l in range(2, 11):
                cur = predicted_sine_count(n_l, d_h)
                assert cur == d_h + 2 * d_h * prev
                prev = cur


class TestExpandNetwork:
    @pytest.mark.parametrize("n_layers", [1, 2, 3])
    @pytest.mark.parametrize("d_h", [1, 2, 3])
    def test_term_count_matches_closed_form(self, n_layers, d_h):
        for seed in range(20):
            spec = make_spec(n_layers, d_h)
            params = init_network(spec, Rng(seed))
            exp = expand_network(params, spec, n_layers - 1)
            assert exp.n_terms == predicted_sine_count(n_layers, d_h)

    def test_matches_forward_to_1e9(self):
        spec = make_spec(3, 3, bw=2.5, d_in=2)
        params = init_network(spec, Rng(77))
        for i in (1, 2):
            params.biases[i][:] = Rng(78).uniform(-1, 1, size=3)
            params.head_biases[2][:] = 0.3
        exp = expand_network(params, spec, 2)
        x = Rng(79).uniform(-0.5, 0.5, size=(100, 2))
        direct = forward(params, spec, x, dtype=np.float64).heads[2][:, 0]
        assert np.max(np.abs(exp(x) - direct)) <= 1e-9

    def test_bias_only_path(self):
        # With all W zero, the only surviving amplitudes come from the last
        # layer's bias times its sine: exactly d_h nonzero candidates.
        d_h = 4
        spec = make_spec(3, d_h)
        params = init_network(spec, Rng(80))
        for i in (1, 2):
            params.weights[i][:] = 0.0
            params.biases[i][:] = Rng(81).uniform(0.5, 1.0, size=d_h)
        params.head_weights[2][:] = 1.0
        exp = expand_network(params, spec, 2)
        assert exp.n_terms == predicted_sine_count(3, d_h)
        assert int(np.count_nonzero(exp.amplitudes)) == d_h

    def test_band_limit_of_symbolic_frequencies(self):
        # Architectural: holds for arbitrary parameter values, not just init.
        spec = NetworkSpec(2, 3, 3, 1, bandwidths=(1.0, 2.0, 4.0), heads=(1, 2))
        params = init_network(spec, Rng(82))
        for i in (1, 2):
            params.weights[i][:] = Rng(83).standard_normal((3, 3)) * 10
            params.biases[i][:] = Rng(84).standard_normal(3) * 10
        for head in spec.heads:
            exp = expand_network(params, spec, head)
            limit = 2 * np.pi * sum(spec.bandwidths[: head + 1])
            assert np.max(np.abs(exp.frequencies)) <= limit + 1e-9

    def test_capacity_guard(self):
        spec = make_spec(5, 40)
        params = init_network(spec, Rng(85))
        with pytest.raises(CapacityError):
            expand_network(params, spec, 4)

    def test_merge_pass_shrinks_duplicates(self):
        spec = make_spec(2, 2, quantize=True, bw=1.0)
        params = init_network(spec, Rng(86))
        exp = expand_network(params, spec, 1)
        freqs, phases, amps = merge_expansion_terms(exp)
        assert len(amps) <= exp.n_terms
        x = Rng(87).uniform(-0.5, 0.5, size=(40, 1))
        merged_val = np.sin(x @ freqs.T + phases) @ amps + exp.offset
        assert np.max(np.abs(merged_val - exp(x))) < 1e-9


class TestFrequencyDistribution:
    def test_p_m_normalized_exactly(self):
        for n_l in (1, 2, 5, 16):
            for d_h in (1, 3, 64, 4096):
                p = layer_count_distribution(n_l, d_h)
                assert np.all(p >= 0)
                assert abs(p.sum() - 1.0) < 1e-12
                # exact rational check
                numers = [Fraction(2 ** (n_l - 1 - m) * d_h ** (n_l - m))
                          for m in range(n_l)]
                total = sum(numers)
                assert sum(n / total for n in numers) == 1

    def test_closed_form_vs_monte_carlo_compound(self):
        # 1e6 draws of the bias depth m, then signed sums of n_layers - m
        # uniform frequency draws; variance must match within 1%.
        n_l, d_h, bw = 5, 1024, 10.0
        spec = make_spec(n_l, d_h, bw=bw, quantize=False)
        stats = predicted_frequency_variance(spec)
        rng = np.random.default_rng(123)
        m_draws = rng.choice(n_l, size=1_000_000, p=stats.p_m)
        samples = np.zeros(1_000_000)
        b_rad = 2 * np.pi * bw
        for m in range(n_l):
            mask = m_draws == m
            k = n_l - m
            w = rng.uniform(-b_rad, b_rad, size=(int(mask.sum()), k))
            s = rng.choice([-1.0, 1.0], size=w.shape)
            samples[mask] = (w * s).sum(axis=1)
        assert samples.var() == pytest.approx(stats.output_variance, rel=0.01)

    def test_closed_form_vs_expansion_ensemble(self):
        # Empirical variance of symbolic frequencies over 1e4 random
        # initializations of a (2, 2) network, within 3%.
        spec = make_spec(2, 2, bw=1.5, quantize=False)
        stats = predicted_frequency_variance(spec)
        freqs = []
        for seed in range(10_000):
            params = init_network(spec, Rng(seed))
            exp = expand_network(params, spec, 1)
            freqs.append(exp.frequencies[:, 0])
        freqs = np.concatenate(freqs)
        assert freqs.mean() == pytest.approx(0.0, abs=0.05 * np.sqrt(stats.output_variance))
        assert freqs.var() == pytest.approx(stats.output_variance, rel=0.03)

    def test_quantized_per_layer_variance(self):
        spec = make_spec(1, 2, bw=3.0, quantize=True)
        v = per_layer_frequency_variance(spec)[0]
        # discrete uniform on -3..3 cycles: K(K+1)/3 = 4 cycles^2
        assert v == pytest.approx((2 * np.pi) ** 2 * 4.0)

    def test_heterogeneous_bandwidths_flagged(self):
        spec = NetworkSpec(1, 4, 2, 1, bandwidths=(1.0, 3.0), heads=(1,))
        assert predicted_frequency_variance(spec).approximate
        assert not predicted_frequency_variance(make_spec(2, 4)).approximate


class TestPreactivationPdf:
    def test_support_boundary_zero(self):
        b = 30 * np.pi
        assert preactivation_pdf(b / 2, b) == 0.0
        assert preactivation_pdf(-b / 2, b) == 0.0
        assert preactivation_pdf(b, b) == 0.0

    def test_integrates_to_one(self):
        from scipy.integrate import quad
        b = 30 * np.pi
        val, err = quad(lambda z: preactivation_pdf(z, b), -b / 2, b / 2,
                        points=[0.0], limit=200)
        assert err < 1e-8
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_histogram_of_samples_matches(self):
        # 1e6 draws of w*x + p; max per-bin deviation between the histogram
        # and the exact bin masses of the pdf below 2% (the small residual is
        # the phase broadening the pdf neglects).
        b = 30 * np.pi
        rng = np.random.default_rng(5)
        w = rng.uniform(-b, b, size=1_000_000)
        x = rng.uniform(-0.5, 0.5, size=1_000_000)
        p = rng.uniform(-np.pi, np.pi, size=1_000_000)
        z = w * x + p
        edges = np.linspace(-b / 2, b / 2, 61)
        hist, _ = np.histogram(z, bins=edges)
        hist = hist / (hist.sum())
        # exact bin masses via the antiderivative z/B (log(B/2z) + 1)
        def cdf_half(t):  # integral of the pdf over [0, t], t >= 0
            t = min(t, b / 2)
            if t <= 0:
                return 0.0
            return t / b * (np.log(b / (2 * t)) + 1)
        masses = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            def signed(t):
                return np.sign(t) * cdf_half(abs(t))
            masses.append(signed(hi) - signed(lo))
        masses = np.array(masses)
        assert np.max(np.abs(hist - masses)) < 0.02

    def test_low_bandwidth_warns(self):
        with pytest.warns(UserWarning):
            preactivation_pdf(0.1, np.pi / 2)
        with pytest.raises(DomainError):
            preactivation_pdf(0.0, -1.0)


class TestSineActivationVariance:
    def test_large_bandwidth_limit(self):
        assert predicted_sine_activation_variance(1e7) == pytest.approx(0.5, abs=1e-6)

    def test_monte_carlo_cross_check(self):
        # The formula is the exact variance of sin(W X); the phase term it
        # neglects would push the value to exactly 1/2.
        b = 30 * np.pi
        rng = np.random.default_rng(6)
        w = rng.uniform(-b, b, size=1_000_000)
        x = rng.uniform(-0.5, 0.5, size=1_000_000)
        emp = np.sin(w * x).var()
        assert emp == pytest.approx(predicted_sine_activation_variance(b), rel=0.01)

    def test_outside_validity_warns_but_returns(self):
        with pytest.warns(UserWarning):
            v = predicted_sine_activation_variance(np.pi / 2)
        b = np.pi / 2
        from bandnet.numerics import sine_integral
        assert v == pytest.approx(0.5 * (1 - sine_integral(b) / b))


class TestActivationStatistics:
    def test_init_scheme_stage_variances(self):
        spec = make_spec(4, 256, bw=15.0, quantize=False, heads=(3,))
        params = init_network(spec, Rng(30))
        stats = activation_statistics(params, spec, 20_000, Rng(31))
        assert np.isnan(stats.lin_var[0])
        for i in range(1, 4):
            assert stats.lin_var[i] == pytest.approx(1.0, rel=0.1)
            assert stats.hidden_var[i] == pytest.approx(0.5, rel=0.15)

    def test_zero_weights_zero_linear_variance(self):
        spec = make_spec(2, 32, heads=(1,))
        params = init_network(spec, Rng(32))
        params.weights[1][:] = 0
        stats = activation_statistics(params, spec, 10_000, Rng(33))
        assert stats.lin_var[1] == 0.0

    def test_deterministic_under_seed(self):
        spec = make_spec(2, 16, heads=(1,))
        params = init_network(spec, Rng(34))
        a = activation_statistics(params, spec, 10_000, Rng(35))
        b = activation_statistics(params, spec, 10_000, Rng(35))
        assert np.array_equal(a.hidden_var, b.hidden_var, equal_nan=True)
        assert np.array_equal(a.lin_var, b.lin_var, equal_nan=True)
