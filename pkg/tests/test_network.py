import time

import numpy as np
import pytest

from bandnet.errors import InvalidInputError
from bandnet.network import (
    NetworkSpec, cumulative_bandwidth, evaluate_truncated, forward, backward,
    init_network, load_checkpoint, save_checkpoint,
)
from bandnet.numerics import dft_spectrum, sine_integral
from bandnet.rng import Rng


def simple_spec(n_layers=3, d_h=4, d_in=1, d_out=1, bw=2.0, heads=None,
                quantize=True):
    heads = heads if heads is not None else (n_layers - 1,)
    return NetworkSpec(in_dim=d_in, hidden_dim=d_h, n_layers=n_layers,
                       out_dim=d_out, bandwidths=(bw,) * n_layers, heads=heads,
                       quantize=quantize)


class TestSpecValidation:
    def test_rejects_bad_bandwidth_count(self):
        with pytest.raises(InvalidInputError):
            NetworkSpec(1, 4, 3, 1, bandwidths=(1.0, 1.0), heads=(2,))

    def test_rejects_out_of_range_heads(self):
        with pytest.raises(InvalidInputError):
            NetworkSpec(1, 4, 3, 1, bandwidths=(1.0,) * 3, heads=(3,))
        with pytest.raises(InvalidInputError):
            NetworkSpec(1, 4, 3, 1, bandwidths=(1.0,) * 3, heads=())

    def test_single_layer_head_zero_allowed(self):
        spec = NetworkSpec(1, 4, 1, 1, bandwidths=(2.0,), heads=(0,))
        assert spec.heads == (0,)


class TestInitialization:
    def test_sine_output_variance_matches_formula(self):
        # d_h=1024, per-layer bandwidth 15 cycles (30*pi rad): pooled variance
        # of the first sine layer within 5% of (1 - SI(B)/B)/2.
        spec = NetworkSpec(1, 1024, 1, 1, bandwidths=(15.0,), heads=(0,),
                           quantize=False)
        params = init_network(spec, Rng(0))
        x = Rng(1).uniform(-0.5, 0.5, size=(4096, 1))
        g = np.sin(x @ params.freqs[0].T + params.phases[0])
        b_rad = 2 * np.pi * 15.0
        predicted = 0.5 * (1 - sine_integral(b_rad) / b_rad)
        assert g.var() == pytest.approx(predicted, rel=0.05)

    def test_post_linear_variance_is_unit(self):
        spec = simple_spec(n_layers=2, d_h=1024, bw=15.0, heads=(1,), quantize=False)
        params = init_network(spec, Rng(2))
        x = Rng(3).uniform(-0.5, 0.5, size=(2048, 1))
        trace = forward(params, spec, x)
        assert trace.lin[1].var() == pytest.approx(1.0, rel=0.05)

    def test_zero_bandwidth_gives_constant_network(self):
        spec = simple_spec(n_layers=3, d_h=8, bw=0.0)
        params = init_network(spec, Rng(4))
        assert all(np.all(f == 0) for f in params.freqs)
        x = Rng(5).uniform(-0.5, 0.5, size=(32, 1))
        y = forward(params, spec, x).heads[2]
        assert np.max(np.abs(y - y[0])) == 0.0

    def test_quantized_frequencies_on_grid(self):
        spec = simple_spec(n_layers=2, d_h=64, bw=3.7, heads=(1,), quantize=True)
        params = init_network(spec, Rng(6))
        for f in params.freqs:
            cycles = f / (2 * np.pi)
            assert np.allclose(cycles, np.rint(cycles), atol=1e-12)
            assert np.max(np.abs(cycles)) <= 3.0  # floor(3.7)

    def test_biases_zero(self):
        spec = simple_spec()
        params = init_network(spec, Rng(7))
        assert all(np.all(b == 0) for b in params.biases[1:])
        assert all(np.all(b == 0) for b in params.head_biases.values())


class TestForward:
    def test_constant_path(self):
        spec = simple_spec(n_layers=3, d_h=4, heads=(0, 1, 2))
        params = init_network(spec, Rng(8))
        for i in range(1, 3):
            params.weights[i][:] = 0
            params.biases[i][:] = 0
        for h in spec.heads:
            params.head_weights[h][:] = 0
            params.head_biases[h][:] = 0.37
        x = Rng(9).uniform(-0.5, 0.5, size=(16, 1))
        trace = forward(params, spec, x)
        for h in spec.heads:
            assert np.allclose(trace.heads[h], 0.37)

    def test_single_layer_closed_form(self):
        spec = NetworkSpec(1, 6, 1, 1, bandwidths=(4.0,), heads=(0,))
        params = init_network(spec, Rng(10))
        params.head_biases[0][:] = 0.2
        x = Rng(11).uniform(-0.5, 0.5, size=(40, 1))
        direct = (np.sin(x @ params.freqs[0].T + params.phases[0])
                  @ params.head_weights[0].T + params.head_biases[0])
        assert np.max(np.abs(forward(params, spec, x).heads[0] - direct)) < 1e-12

    def test_shape_validation(self):
        spec = simple_spec(d_in=2)
        params = init_network(spec, Rng(12))
        with pytest.raises(InvalidInputError):
            forward(params, spec, np.ones((4, 3)))
        with pytest.raises(InvalidInputError):
            forward(params, spec, np.ones((0, 2)))
        with pytest.raises(InvalidInputError):
            forward(params, spec, np.full((4, 2), np.nan))

    def test_periodicity_quantized(self):
        spec = NetworkSpec(2, 16, 3, 1, bandwidths=(2.0, 3.0, 3.0), heads=(1, 2))
        params = init_network(spec, Rng(13))
        # give the biases some life so deeper terms are exercised
        for i in range(1, 3):
            params.biases[i][:] = Rng(14).uniform(-1, 1, size=16)
        x = Rng(15).uniform(-0.5, 0.5, size=(64, 2))
        base = forward(params, spec, x)
        for axis in range(2):
            shifted = x.copy()
            shifted[:, axis] += spec.period
            out = forward(params, spec, shifted)
            for h in spec.heads:
                assert np.max(np.abs(out.heads[h] - base.heads[h])) < 1e-9


class TestBackward:
    def test_zero_head_grads_give_zero_grads(self):
        spec = simple_spec(n_layers=3, d_h=8, heads=(1, 2))
        params = init_network(spec, Rng(16))
        x = Rng(17).uniform(-0.5, 0.5, size=(10, 1))
        trace = forward(params, spec, x)
        grads = backward(params, spec, trace,
                         {h: np.zeros_like(trace.heads[h]) for h in spec.heads})
        assert set(grads) == set(params.trainable())
        assert all(np.all(g == 0) for g in grads.values())

    def test_bout_gradient_is_summed_head_grads(self):
        spec = simple_spec(n_layers=2, d_h=8, d_out=3, heads=(1,))
        params = init_network(spec, Rng(18))
        x = Rng(19).uniform(-0.5, 0.5, size=(20, 1))
        trace = forward(params, spec, x)
        gy = Rng(20).standard_normal((20, 3))
        grads = backward(params, spec, trace, {1: gy})
        assert np.allclose(grads["head_b1"], gy.sum(axis=0), atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_central_finite_differences(self, seed):
        # d_h=8, 3 layers, 2 heads; every trainable parameter checked at
        # relative error 1e-5 with step 1e-6 in double precision.
        spec = NetworkSpec(2, 8, 3, 2, bandwidths=(1.0, 2.0, 2.0), heads=(1, 2))
        rng = Rng(100 + seed)
        params = init_network(spec, rng)
        for i in range(1, 3):
            params.biases[i][:] = rng.uniform(-0.5, 0.5, size=8)
        x = rng.uniform(-0.5, 0.5, size=(12, 2))
        gy = {h: rng.standard_normal((12, 2)) for h in spec.heads}

        def loss(p):
            tr = forward(p, spec, x, dtype=np.float64)
            return sum(float(np.sum(gy[h] * tr.heads[h])) for h in spec.heads)

        trace = forward(params, spec, x, dtype=np.float64)
        grads = backward(params, spec, trace, gy)
        eps = 1e-6
        for name, arr in params.trainable().items():
            g = grads[name]
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + eps
                hi = loss(params)
                arr[idx] = orig - eps
                lo = loss(params)
                arr[idx] = orig
                fd = (hi - lo) / (2 * eps)
                scale = max(abs(fd), abs(g[idx]), 1e-8)
                assert abs(fd - g[idx]) / scale < 1e-5, (name, idx, fd, g[idx])


class TestTruncatedEvaluation:
    def test_deepest_head_matches_forward(self):
        spec = simple_spec(n_layers=4, d_h=8, heads=(1, 3))
        params = init_network(spec, Rng(21))
        x = Rng(22).uniform(-0.5, 0.5, size=(30, 1))
        full = forward(params, spec, x)
        assert np.array_equal(evaluate_truncated(params, spec, x, 3), full.heads[3])

    def test_touches_nothing_beyond_head(self):
        spec = NetworkSpec(1, 8, 9, 1, bandwidths=(1.0,) * 9, heads=(1, 8))
        params = init_network(spec, Rng(23))
        reference = evaluate_truncated(params, spec,
                                       np.linspace(-0.5, 0.5, 16)[:, None], 1)
        for i in range(2, 9):  # poison everything after the first head
            params.weights[i][:] = np.nan
            params.biases[i][:] = np.nan
            params.phases[i][:] = np.nan
        params.head_weights[8][:] = np.nan
        poisoned = evaluate_truncated(params, spec,
                                      np.linspace(-0.5, 0.5, 16)[:, None], 1)
        assert np.array_equal(reference, poisoned)

    def test_undeclared_head_rejected(self):
        spec = simple_spec(n_layers=3, heads=(2,))
        params = init_network(spec, Rng(24))
        with pytest.raises(InvalidInputError):
            evaluate_truncated(params, spec, np.zeros((4, 1)), 1)

    def test_first_head_cheaper_than_full(self):
        spec = NetworkSpec(2, 128, 8, 1, bandwidths=(4.0,) * 8, heads=(1, 7))
        params = init_network(spec, Rng(25))
        x = Rng(26).uniform(-0.5, 0.5, size=(20000, 2))
        evaluate_truncated(params, spec, x, 1)  # warm up
        evaluate_truncated(params, spec, x, 7)

        def best_of(head, reps=5):
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                evaluate_truncated(params, spec, x, head)
                times.append(time.perf_counter() - t0)
            return min(times)

        assert best_of(1) < best_of(7)


class TestCumulativeBandwidth:
    def test_image_partition(self):
        b = 32.0
        spec = NetworkSpec(2, 8, 5, 3,
                           bandwidths=(b / 8, b / 8, b / 4, b / 4, b / 4),
                           heads=(1, 2, 4))
        assert cumulative_bandwidth(spec, 1) == pytest.approx(b / 4)
        assert cumulative_bandwidth(spec, 2) == pytest.approx(b / 2)
        assert cumulative_bandwidth(spec, 4) == pytest.approx(b)

    def test_single_layer(self):
        spec = NetworkSpec(1, 4, 1, 1, bandwidths=(5.0,), heads=(0,))
        assert cumulative_bandwidth(spec, 0) == 5.0

    def test_all_zero(self):
        spec = simple_spec(bw=0.0)
        assert cumulative_bandwidth(spec, 2) == 0.0


class TestSpectralPurity:
    def test_head_spectra_confined_to_cumulative_bandwidth(self):
        # Quantized frequencies align with FFT bins, so out-of-band bins of a
        # periodically sampled head are zero to rounding.
        spec = NetworkSpec(1, 32, 3, 1, bandwidths=(2.0, 3.0, 3.0), heads=(1, 2))
        params = init_network(spec, Rng(27))
        for i in range(1, 3):
            params.biases[i][:] = Rng(28).uniform(-1, 1, size=32)
        n = 64
        x = (-0.5 + np.arange(n) / n)[:, None]
        trace = forward(params, spec, x)
        for h in spec.heads:
            spec_h = dft_spectrum(trace.heads[h][:, 0])
            limit = cumulative_bandwidth(spec, h) * spec.period
            out_of_band = np.abs(spec_h.bins[0]) > limit + 1e-9
            peak = spec_h.magnitudes.max()
            assert np.all(spec_h.magnitudes[out_of_band] <= 1e-6 * peak)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        spec = NetworkSpec(2, 16, 4, 3, bandwidths=(1.0, 2.0, 4.0, 4.0),
                           heads=(1, 3), period=2.0, quantize=False)
        params = init_network(spec, Rng(29))
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, spec, params)
        spec2, params2 = load_checkpoint(path)
        assert spec2 == spec
        for a, b in zip(params.freqs, params2.freqs):
            assert np.array_equal(a, b)
        for a, b in zip(params.phases, params2.phases):
            assert np.array_equal(a, b)
        for i in range(1, 4):
            assert np.array_equal(params.weights[i], params2.weights[i])
            assert np.array_equal(params.biases[i], params2.biases[i])
        for h in spec.heads:
            assert np.array_equal(params.head_weights[h], params2.head_weights[h])
            assert np.array_equal(params.head_biases[h], params2.head_biases[h])
