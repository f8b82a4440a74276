import numpy as np
import pytest

from bandnet.errors import InvalidInputError, UnsupportedResolutionError
from bandnet.image_task import (
    ImageField, build_reference_pyramid, fit_image, head_scales,
    image_network_spec, load_image, make_test_image, pixel_grid, psnr,
    render_extrapolated, render_head, save_image, ssim,
)
from bandnet.network import init_network
from bandnet.rng import Rng
from bandnet.training import TrainConfig


class TestPixelGrid:
    def test_left_edge_convention(self):
        g = pixel_grid(4, 4)
        assert g[0, 0] == -0.5 and g[0, 1] == -0.5
        assert g[-1, 0] == pytest.approx(-0.5 + 3 / 4)

    def test_quarter_grid_is_stride_subset(self):
        full = pixel_grid(64, 64).reshape(64, 64, 2)
        quarter = pixel_grid(16, 16).reshape(16, 16, 2)
        assert np.array_equal(full[::4, ::4], quarter)

    def test_offset_half_pixel(self):
        g = pixel_grid(8, 8, offset=0.5)
        assert g[0, 0] == pytest.approx(-0.5 + 0.5 / 8)


class TestReferencePyramid:
    def test_constant_image(self):
        img = ImageField(np.full((32, 32), 0.4))
        levels = build_reference_pyramid(img)
        for lvl in levels:
            assert np.allclose(lvl.pixels, 0.4, atol=1e-12)
        assert [l.shape[0] for l in levels] == [8, 16, 32]

    def test_low_frequency_tone_survives(self):
        x = np.linspace(-0.5, 0.5, 64, endpoint=False)
        tone = 0.5 + 0.25 * np.cos(2 * np.pi * 3 * x)[:, None] * np.ones((1, 64))
        levels = build_reference_pyramid(ImageField(tone))
        xs = np.linspace(-0.5, 0.5, 16, endpoint=False)
        expected = 0.5 + 0.25 * np.cos(2 * np.pi * 3 * xs)[:, None] * np.ones((1, 16))
        assert np.max(np.abs(levels[0].pixels[:, :, 0] - expected)) < 1e-9

    def test_matches_spectral_crop_oracle(self):
        img = make_test_image(64, seed=3)
        level = build_reference_pyramid(img)[0].pixels[:, :, 0]
        f = np.fft.fftshift(np.fft.fft2(img.pixels[:, :, 0]))
        block = f[24:40, 24:40]
        oracle = np.fft.ifft2(np.fft.ifftshift(block)).real * (16 / 64) ** 2
        assert np.max(np.abs(level - oracle)) < 1e-9

    def test_rejects_non_power_of_two(self):
        with pytest.raises(UnsupportedResolutionError):
            build_reference_pyramid(ImageField(np.zeros((48, 48))))


class TestMetrics:
    def test_psnr_closed_form(self):
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)  # MSE 0.01
        assert psnr(a, b) == pytest.approx(20.0)

    def test_psnr_identical_is_inf(self):
        a = np.random.default_rng(0).random((5, 5))
        assert psnr(a, a) == float("inf")

    def test_psnr_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            psnr(np.zeros((4, 4)), np.zeros((5, 5)))

    def test_ssim_identical_is_one(self):
        img = make_test_image(32, seed=1).pixels
        assert ssim(img, img) == pytest.approx(1.0)

    def test_ssim_matches_naive_loop(self):
        rng = np.random.default_rng(2)
        a = rng.random((24, 24))
        b = np.clip(a + 0.1 * rng.standard_normal((24, 24)), 0, 1)

        # independent implementation: explicit window loop
        r = np.arange(11) - 5
        g = np.exp(-(r ** 2) / (2 * 1.5 ** 2))
        win = np.outer(g, g)
        win /= win.sum()
        c1, c2 = 0.01 ** 2, 0.03 ** 2
        vals = []
        for i in range(24 - 10):
            for j in range(24 - 10):
                pa = a[i:i + 11, j:j + 11]
                pb = b[i:i + 11, j:j + 11]
                mu_a = (win * pa).sum()
                mu_b = (win * pb).sum()
                va = (win * pa * pa).sum() - mu_a ** 2
                vb = (win * pb * pb).sum() - mu_b ** 2
                cov = (win * pa * pb).sum() - mu_a * mu_b
                vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                            / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
        assert ssim(a, b) == pytest.approx(float(np.mean(vals)), abs=1e-9)

    def test_metrics_deterministic(self):
        a = make_test_image(32, seed=4).pixels
        b = make_test_image(32, seed=5).pixels
        assert psnr(a, b) == psnr(a.copy(), b.copy())
        assert ssim(a, b) == ssim(a.copy(), b.copy())


class TestImageIo:
    @pytest.mark.parametrize("suffix,depth", [(".png", 8), (".png", 16),
                                              (".ppm", 8), (".ppm", 16),
                                              (".pgm", 8), (".pgm", 16)])
    def test_round_trip(self, tmp_path, suffix, depth):
        channels = 3 if suffix == ".ppm" else 1
        img = make_test_image(16, channels=channels, seed=6)
        path = tmp_path / f"img{suffix}"
        save_image(path, img, bit_depth=depth)
        back = load_image(path)
        assert back.shape == img.shape
        tol = 1.0 / (255 if depth == 8 else 65535)
        assert np.max(np.abs(back.pixels - img.pixels)) <= tol

    def test_16bit_rgb_png_rejected(self, tmp_path):
        img = make_test_image(8, channels=3, seed=7)
        with pytest.raises(InvalidInputError):
            save_image(tmp_path / "x.png", img, bit_depth=16)


class TestFitImage:
    def test_desk_smoke(self):
        img = make_test_image(32, seed=8)
        cfg = TrainConfig(total_steps=400, lr_start=1e-2, lr_end=2e-3, seed=8)
        result = fit_image(img, hidden_dim=64, config=cfg)
        assert result.metrics[4]["psnr"] > 24.0
        # intermediate heads fit their low-pass references reasonably too
        assert result.metrics[1]["psnr"] > 20.0
        assert 0 < result.metrics[4]["ssim"] <= 1

    def test_constant_image_converges_fast(self):
        # DC-only target: a hot schedule drives the head weights to zero and
        # the output bias to the constant within 200 steps.
        img = ImageField(np.full((32, 32), 0.6))
        cfg = TrainConfig(total_steps=199, lr_start=1e-1, lr_end=1e-2, seed=9)
        result = fit_image(img, hidden_dim=32, config=cfg)
        for h in result.spec.heads:
            assert result.metrics[h]["psnr"] > 60.0

    def test_per_head_supervision_mode(self):
        img = make_test_image(32, seed=10)
        cfg = TrainConfig(total_steps=200, lr_start=1e-2, lr_end=2e-3, seed=10,
                          supervision="per-head")
        result = fit_image(img, hidden_dim=48, config=cfg)
        assert result.metrics[4]["psnr"] > 18.0

    def test_head_scales(self):
        spec = image_network_spec(64, 16)
        assert head_scales(spec) == {1: pytest.approx(0.25),
                                     2: pytest.approx(0.5),
                                     4: pytest.approx(1.0)}

    def test_rejects_non_square(self):
        with pytest.raises(InvalidInputError):
            fit_image(ImageField(np.zeros((16, 32))), hidden_dim=8,
                      config=TrainConfig(total_steps=1))


class TestExtrapolation:
    def test_periodic_tiles_at_initialization(self):
        spec = image_network_spec(16, 32)
        params = init_network(spec, Rng(11))
        field = render_extrapolated(params, spec, lo=-2.0, hi=2.0,
                                    samples_per_unit=16)
        px = field.pixels
        assert px.shape[0] == 64
        tiles = [px[16 * i:16 * (i + 1), 16 * j:16 * (j + 1)]
                 for i in range(4) for j in range(4)]
        for t in tiles[1:]:
            assert np.max(np.abs(t - tiles[0])) <= 1e-6

    def test_shift_by_period_exact(self):
        spec = image_network_spec(16, 32)
        params = init_network(spec, Rng(12))
        pts = Rng(13).uniform(-2, 1, size=(50, 2))
        shifted = pts.copy()
        shifted[:, 0] += 1.0
        from bandnet.network import evaluate_truncated
        a = evaluate_truncated(params, spec, pts, 4)
        b = evaluate_truncated(params, spec, shifted, 4)
        assert np.max(np.abs(a - b)) < 1e-9

    def test_constant_network_constant_render(self):
        spec = image_network_spec(16, 8)
        params = init_network(spec, Rng(14))
        params.head_weights[4][:] = 0
        params.head_biases[4][:] = 0.25
        field = render_extrapolated(params, spec, samples_per_unit=8)
        assert np.allclose(field.pixels, 0.25)


class TestRenderHead:
    def test_render_shape_and_truncation(self):
        spec = image_network_spec(32, 16, channels=3)
        params = init_network(spec, Rng(15))
        out = render_head(params, spec, 1, 8)
        assert out.shape == (8, 8, 3)
