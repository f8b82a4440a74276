"""Multiscale image fitting: grids, reference pyramids, training, metrics.

Pixel convention: an N-pixel axis maps pixel j to coordinate -0.5 + j/N, so
the image spans one period of the representation and the 1/s-scale grid is
an exact stride-1/s subset of the full grid. Values live in [0, 1].

The standard fitting network has five sine layers with bandwidth partition
(B/8, B/8, B/4, B/4, B/4) and heads after layers 1, 2, 4, so the three
outputs are band-limited to B/4, B/2 and B, where B = 0.5 cycles/pixel *
resolution is the image's Nyquist bandwidth. Supervising every head on the
full-resolution image then learns a low-pass decomposition without any
per-scale targets.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .errors import InvalidInputError, UnsupportedResolutionError
from .network import NetworkSpec, NetworkParams, evaluate_truncated, init_network
from .numerics import fourier_resample
from .rng import Rng
from .training import TrainConfig, TrainResult, WeightedBatch, train


@dataclass
class ImageField:
    """H x W (x C) pixel array in [0, 1], pixel centers on the unit square."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3:
            raise InvalidInputError(f"expected HxW or HxWxC pixels, got {self.pixels.shape}")

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def channels(self):
        return self.pixels.shape[2]


def pixel_grid(height, width, offset=0.0):
    """(H*W, 2) coordinates of pixel centers; offset=0.5 gives the half-pixel
    validation grid."""
    ys = -0.5 + (np.arange(height) + offset) / height
    xs = -0.5 + (np.arange(width) + offset) / width
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gy.ravel(), gx.ravel()], axis=1)


def _require_power_of_two(n):
    if n < 2 or (n & (n - 1)) != 0:
        raise UnsupportedResolutionError(f"resolution {n} is not a power of two")


def build_reference_pyramid(image: ImageField, scales=(0.25, 0.5, 1.0)):
    """Ideal low-pass references at each scale via spectral resampling.

    Requires power-of-two dimensions so every scale is an integer resolution.
    Scale 1 returns the original pixels. Values are not clamped; ringing may
    leave [0, 1] slightly.
    """
    h, w, c = image.shape
    _require_power_of_two(h)
    _require_power_of_two(w)
    levels = []
    for s in scales:
        th, tw = int(round(h * s)), int(round(w * s))
        if s == 1.0:
            levels.append(ImageField(image.pixels.copy()))
            continue
        chans = [fourier_resample(image.pixels[:, :, k], (th, tw)) for k in range(c)]
        levels.append(ImageField(np.stack(chans, axis=2)))
    return levels


def image_network_spec(resolution, hidden_dim, channels=1, bandwidth=None) -> NetworkSpec:
    """Standard five-layer image spec with heads at layers 1, 2, 4."""
    b = 0.5 * resolution if bandwidth is None else float(bandwidth)
    return NetworkSpec(
        in_dim=2, hidden_dim=hidden_dim, n_layers=5, out_dim=channels,
        bandwidths=(b / 8, b / 8, b / 4, b / 4, b / 4), heads=(1, 2, 4),
        period=1.0, quantize=True,
    )


def head_scales(spec: NetworkSpec):
    """Fraction of full resolution each head resolves (cumulative B / max B)."""
    total = spec.max_bandwidth
    return {h: sum(spec.bandwidths[: h + 1]) / total for h in spec.heads}


def render_head(params, spec, head, resolution, offset=0.0, dtype=np.float64) -> ImageField:
    grid = pixel_grid(resolution, resolution, offset=offset)
    y = evaluate_truncated(params, spec, grid, head, dtype=dtype)
    return ImageField(np.asarray(y, dtype=np.float64).reshape(resolution, resolution, spec.out_dim))


@dataclass
class FitImageResult:
    spec: NetworkSpec
    params: NetworkParams
    curve: list
    pyramid: list          # reference levels, coarse to fine
    metrics: dict          # head -> {"psnr": .., "ssim": .., "resolution": ..}


def fit_image(image: ImageField, hidden_dim=128, config: TrainConfig = None,
              bandwidth=None, rng: Rng = None) -> FitImageResult:
    """Fit a square image at all scales simultaneously.

    Supervision mode comes from the config: "shared" trains every head on the
    full-resolution pixels (the band limits do the decomposition), "per-head"
    trains each head on its matching low-pass pyramid level. Metrics compare
    each head, rendered at its own scale, against the ideal low-pass
    reference of that scale.
    """
    h, w, c = image.shape
    if h != w:
        raise InvalidInputError("fit_image expects a square image")
    _require_power_of_two(h)
    config = config or TrainConfig(total_steps=2000, lr_start=1e-2, lr_end=1e-3)
    rng = rng or Rng(config.seed)
    spec = image_network_spec(h, hidden_dim, channels=c, bandwidth=bandwidth)
    params = init_network(spec, rng.fork(0))

    scales = head_scales(spec)
    pyramid_scales = sorted(set(scales.values()))
    pyramid = build_reference_pyramid(image, scales=pyramid_scales)
    level_by_scale = dict(zip(pyramid_scales, pyramid))

    if config.supervision == "shared":
        grid = pixel_grid(h, w)
        target = image.pixels.reshape(-1, c)
        batches = [WeightedBatch(x=grid, targets={hd: target for hd in spec.heads})]
    else:
        batches = []
        for hd in spec.heads:
            res = int(round(h * scales[hd]))
            level = level_by_scale[scales[hd]]
            batches.append(WeightedBatch(
                x=pixel_grid(res, res),
                targets={hd: level.pixels.reshape(-1, c)}))

    def sampler(step, step_rng):
        return batches

    result = train(params, spec, sampler, config)

    metrics = {}
    for hd in spec.heads:
        res = int(round(h * scales[hd]))
        ref = level_by_scale[scales[hd]]
        out = render_head(result.params, spec, hd, res)
        metrics[hd] = {
            "resolution": res,
            "psnr": psnr(out.pixels, ref.pixels),
            "ssim": ssim(out.pixels, ref.pixels),
        }
    return FitImageResult(spec=spec, params=result.params, curve=result.curve,
                          pyramid=pyramid, metrics=metrics)


def psnr(a, b, peak=1.0) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a, b, peak=1.0, k1=0.01, k2=0.03) -> float:
    """Structural similarity with an 11x11 Gaussian window, sigma 1.5.

    Windows are fully interior ('valid' convolution); channels averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    win = _gaussian_window()
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x = convolve2d(x, win, mode="valid")
        mu_y = convolve2d(y, win, mode="valid")
        xx = convolve2d(x * x, win, mode="valid") - mu_x ** 2
        yy = convolve2d(y * y, win, mode="valid") - mu_y ** 2
        xy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def render_extrapolated(params, spec: NetworkSpec, lo=-2.0, hi=2.0,
                        samples_per_unit=64, dtype=np.float64) -> ImageField:
    """Sample the deepest head over an extended coordinate range.

    With quantized frequencies the representation is periodic, so the render
    tiles the base period exactly; no coordinate wrapping is performed, the
    network is simply evaluated outside the training domain.
    """
    n = int(round((hi - lo) * samples_per_unit))
    coords = lo + np.arange(n) / samples_per_unit
    gy, gx = np.meshgrid(coords, coords, indexing="ij")
    grid = np.stack([gy.ravel(), gx.ravel()], axis=1)
    head = spec.heads[-1]
    y = evaluate_truncated(params, spec, grid, head, dtype=dtype)
    return ImageField(np.asarray(y, dtype=np.float64).reshape(n, n, spec.out_dim))


def make_test_image(size=64, channels=1, seed=0) -> ImageField:
    """Deterministic synthetic test image: smooth blobs plus fine texture.

    Spectral content reaches the Nyquist band so aliasing is visible when the
    image is naively subsampled.
    """
    rng = Rng(seed)
    grid = pixel_grid(size, size).reshape(size, size, 2)
    yy, xx = grid[:, :, 0], grid[:, :, 1]
    chans = []
    for ch in range(channels):
        g = rng.generator
        img = np.zeros((size, size))
        for _ in range(4):  # smooth blobs
            cy, cx = g.uniform(-0.35, 0.35, size=2)
            s = g.uniform(0.05, 0.18)
            img += g.uniform(0.4, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        for _ in range(6):  # on-grid cosine texture up to ~0.8 Nyquist
            fy = int(g.integers(2, int(0.4 * size), endpoint=True))
            fx = int(g.integers(2, int(0.4 * size), endpoint=True))
            phase = g.uniform(0, 2 * np.pi)
            img += g.uniform(0.08, 0.25) * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
        img -= img.min()
        img /= img.max()
        chans.append(img)
    return ImageField(np.stack(chans, axis=2))


# ---------------------------------------------------------------------------
# file formats: 8/16-bit PNG via Pillow, 8/16-bit binary PPM/PGM natively


def save_image(path, image: ImageField, bit_depth=8):
    """Write PNG (8-bit, or 16-bit grayscale) or binary PPM/PGM (8/16-bit)."""
    path = Path(path)
    arr = np.clip(image.pixels, 0.0, 1.0)
    maxval = 255 if bit_depth == 8 else 65535
    quant = np.rint(arr * maxval).astype(np.uint16 if bit_depth == 16 else np.uint8)
    suffix = path.suffix.lower()
    if suffix == ".png":
        from PIL import Image
        if bit_depth == 16:
            if quant.shape[2] != 1:
                raise InvalidInputError("16-bit PNG output supports grayscale only")
            Image.fromarray(quant[:, :, 0]).save(path)
        else:
            data = quant[:, :, 0] if quant.shape[2] == 1 else quant
            Image.fromarray(data).save(path)
    elif suffix in (".ppm", ".pgm"):
        _write_pnm(path, quant, maxval)
    else:
        raise InvalidInputError(f"unsupported image format {suffix!r}")


def load_image(path) -> ImageField:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        from PIL import Image
        img = Image.open(path)
        arr = np.asarray(img)
        maxval = 65535.0 if arr.dtype == np.uint16 or img.mode == "I;16" else 255.0
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 4:
            arr = arr[:, :, :3]
        return ImageField(arr / maxval)
    if suffix in (".ppm", ".pgm"):
        return _read_pnm(path)
    raise InvalidInputError(f"unsupported image format {suffix!r}")


def _write_pnm(path, quant, maxval):
    channels = quant.shape[2]
    if channels == 1:
        magic = b"P5"
    elif channels == 3:
        magic = b"P6"
    else:
        raise InvalidInputError(f"PNM supports 1 or 3 channels, got {channels}")
    h, w = quant.shape[:2]
    data = quant[:, :, 0] if channels == 1 else quant
    if maxval > 255:
        payload = data.astype(">u2").tobytes()
    else:
        payload = data.astype(np.uint8).tobytes()
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n%d\n" % (w, h, maxval))
        f.write(payload)


def _read_pnm(path) -> ImageField:
    with open(path, "rb") as f:
        blob = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6"):
        raise InvalidInputError(f"unsupported PNM magic {magic!r}")
    channels = 1 if magic == b"P5" else 3
    dtype = ">u2" if maxval > 255 else np.uint8
    data = np.frombuffer(blob, dtype=dtype, count=w * h * channels, offset=pos)
    arr = data.reshape(h, w, channels).astype(np.float64) / maxval
    return ImageField(arr)
