"""Numerical substrate: special functions, DFT spectra, ideal resampling, noise.

Everything here is double precision. FFT convention (fixed once, relied on by
:class:`Spectrum`): forward transform unscaled, inverse scaled by 1/N, i.e.
numpy's default. Under that convention Parseval reads

    sum |X_k|^2 == N_total * sum |x_n|^2.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, InvalidInputError, UnsupportedResolutionError
from .rng import Rng


def sine_integral(x):
    """SI(x) = integral of sin(t)/t from 0 to x.

    Accepts scalars or arrays; absolute error below 1e-10 over the full real
    line. Odd in x; SI(x) -> pi/2 as x -> inf.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("sine_integral requires finite input")
    si = special.sici(arr)[0]
    return float(si) if np.isscalar(x) or arr.ndim == 0 else si


@dataclass
class Spectrum:
    """Magnitude spectrum of a real field sampled over one period.

    ``bins[d]`` holds signed integer bin indices for axis d in fft order;
    the physical frequency of bin k is k / period cycles per unit (bin
    spacing exactly 1/T). ``coefficients`` are the raw (unscaled-forward)
    complex DFT values; ``np.fft.ifftn(coefficients)`` reconstructs the
    input samples. ``magnitudes`` = |coefficients|.
    """

    bins: tuple
    magnitudes: np.ndarray
    period: float
    coefficients: np.ndarray

    def frequency_grids(self):
        """Per-axis physical frequencies (cycles per unit), broadcastable."""
        grids = np.meshgrid(*[b / self.period for b in self.bins], indexing="ij")
        return grids


def dft_spectrum(samples, period=1.0) -> Spectrum:
    """Magnitude spectrum of a real grid (1-3 dims) on the discrete 1/T grid."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("dft_spectrum: empty grid")
    if any(n < 2 for n in x.shape):
        raise InvalidInputError("dft_spectrum: need at least 2 samples per axis")
    coeffs = np.fft.fftn(x)
    bins = tuple(
        np.rint(np.fft.fftfreq(n) * n).astype(np.int64) for n in x.shape
    )
    return Spectrum(bins=bins, magnitudes=np.abs(coeffs), period=float(period),
                    coefficients=coeffs)


def _check_even(shape, name):
    for n in shape:
        if n % 2 != 0 or n < 2:
            raise UnsupportedResolutionError(
                f"fourier_resample: {name} resolution {tuple(shape)} must be even"
            )


def fourier_resample(samples, target_shape):
    """Ideal band-limited resampling via spectral crop / zero-pad.

    Downsampling keeps the central block of the fftshifted spectrum
    (frequencies -M/2 .. M/2-1 for target size M); upsampling embeds the
    spectrum into a larger zero block. The DC coefficient is rescaled so the
    mean value is preserved exactly. Source and target sizes must be even.
    """
    x = np.asarray(samples, dtype=np.float64)
    target_shape = tuple(int(t) for t in np.atleast_1d(target_shape))
    if len(target_shape) != x.ndim:
        raise InvalidInputError(
            f"fourier_resample: target rank {len(target_shape)} != input rank {x.ndim}"
        )
    _check_even(x.shape, "source")
    _check_even(target_shape, "target")

    spec = np.fft.fftshift(np.fft.fftn(x))
    out = spec
    for axis, (n, m) in enumerate(zip(x.shape, target_shape)):
        if m < n:
            lo = (n - m) // 2
            out = np.take(out, np.arange(lo, lo + m), axis=axis)
        elif m > n:
            pad = [(0, 0)] * out.ndim
            lo = (m - n) // 2
            pad[axis] = (lo, m - n - lo)
            out = np.pad(out, pad)
    scale = np.prod([m / n for n, m in zip(x.shape, target_shape)])
    return np.fft.ifftn(np.fft.ifftshift(out * scale)).real


def sample_laplacian(rng: Rng, variance, size=None):
    """Zero-mean Laplacian draws with the given variance (scale sqrt(var/2))."""
    if not (variance > 0) or not np.isfinite(variance):
        raise DomainError(f"sample_laplacian: variance must be positive, got {variance}")
    scale = np.sqrt(variance / 2.0)
    return rng.generator.laplace(0.0, scale, size)
