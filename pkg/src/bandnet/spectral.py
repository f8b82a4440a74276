"""Executable spectral theory of the network.

A network head is algebraically a finite sum of sines: repeated Hadamard
products of sinusoids expand, via the product identity

    sin(a) sin(b) = 1/2 [sin(a + b - pi/2) + sin(a - b + pi/2)],

into one flat list of (amplitude, frequency-vector, phase) terms. This module
performs that expansion symbolically, counts its terms in closed form,
predicts the statistics of the represented frequencies, and measures
activation statistics of the initialization scheme.

Closed forms implemented here:

  * term count for n_layers layers of width d_h (bias terms included):
        sum_{i=0}^{n_layers-1} 2^i d_h^{i+1},
    satisfying N(1) = d_h, N(i+1) = d_h + 2 d_h N(i); without bias terms the
    count is 2^(n_layers-1) d_h^n_layers.
  * fraction of terms whose frequency sums n_layers - m filter draws:
        p(m) = 2^(n_layers-1-m) d_h^(n_layers-m) / sum_i 2^i d_h^(i+1);
    the output frequency is a compound sum of that many zero-mean draws, so
        Var(out freq) = Var(filter freq) * sum_m (n_layers - m) p(m).
  * density of the sine argument W*X + P for W ~ U(-B, B), X ~ U(-1/2, 1/2):
        f(z) = (1/B) log(B / min(|2z|, B)) on |z| <= B/2,
    and the variance of its sine, (1 - SI(B)/B) / 2.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DomainError, InvalidInputError
from .network import NetworkParams, NetworkSpec, forward, quantized_freq_grid, TWO_PI
from .numerics import sine_integral
from .rng import Rng


@dataclass(frozen=True)
class SineTerm:
    """One term: amplitude * sin(frequency . x + phase), frequency in rad/unit."""

    amplitude: float
    frequency: np.ndarray
    phase: float


@dataclass
class SineExpansion:
    """Flat sine-sum form of one head output component.

    Term arrays are kept unmerged so the closed-form count is checkable
    verbatim; ``offset`` carries the head's output bias (a constant, not a
    sine). ``n_terms`` equals :func:`predicted_sine_count` for the source
    depth regardless of parameter values.
    """

    amplitudes: np.ndarray   # (n_terms,)
    frequencies: np.ndarray  # (n_terms, d_in) radians per unit
    phases: np.ndarray       # (n_terms,)
    offset: float
    head: int
    out_index: int = 0

    @property
    def n_terms(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def terms(self):
        return [SineTerm(float(a), f, float(p))
                for a, f, p in zip(self.amplitudes, self.frequencies, self.phases)]

    def __call__(self, x):
        """Evaluate the sine sum at (N, d_in) points, double precision."""
        x = np.asarray(x, dtype=np.float64)
        args = x @ self.frequencies.T + self.phases
        return np.sin(args) @ self.amplitudes + self.offset


@dataclass
class FrequencyStats:
    """Distribution summary of the frequencies represented by a network."""

    p_m: np.ndarray           # fraction of terms per bias depth m
    freq_variance: float      # per-entry filter frequency variance (rad^2)
    output_variance: float    # predicted variance of represented frequencies
    approximate: bool         # True when per-layer bandwidths differ


def sine_product_expand(a: SineTerm, b: SineTerm):
    """Product of two sine terms as the sum of two sine terms.

    Frequencies add and subtract; each output amplitude is half the product
    of the input amplitudes.
    """
    amp = 0.5 * a.amplitude * b.amplitude
    t_sum = SineTerm(amp, np.asarray(a.frequency) + np.asarray(b.frequency),
                     a.phase + b.phase - np.pi / 2)
    t_diff = SineTerm(amp, np.asarray(a.frequency) - np.asarray(b.frequency),
                      a.phase - b.phase + np.pi / 2)
    return t_sum, t_diff


def predicted_sine_count(n_layers: int, d_h: int, with_bias: bool = True) -> int:
    """Closed-form number of sine terms in an n_layers-deep, d_h-wide network.

    Exact integer arithmetic (python ints), so no overflow; the 1e7 guard
    lives in :func:`expand_network`, which is where memory is spent.
    """
    if n_layers < 1 or d_h < 1:
        raise InvalidInputError("predicted_sine_count: n_layers and d_h must be >= 1")
    if with_bias:
        return sum(2 ** i * d_h ** (i + 1) for i in range(n_layers))
    return 2 ** (n_layers - 1) * d_h ** n_layers


_EXPANSION_GUARD = 10_000_000


def expand_network(params: NetworkParams, spec: NetworkSpec, head: int,
                   out_index: int = 0) -> SineExpansion:
    """Symbolic sine-sum expansion of one output component of a head.

    Structural recursion over the layers: the linear stage rescales and
    concatenates unit term lists (plus one bias term per unit), the Hadamard
    product with the layer sine doubles every term via
    :func:`sine_product_expand`. Duplicate frequencies are never merged.
    Evaluating the result reproduces ``forward`` to 1e-9.
    """
    if head not in spec.heads:
        raise InvalidInputError(f"head {head} is not declared (heads={spec.heads})")
    if not 0 <= out_index < spec.out_dim:
        raise InvalidInputError(f"out_index {out_index} out of range")
    count = predicted_sine_count(head + 1, spec.hidden_dim)
    if count > _EXPANSION_GUARD:
        raise CapacityError(
            f"expansion would hold {count} terms (> {_EXPANSION_GUARD})"
        )
    d_h = spec.hidden_dim

    # Per-unit term arrays for z_0: one sine per hidden unit.
    amps = [np.ones(1) for _ in range(d_h)]
    freqs = [params.freqs[0][j:j + 1].astype(np.float64) for j in range(d_h)]
    phases = [params.phases[0][j:j + 1].astype(np.float64) for j in range(d_h)]

    for i in range(1, head + 1):
        prev_amps = np.concatenate(amps)
        prev_freqs = np.concatenate(freqs)
        prev_phases = np.concatenate(phases)
        n_prev = prev_amps.shape[0] // d_h  # terms per unit, uniform by construction
        origin = np.repeat(np.arange(d_h), n_prev)
        w, b = params.weights[i], params.biases[i]
        f_i, p_i = params.freqs[i].astype(np.float64), params.phases[i]
        new_amps, new_freqs, new_phases = [], [], []
        for r in range(d_h):
            lin_amps = w[r, origin] * prev_amps          # W_i z_{i-1} terms
            half = 0.5 * lin_amps
            # sine_product_expand with a = layer sine g_i[r], b = each term
            sum_f = f_i[r] + prev_freqs
            diff_f = f_i[r] - prev_freqs
            sum_p = p_i[r] + prev_phases - np.pi / 2
            diff_p = p_i[r] - prev_phases + np.pi / 2
            # bias path: b_i[r] * sin(g_i[r] argument), a single extra term
            new_amps.append(np.concatenate([half, half, [b[r]]]))
            new_freqs.append(np.concatenate([sum_f, diff_f, f_i[r][None, :]]))
            new_phases.append(np.concatenate([sum_p, diff_p, [p_i[r]]]))
        amps, freqs, phases = new_amps, new_freqs, new_phases

    wo = params.head_weights[head][out_index]
    all_amps = np.concatenate([wo[r] * amps[r] for r in range(d_h)])
    all_freqs = np.concatenate(freqs)
    all_phases = np.concatenate(phases)
    assert all_amps.shape[0] == count
    return SineExpansion(all_amps, all_freqs, all_phases,
                         offset=float(params.head_biases[head][out_index]),
                         head=head, out_index=out_index)


def merge_expansion_terms(expansion: SineExpansion, decimals: int = 9):
    """Sum amplitudes of coinciding (frequency, phase mod 2*pi) terms.

    Plotting aid only; the unmerged expansion is the one whose term count is
    meaningful. Returns (frequencies, phases, amplitudes) arrays.
    """
    key_f = np.round(expansion.frequencies, decimals)
    key_p = np.round(np.mod(expansion.phases, TWO_PI), decimals)
    keys = np.concatenate([key_f, key_p[:, None]], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    merged = np.zeros(uniq.shape[0])
    np.add.at(merged, inverse, expansion.amplitudes)
    return uniq[:, :-1], uniq[:, -1], merged


def layer_count_distribution(n_layers: int, d_h: int) -> np.ndarray:
    """p(m): fraction of sine terms whose frequency sums n_layers - m draws."""
    numers = [2 ** (n_layers - 1 - m) * d_h ** (n_layers - m) for m in range(n_layers)]
    total = sum(numers)
    return np.array([n / total for n in numers])


def per_layer_frequency_variance(spec: NetworkSpec) -> np.ndarray:
    """Per-entry variance of each layer's filter frequencies (rad^2/unit^2).

    Continuous sampling over +-2*pi*B gives (2*pi*B)^2/3; quantized sampling
    over the integers -K..K of the 2*pi/T grid gives (2*pi/T)^2 K(K+1)/3.
    """
    out = []
    for b in spec.bandwidths:
        if spec.quantize:
            k = quantized_freq_grid(b, spec.period)
            out.append((TWO_PI / spec.period) ** 2 * k * (k + 1) / 3.0)
        else:
            out.append((TWO_PI * b) ** 2 / 3.0)
    return np.array(out)


def predicted_frequency_variance(spec: NetworkSpec) -> FrequencyStats:
    """Closed-form variance of the frequencies represented by the network.

    Each term's frequency is a signed sum of n_layers - m independent
    zero-mean filter draws, where m follows the term-count fractions p(m);
    by the law of total variance the output variance is
    Var(filter) * sum_m (n_layers - m) p(m). When per-layer bandwidths
    differ, Var(filter) is approximated by the mean per-layer variance and
    the result is flagged approximate.
    """
    p_m = layer_count_distribution(spec.n_layers, spec.hidden_dim)
    per_layer = per_layer_frequency_variance(spec)
    approximate = bool(np.ptp(spec.bandwidths) > 0)
    var_w = float(per_layer.mean())
    weight = float(((spec.n_layers - np.arange(spec.n_layers)) * p_m).sum())
    return FrequencyStats(p_m=p_m, freq_variance=var_w,
                          output_variance=var_w * weight, approximate=approximate)


def preactivation_pdf(z, b_rad):
    """Density of W*X + P for W ~ U(-B, B) rad, X ~ U(-1/2, 1/2), P ~ U(-pi, pi).

    Valid for B >> pi (the phase broadening is neglected); warns below 10*pi.
    The density is (1/B) log(B / min(|2z|, B)) on |z| <= B/2, zero outside,
    with an integrable log singularity at z = 0.
    """
    if not (b_rad > 0):
        raise DomainError(f"preactivation_pdf: bandwidth must be positive, got {b_rad}")
    if b_rad < 10 * np.pi:
        warnings.warn(f"preactivation pdf derived for bandwidth >> pi; got {b_rad:.3g}",
                      stacklevel=2)
    z = np.asarray(z, dtype=np.float64)
    inside = np.abs(z) <= b_rad / 2
    with np.errstate(divide="ignore"):
        vals = np.log(b_rad / np.minimum(np.abs(2 * z), b_rad)) / b_rad
    return np.where(inside, vals, 0.0)


def predicted_sine_activation_variance(b_rad) -> float:
    """Variance of sin(W*X): (1 - SI(B)/B) / 2, approaching 1/2 for large B."""
    if not (b_rad > 0):
        raise DomainError(f"bandwidth must be positive, got {b_rad}")
    if b_rad < 10 * np.pi:
        warnings.warn(f"variance formula derived for bandwidth >> pi; got {b_rad:.3g}",
                      stacklevel=2)
    return 0.5 * (1.0 - sine_integral(b_rad) / b_rad)


@dataclass
class StageStatistics:
    """Pooled mean/variance of each stage of the network at initialization."""

    sine_mean: np.ndarray     # per layer, pooled over samples x units
    sine_var: np.ndarray
    lin_mean: np.ndarray      # per layer, nan at layer 0 (no linear stage)
    lin_var: np.ndarray
    hidden_mean: np.ndarray
    hidden_var: np.ndarray


def activation_statistics(params: NetworkParams, spec: NetworkSpec,
                          n_samples: int, rng: Rng, dtype=np.float64,
                          chunk: int = 4096) -> StageStatistics:
    """Empirical stage statistics on x ~ U(-1/2, 1/2)^d_in.

    Streams over sample chunks so wide networks fit in memory; first and
    second moments are accumulated in float64 and pooled over samples and
    hidden units.
    """
    if n_samples < 10_000:
        raise InvalidInputError("activation_statistics: need n_samples >= 1e4")
    L = spec.n_layers
    s1 = {k: np.zeros(L) for k in ("g", "u", "z")}
    s2 = {k: np.zeros(L) for k in ("g", "u", "z")}
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        x = rng.uniform(-0.5, 0.5, size=(n, spec.in_dim))
        z = None
        for i in range(L):
            a = x @ params.freqs[i].T + params.phases[i]
            g = np.sin(a.astype(dtype, copy=False))
            if i == 0:
                z = g
            else:
                w = params.weights[i].astype(dtype, copy=False)
                b = params.biases[i].astype(dtype, copy=False)
                u = z @ w.T + b
                s1["u"][i] += float(u.sum())
                s2["u"][i] += float((u.astype(np.float64) ** 2).sum())
                z = g * u
            s1["g"][i] += float(g.sum())
            s2["g"][i] += float((g.astype(np.float64) ** 2).sum())
            s1["z"][i] += float(z.sum())
            s2["z"][i] += float((z.astype(np.float64) ** 2).sum())
        done += n
    count = n_samples * spec.hidden_dim

    def moments(key, skip_first=False):
        mean = s1[key] / count
        var = s2[key] / count - mean ** 2
        if skip_first:
            mean[0] = np.nan
            var[0] = np.nan
        return mean, var

    g_mean, g_var = moments("g")
    u_mean, u_var = moments("u", skip_first=True)
    z_mean, z_var = moments("z")
    return StageStatistics(g_mean, g_var, u_mean, u_var, z_mean, z_var)
