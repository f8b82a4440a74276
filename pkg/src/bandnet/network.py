"""Band-limited multiplicative filter network.

The architecture alternates frozen sinusoidal filters of the input with
trainable linear layers combined by Hadamard product:

    z_0 = sin(omega_0 x + phi_0)
    z_i = sin(omega_i x + phi_i) * (W_i z_{i-1} + b_i)        1 <= i < n_layers
    y_h = Wout_h z_h + bout_h                                  at each head h

Each filter's frequencies are bounded by a per-layer bandwidth, so the output
of head h is provably band-limited to the cumulative bandwidth sum(B_0..B_h):
products of sines only ever add or subtract frequencies. Frequencies are
frozen at initialization and receive no gradient.

With ``quantize`` on, frequencies are integer multiples of 1/period, which
makes every network output exactly periodic and pins its spectrum to the
discrete FFT grid of the period.

Numerics: parameters are stored float64. ``forward`` computes the sine
arguments in float64 regardless of the working dtype so that quantized
frequencies keep their exact periodicity; the linear chain then runs in the
requested dtype (float32 for training, float64 for oracle checks).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .rng import Rng

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyperparameters.

    bandwidths are in cycles per unit interval, one entry per sine layer;
    heads are the layer indices carrying output projections (sorted,
    within [0, n_layers)).
    """

    in_dim: int
    hidden_dim: int
    n_layers: int
    out_dim: int
    bandwidths: tuple
    heads: tuple
    period: float = 1.0
    quantize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "bandwidths", tuple(float(b) for b in self.bandwidths))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if min(self.in_dim, self.hidden_dim, self.n_layers, self.out_dim) < 1:
            raise InvalidInputError("NetworkSpec: dimensions and layer count must be >= 1")
        if len(self.bandwidths) != self.n_layers:
            raise InvalidInputError(
                f"NetworkSpec: {len(self.bandwidths)} bandwidths for {self.n_layers} layers"
            )
        if any(b < 0 for b in self.bandwidths):
            raise InvalidInputError("NetworkSpec: bandwidths must be non-negative")
        if not self.heads:
            raise InvalidInputError("NetworkSpec: at least one output head required")
        if list(self.heads) != sorted(set(self.heads)):
            raise InvalidInputError("NetworkSpec: heads must be sorted and unique")
        if self.heads[0] < 0 or self.heads[-1] >= self.n_layers:
            raise InvalidInputError("NetworkSpec: head indices must lie in [0, n_layers)")
        if not (self.period > 0):
            raise InvalidInputError("NetworkSpec: period must be positive")

    @property
    def max_bandwidth(self):
        return sum(self.bandwidths)

    def to_json(self) -> str:
        return json.dumps({
            "in_dim": self.in_dim, "hidden_dim": self.hidden_dim,
            "n_layers": self.n_layers, "out_dim": self.out_dim,
            "bandwidths": list(self.bandwidths), "heads": list(self.heads),
            "period": self.period, "quantize": self.quantize,
        })

    @staticmethod
    def from_json(text: str) -> "NetworkSpec":
        d = json.loads(text)
        return NetworkSpec(
            in_dim=d["in_dim"], hidden_dim=d["hidden_dim"], n_layers=d["n_layers"],
            out_dim=d["out_dim"], bandwidths=tuple(d["bandwidths"]),
            heads=tuple(d["heads"]), period=d["period"], quantize=d["quantize"],
        )


@dataclass
class NetworkParams:
    """All network tensors. ``freqs`` are frozen; everything else trains.

    Lists are indexed by layer; ``weights[0]``/``biases[0]`` are None since
    the first layer has no linear stage.
    """

    freqs: list          # (d_h, d_in) float64 per layer, radians per unit
    phases: list         # (d_h,) per layer
    weights: list        # (d_h, d_h) for layers 1..n_layers-1, [0] is None
    biases: list         # (d_h,)     for layers 1..n_layers-1, [0] is None
    head_weights: dict   # head index -> (d_out, d_h)
    head_biases: dict    # head index -> (d_out,)

    def trainable(self) -> dict:
        """Name -> array views of every trainable tensor (frozen freqs excluded)."""
        out = {}
        for i, p in enumerate(self.phases):
            out[f"phase{i}"] = p
        for i in range(1, len(self.weights)):
            out[f"w{i}"] = self.weights[i]
            out[f"b{i}"] = self.biases[i]
        for h in sorted(self.head_weights):
            out[f"head_w{h}"] = self.head_weights[h]
            out[f"head_b{h}"] = self.head_biases[h]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            freqs=[f.copy() for f in self.freqs],
            phases=[p.copy() for p in self.phases],
            weights=[None] + [w.copy() for w in self.weights[1:]],
            biases=[None] + [b.copy() for b in self.biases[1:]],
            head_weights={h: w.copy() for h, w in self.head_weights.items()},
            head_biases={h: b.copy() for h, b in self.head_biases.items()},
        )


@dataclass
class ForwardTrace:
    """Intermediate states of one forward pass, kept for the backward pass."""

    x: np.ndarray        # (N, d_in) float64
    preacts: list        # (N, d_h) float64 sine arguments per layer
    sines: list          # (N, d_h) working-dtype sin(preacts)
    lin: list            # (N, d_h) post-linear pre-product states, [0] is None
    hidden: list         # (N, d_h) hidden states z_i
    heads: dict          # head index -> (N, d_out) outputs
    dtype: type


def quantized_freq_grid(bandwidth, period):
    """Admissible integer cycle counts for one layer: |n| <= floor(B*T)."""
    return int(np.floor(bandwidth * period + 1e-12))


def init_network(spec: NetworkSpec, rng: Rng) -> NetworkParams:
    """Band-limited initialization.

    Frequencies: uniform over [-2*pi*B_i, 2*pi*B_i] per entry, or uniform over
    the integer multiples of 2*pi/T inside that band when quantizing.
    Phases uniform over [-pi, pi); linear and head weights uniform over
    [-sqrt(6/d_h), sqrt(6/d_h)] (keeps post-linear variance at 1 when the
    sine outputs have variance 1/2); biases zero.
    """
    d_h, d_in = spec.hidden_dim, spec.in_dim
    g = rng.generator
    freqs, phases = [], []
    for i in range(spec.n_layers):
        b = spec.bandwidths[i]
        if spec.quantize:
            k = quantized_freq_grid(b, spec.period)
            n = g.integers(-k, k, size=(d_h, d_in), endpoint=True)
            freqs.append(n.astype(np.float64) * (TWO_PI / spec.period))
        else:
            freqs.append(g.uniform(-TWO_PI * b, TWO_PI * b, size=(d_h, d_in)))
        phases.append(g.uniform(-np.pi, np.pi, size=d_h))
    bound = np.sqrt(6.0 / d_h)
    weights = [None] + [g.uniform(-bound, bound, size=(d_h, d_h))
                        for _ in range(1, spec.n_layers)]
    biases = [None] + [np.zeros(d_h) for _ in range(1, spec.n_layers)]
    head_weights = {h: g.uniform(-bound, bound, size=(spec.out_dim, d_h))
                    for h in spec.heads}
    head_biases = {h: np.zeros(spec.out_dim) for h in spec.heads}
    return NetworkParams(freqs, phases, weights, biases, head_weights, head_biases)


def legacy_filter_init(spec: NetworkSpec, rng: Rng) -> NetworkParams:
    """Historical multiplicative-filter initialization, for comparison runs.

    Linear weights uniform over [-sqrt(1/d_h), sqrt(1/d_h)] and filter
    frequencies uniform over +-256*sqrt(d_in) radians. In deep networks this
    shrinks the post-linear variance by roughly 6x per layer (vanishing
    activations), which is the pathology the band-limited scheme removes.
    """
    d_h, d_in = spec.hidden_dim, spec.in_dim
    g = rng.generator
    fscale = 256.0 * np.sqrt(d_in)
    freqs = [g.uniform(-fscale, fscale, size=(d_h, d_in)) for _ in range(spec.n_layers)]
    phases = [g.uniform(-np.pi, np.pi, size=d_h) for _ in range(spec.n_layers)]
    bound = np.sqrt(1.0 / d_h)
    weights = [None] + [g.uniform(-bound, bound, size=(d_h, d_h))
                        for _ in range(1, spec.n_layers)]
    biases = [None] + [np.zeros(d_h) for _ in range(1, spec.n_layers)]
    head_weights = {h: g.uniform(-bound, bound, size=(spec.out_dim, d_h))
                    for h in spec.heads}
    head_biases = {h: np.zeros(spec.out_dim) for h in spec.heads}
    return NetworkParams(freqs, phases, weights, biases, head_weights, head_biases)


def _check_inputs(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise InvalidInputError(f"expected (N, {spec.in_dim}) inputs, got {x.shape}")
    if x.shape[0] == 0:
        raise InvalidInputError("empty input batch")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("non-finite input coordinates")
    return x


def forward(params: NetworkParams, spec: NetworkSpec, x, dtype=np.float64) -> ForwardTrace:
    """Full forward pass producing every hidden state and every head output."""
    x = _check_inputs(spec, x)
    n_layers = spec.n_layers
    preacts, sines, lin, hidden = [], [], [None] * n_layers, []
    for i in range(n_layers):
        a = x @ params.freqs[i].T + params.phases[i]   # float64 always
        preacts.append(a)
        # the float64 argument keeps quantized frequencies exactly periodic;
        # reduced-precision runs only need the sine at that precision
        sines.append(np.sin(a.astype(dtype, copy=False)))
    z = sines[0]
    hidden.append(z)
    for i in range(1, n_layers):
        w = params.weights[i].astype(dtype, copy=False)
        b = params.biases[i].astype(dtype, copy=False)
        u = z @ w.T + b
        lin[i] = u
        z = sines[i] * u
        hidden.append(z)
    heads = {}
    for h in spec.heads:
        wo = params.head_weights[h].astype(dtype, copy=False)
        bo = params.head_biases[h].astype(dtype, copy=False)
        heads[h] = hidden[h] @ wo.T + bo
    return ForwardTrace(x=x, preacts=preacts, sines=sines, lin=lin,
                        hidden=hidden, heads=heads, dtype=dtype)


def backward(params: NetworkParams, spec: NetworkSpec, trace: ForwardTrace,
             head_grads: dict) -> dict:
    """Closed-form gradients of the trainable tensors.

    ``head_grads`` maps head index -> dL/dy of shape (N, d_out). Frequencies
    are frozen and get no entry. Returns float64 arrays keyed like
    ``NetworkParams.trainable()``.
    """
    dtype = trace.dtype
    n = trace.x.shape[0]
    d_h = spec.hidden_dim
    grads = {}
    delta = [np.zeros((n, d_h), dtype=dtype) for _ in range(spec.n_layers)]

    for h in spec.heads:
        wo = params.head_weights[h]
        if h in head_grads:
            gy = np.asarray(head_grads[h], dtype=dtype)
            if gy.shape != trace.heads[h].shape:
                raise InvalidInputError(
                    f"head {h} gradient shape {gy.shape} != output shape {trace.heads[h].shape}"
                )
            grads[f"head_w{h}"] = gy.T @ trace.hidden[h]
            grads[f"head_b{h}"] = gy.sum(axis=0)
            delta[h] += gy @ wo.astype(dtype, copy=False)
        else:
            grads[f"head_w{h}"] = np.zeros_like(wo)
            grads[f"head_b{h}"] = np.zeros_like(params.head_biases[h])

    for i in range(spec.n_layers - 1, 0, -1):
        d = delta[i]
        du = d * trace.sines[i]                       # dL/d(W_i z + b_i)
        dg = d * trace.lin[i]                         # dL/d sin(...)
        cg = np.cos(trace.preacts[i].astype(dtype, copy=False))
        grads[f"phase{i}"] = (dg * cg).sum(axis=0)
        grads[f"w{i}"] = du.T @ trace.hidden[i - 1]
        grads[f"b{i}"] = du.sum(axis=0)
        delta[i - 1] += du @ params.weights[i].astype(dtype, copy=False)

    cg0 = np.cos(trace.preacts[0].astype(dtype, copy=False))
    grads["phase0"] = (delta[0] * cg0).sum(axis=0)
    return {k: np.asarray(v, dtype=np.float64) for k, v in grads.items()}


def evaluate_truncated(params: NetworkParams, spec: NetworkSpec, x, head,
                       dtype=np.float64):
    """Output of one declared head, computing only layers 0..head."""
    if head not in spec.heads:
        raise InvalidInputError(f"head {head} is not declared (heads={spec.heads})")
    x = _check_inputs(spec, x)
    z = None
    for i in range(head + 1):
        a = x @ params.freqs[i].T + params.phases[i]
        g = np.sin(a.astype(dtype, copy=False))
        if i == 0:
            z = g
        else:
            w = params.weights[i].astype(dtype, copy=False)
            b = params.biases[i].astype(dtype, copy=False)
            z = g * (z @ w.T + b)
    wo = params.head_weights[head].astype(dtype, copy=False)
    bo = params.head_biases[head].astype(dtype, copy=False)
    return z @ wo.T + bo


def cumulative_bandwidth(spec: NetworkSpec, head) -> float:
    """Provable band limit of the head's output: sum of B_0..B_head (cycles/unit)."""
    if head < 0 or head >= spec.n_layers:
        raise InvalidInputError(f"layer index {head} out of range")
    return float(sum(spec.bandwidths[: head + 1]))


def save_checkpoint(path, spec: NetworkSpec, params: NetworkParams):
    """Self-describing binary checkpoint (npz: row-major arrays + spec JSON)."""
    arrays = {"spec_json": np.frombuffer(spec.to_json().encode(), dtype=np.uint8)}
    for i in range(spec.n_layers):
        arrays[f"freq{i}"] = params.freqs[i]
        arrays[f"phase{i}"] = params.phases[i]
    for i in range(1, spec.n_layers):
        arrays[f"w{i}"] = params.weights[i]
        arrays[f"b{i}"] = params.biases[i]
    for h in spec.heads:
        arrays[f"head_w{h}"] = params.head_weights[h]
        arrays[f"head_b{h}"] = params.head_biases[h]
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; round trip is bit-exact."""
    with np.load(path) as data:
        spec = NetworkSpec.from_json(bytes(data["spec_json"]).decode())
        freqs = [data[f"freq{i}"] for i in range(spec.n_layers)]
        phases = [data[f"phase{i}"] for i in range(spec.n_layers)]
        weights = [None] + [data[f"w{i}"] for i in range(1, spec.n_layers)]
        biases = [None] + [data[f"b{i}"] for i in range(1, spec.n_layers)]
        head_weights = {h: data[f"head_w{h}"] for h in spec.heads}
        head_biases = {h: data[f"head_b{h}"] for h in spec.heads}
    return spec, NetworkParams(freqs, phases, weights, biases, head_weights, head_biases)
