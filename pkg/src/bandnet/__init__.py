"""Band-limited coordinate networks for multiscale signal fitting.

Library layout:

- :mod:`bandnet.rng` seeded, forkable random streams
- :mod:`bandnet.numerics` special functions, DFT spectra, ideal resampling
- :mod:`bandnet.network` the architecture: init, forward, backward, heads
- :mod:`bandnet.spectral` symbolic sine expansion and frequency statistics
- :mod:`bandnet.training` losses, Adam, lr annealing, the fit loop
- :mod:`bandnet.image_task` multiscale image fitting and metrics
- :mod:`bandnet.sdf_task` signed-distance fitting, sampling, mesh metrics
- :mod:`bandnet.extraction` marching cubes with adaptive/multiscale pruning
- :mod:`bandnet.cli` command-line pipelines
"""

from .rng import Rng
from .network import (
    NetworkSpec, NetworkParams, ForwardTrace,
    init_network, legacy_filter_init, forward, backward,
    evaluate_truncated, cumulative_bandwidth,
    save_checkpoint, load_checkpoint,
)
from .numerics import Spectrum, dft_spectrum, fourier_resample, sample_laplacian, sine_integral
from .spectral import (
    SineTerm, SineExpansion, FrequencyStats,
    sine_product_expand, expand_network, predicted_sine_count,
    predicted_frequency_variance, preactivation_pdf,
    predicted_sine_activation_variance, activation_statistics,
)
from .training import (
    TrainConfig, AdamState, WeightedBatch, TrainResult,
    lr_at, adam_step, image_loss, sdf_loss, train,
)

__version__ = "0.1.0"
