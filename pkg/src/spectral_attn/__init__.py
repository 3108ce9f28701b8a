"""Desk-scale multivariate time-series forecasting with spectrum-scaled and
orthogonally-embedded attention mechanisms, plus attention forensics."""

from .analysis import (
    AttentionReport,
    MetricsReport,
    average_attention,
    condition_number,
    evaluate_on_split,
    grad_check,
    mae,
    mse,
    numerical_rank,
)
from .attention import (
    AttentionTensor,
    LayerAttention,
    conventional_mha_forward,
    dirac_kernel,
    fsatten_forward,
    hcc,
    orthogonal_init,
    scaled_dot_attention,
    soatten_forward,
)
from .data import (
    SeriesDataset,
    WindowPair,
    default_ratios,
    load_csv,
    save_csv,
    split,
    synth_multisine,
    windows,
)
from .errors import (
    ConfigError,
    DataError,
    EmptyTapeError,
    FiniteInputError,
    FormatError,
    ParseError,
    ShapeError,
    SpectralAttnError,
)
from .models import (
    ForecastModel,
    ModelConfig,
    TrainReport,
    config_hash,
    forecast,
    instance_denormalize,
    instance_normalize,
    load_checkpoint,
    naive_repeat_forecast,
    patchify,
    save_checkpoint,
    train,
    variate_embed,
)
from .numerics import (
    Adam,
    GradientTape,
    Parameter,
    Tensor,
    backward,
    substream,
    svd_singular_values,
)
from .spectral import (
    AmplitudeMatrix,
    MssWeights,
    Spectrum,
    amplitude_matrix,
    dft_naive,
    mss_project,
    rfft_amplitudes,
)

__version__ = "0.1.0"
