"""INT4 weight-activation quantization kernels with Rotated Runtime Smooth."""

from .analysis import (
    CensusResult,
    Transform,
    VictimSimConfig,
    VictimSummary,
    mu_report,
    spike_census,
    transform_activation,
    victim_sim,
)
from .errors import (
    ConfigError,
    RRSError,
    ShapeError,
    TensorFormatError,
    UndefinedMetricError,
    UnsupportedDimensionError,
    ValidationError,
)
from .gemm import (
    BlockedGemmConfig,
    Method,
    MethodConfig,
    MethodResult,
    MuSummary,
    matmul_fp,
    matmul_fused_blocked,
    matmul_quant_naive,
    run_method,
)
from .metrics import MuKind, mu, token_mu
from .quant import GroupScheme, QuantizedMatrix, SchemeKind, dequantize, quantize
from .rotation import (
    HadamardRotation,
    fwht,
    hadamard,
    less_smooth_probability,
    rotate_activation,
    rotate_weight,
)
from .smooth import (
    SmoothingPlan,
    SmoothQuantConfig,
    apply_perm_to_weight,
    apply_smooth,
    build_plan,
    channel_max_scales,
    smoothquant_apply,
    smoothquant_scales,
)
from .tensor import Matrix, Role, SyntheticSpec, generate, random_layout, read_tensor, write_tensor

__version__ = "0.1.0"
