"""Model-driven compressed CSI feedback for mmWave massive MIMO.

Geometric channel simulation, two-stage low-rank (TSLR) splitting, classical
FISTA recovery and the unrolled FISTA-Net decoder with learned thresholds.
"""

from .channel_sim import (
    ChannelSample,
    Dataset,
    GeometryConfig,
    PathSet,
    dft_matrix,
    from_real_stacked,
    generate_dataset,
    sample_geometry,
    synth_channel,
    to_beamspace,
    to_real_stacked,
    ula_response,
)
from .fista_solver import FistaConfig, SolveTrace, fista_solve, lasso_objective, soft_threshold
from .linear_encoder import Codeword, EncoderWeights, add_awgn, compress, init_encoder
from .tslr_codec import KronOperator, TslrParts, decompose, kron_apply, ls_warm_start, reassemble

__version__ = "0.1.0"
