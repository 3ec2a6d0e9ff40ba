"""Streaming feature-bank attention over a toy denoiser and synthetic video."""

from .attention import attention_heatmap, extended_attention, self_attention
from .bank import FeatureBank, FrameFeatures, SamplingStrategy
from .errors import ConfigError, InsufficientDataError, ShapeError
from .fusion import FusionConfig, fuse, should_fuse
from .metrics import ConsistencyReport, consec_mse, pca3, warp_error
from .stream_batch import DenoisingBatch, LatentState, tick, warm_start
from .synthetic_stream import Frame, StreamSpec, embed_frame, generate_stream
from .tensor_core import Rng, concat_rows, cosine_sim_matrix, matmul, randn, row_softmax
from .toy_denoiser import BankConfig, PipelineConfig, run_stream

__version__ = "0.1.0"
