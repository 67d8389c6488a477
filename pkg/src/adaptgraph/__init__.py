"""Point-cloud activity recognition with multi-head adaptive graph kernels.

A compact, dependency-light stack: a numpy tensor core with reverse-mode
autodiff, KNN graph features, dynamically generated per-neighbor convolution
kernels, a five-stage classifier with ablation variants and an analytical
cost model, plus the training/data plumbing and a CLI to drive it all.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DataError, DivergenceError,
                     InvalidInputError, ShapeError, UsageError)
from .tensor import Tensor, no_grad
from .graph import NeighborIndex, graph_feature, knn, pairwise_similarity
from .kernels import MakConfig, MultiHeadAdaptiveKernel, apply_heads
from .network import (ActivityNet, ModelConfig, Variant, build,
                      count_macs, count_params)
from .training import (EarlyStopper, FitResult, Metrics, TrainConfig,
                       cosine_lr, evaluate, fit, sgd_step)
from .checkpoint import load_checkpoint, load_state, save_checkpoint, state_dict
from .data import (FrameSequence, PipelineConfig, Sample, StreamAssembler,
                   SynthSpec, build_samples, make_windows, normalize_frame,
                   read_frame_file, read_manifest, split, synth_generate,
                   write_dataset, write_frame_file)

__all__ = [
    "ActivityNet", "ConfigError", "DataError", "DivergenceError",
    "EarlyStopper", "FitResult", "FrameSequence", "InvalidInputError",
    "MakConfig", "Metrics", "ModelConfig", "MultiHeadAdaptiveKernel",
    "NeighborIndex", "PipelineConfig", "Sample", "ShapeError",
    "StreamAssembler", "SynthSpec", "Tensor", "TrainConfig", "UsageError",
    "Variant", "apply_heads", "build", "build_samples", "cosine_lr",
    "count_macs", "count_params", "evaluate", "fit", "graph_feature", "knn",
    "load_checkpoint", "load_state", "make_windows", "no_grad",
    "normalize_frame", "pairwise_similarity", "read_frame_file",
    "read_manifest", "save_checkpoint", "sgd_step", "split", "state_dict",
    "synth_generate", "write_dataset", "write_frame_file",
]
