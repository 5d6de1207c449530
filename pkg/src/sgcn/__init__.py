"""Spatial graph convolutional network for online handwritten characters.

Characters become geometric graphs (one node per resampled pen point), a
spline-kernel graph CNN with spatial transformers classifies them, and a CLI
plus HTTP service expose training and live recognition.
"""

from .autodiff import Tape, Tensor, backward, gradcheck, segment_reduce
from .errors import CheckpointError, DataError, ShapeError, SgcnError
from .estimator import SgcnClassifier
from .graphs import (CharGraph, BatchedGraph, batch_graphs, build_graph,
                     conv_cost_ratio, node_features, to_undirected_self_loops)
from .ink import (Dataset, Sample, SynthSpec, Trajectory, load_jsonl,
                  normalize, resample, save_jsonl, synth_dataset)
from .network import (ModelConfig, SgcnModel, cos_loss, large_config,
                      model_forward, param_count, small_config)
from .splineconv import (SplineKernel, naive_conv_oracle, pseudo_coords,
                         spline_basis, spline_conv)
from .training import (Metrics, TrainConfig, checkpoint_load, checkpoint_save,
                       evaluate, lr_schedule_step, train)

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward", "gradcheck", "segment_reduce",
    "CheckpointError", "DataError", "ShapeError", "SgcnError",
    "SgcnClassifier",
    "CharGraph", "BatchedGraph", "batch_graphs", "build_graph",
    "conv_cost_ratio", "node_features", "to_undirected_self_loops",
    "Dataset", "Sample", "SynthSpec", "Trajectory", "load_jsonl",
    "normalize", "resample", "save_jsonl", "synth_dataset",
    "ModelConfig", "SgcnModel", "cos_loss", "large_config",
    "model_forward", "param_count", "small_config",
    "SplineKernel", "naive_conv_oracle", "pseudo_coords",
    "spline_basis", "spline_conv",
    "Metrics", "TrainConfig", "checkpoint_load", "checkpoint_save",
    "evaluate", "lr_schedule_step", "train",
    "__version__",
]
