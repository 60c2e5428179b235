"""hdgcn: hierarchically decomposed graph convolutional networks for
skeleton-based action recognition, on a minimal numpy autodiff core.
"""

from .aha import AHAConfig, AHAModule, aggregate, rsap, sap
from .data import (DatasetManifest, SkeletonSequence, derive_bone, derive_motion,
                   derive_stream, generate_synthetic, load_arrays, preprocess,
                   read_sequence, write_sequence)
from .ensemble import EnsembleMember, EnsembleSpec, EvalReport, evaluate, fuse
from .errors import (ConfigError, DataError, HDGCNError, NumericalError, ShapeError,
                     TopologyError, TrainingError)
from .hdgc import ConventionalGCLayer, HDGCConfig, HDGCLayer, edge_conv, knn_indices
from .hdgraph import (HDAdjacency, HierarchyDecomposition, build_conventional,
                      build_hd, decompose, hd_edge_union, normalize)
from .network import (HDGCN, ComplexityReport, ModelConfig, PRESETS, complexity)
from .tensor import Parameter, Tensor, no_grad
from .topology import SkeletonTopology, builtin, parent_map
from .training import TrainConfig, TrainState, lr_at, sgd_step, train

__version__ = "0.1.0"
