#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
from .gem_logging import log
from .gem_errors import (GEMError, GEMParseError, GEMSchemaError, GEMDimensionError, GEMNumericError, GEMUsageError,
                         GEMConfigError, GEMConsistencyError)
from .gem_ingest import (GEMEvent, GEMDeviceTypeRegistry, GEMTimeWindow, EventKind, parse_events, serialize_events,
                         read_events, write_events, window_filter, prune_isolated)
from .gem_graph import (GEMVertexIndex, GEMHeteroGraph, GEMFeatureMatrix, GEMLabelSet, build_graph, build_features,
                        degree, load_graph, save_graph, read_labels, write_labels)
from .gem_subgraph import GEMAccountGraph, GEMComponentScore, project, prune, components, tune_theta
from .gem_model import (GEMParams, GEMGradients, GEMEmbeddingTrace, AggregationMode, NeighbourScaling, Activation,
                        init_params, attention_weights, forward, loss, backward)
from .gem_gcn import GEMGCNParams, init_gcn_params, gcn_forward, gcn_backward
from .gem_checkpoint import GEMCheckpoint, save_checkpoint, load_checkpoint
from .gem_trainer import GEMTrainConfig, GEMTrainReport, GEMEpochRecord, GEMTrainer, train, predict
from .gem_synth import GEMSynthConfig, GEMSynthDataset, generate, split_weeks, write_dataset
from .gem_eval import GEMMetricsReport, f1_at, auc, pr_curve, evaluate, attention_report
from .gem_experiment import depth_sweep, embedding_sweep, run_bench

try:
    from ._version import __version__  # type: ignore
except ImportError:
    # Fallback when using the package in dev mode without installing in editable mode with pip.
    import warnings

    warnings.warn("Importing 'pyGEM' outside a proper installation.")
    __version__ = "dev"
