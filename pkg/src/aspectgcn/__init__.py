"""Aspect-based sentiment classification with attention-supplemented
dependency-graph convolutions over pretrained-transformer features."""

from .config import RunConfig, load_config
from .corpus import Instance, WordVectorTable, make_folds
from .depgraph import DepGraph, SubwordAlignment, to_adjacency
from .graphsup import SupplementedGraph, position_index, supplement
from .metrics import RunMetrics, accuracy, macro_f1
from .model import AspectGcn, ForwardTrace, classification_loss
from .plmfeat import PlmFeatures, StubEncoder, encode

__version__ = "0.1.0"

__all__ = [
    "AspectGcn",
    "DepGraph",
    "ForwardTrace",
    "Instance",
    "PlmFeatures",
    "RunConfig",
    "RunMetrics",
    "StubEncoder",
    "SubwordAlignment",
    "SupplementedGraph",
    "WordVectorTable",
    "accuracy",
    "classification_loss",
    "encode",
    "load_config",
    "macro_f1",
    "make_folds",
    "position_index",
    "supplement",
    "to_adjacency",
]
