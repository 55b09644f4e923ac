"""Image tag completion from a jointly learned convolutional max-pool representation."""

from .conv import ConvRepr, FilterBank, PatchMatrix, conv_forward, extract_patches, filter_gradient
from .graph import SimilarityGraph, build_similarity, knn_neighbors, similarity_graph
from .objective import HyperParams, Predictor, TagState, objective_total
from .optimizer import TrainState, export_trace, initialize, outer_step, run

__all__ = [
    "ConvRepr", "FilterBank", "PatchMatrix", "conv_forward", "extract_patches", "filter_gradient",
    "SimilarityGraph", "build_similarity", "knn_neighbors", "similarity_graph",
    "HyperParams", "Predictor", "TagState", "objective_total",
    "TrainState", "export_trace", "initialize", "outer_step", "run",
]
