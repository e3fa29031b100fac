"""Gaussian embeddings for large attributed graphs."""

from glace.errors import GlaceError, NumericalError, ParseError, ValidationError
from glace.graph import AttributedGraph, EdgeSplit, InductiveSplit, hide_nodes, load_graph, split_edges
from glace.gauss import GaussianEmbedding, dissimilarity, first_order_prob, kl
from glace.encoder import EncoderParams, ModelParams, encode, encode_point, init_params
from glace.trainer import TrainConfig, TrainReport, train
from glace.evaluate import EvalReport, embed, export_embeddings, link_prediction, node_classification, score_pairs

__version__ = "0.1.0"

__all__ = [
    "AttributedGraph",
    "EdgeSplit",
    "EncoderParams",
    "EvalReport",
    "GaussianEmbedding",
    "GlaceError",
    "InductiveSplit",
    "ModelParams",
    "NumericalError",
    "ParseError",
    "TrainConfig",
    "TrainReport",
    "ValidationError",
    "dissimilarity",
    "embed",
    "encode",
    "encode_point",
    "export_embeddings",
    "first_order_prob",
    "hide_nodes",
    "init_params",
    "kl",
    "link_prediction",
    "load_graph",
    "node_classification",
    "score_pairs",
    "split_edges",
    "train",
]
