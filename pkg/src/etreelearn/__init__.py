"""E-Tree learning: hierarchical model aggregation over simulated edge networks."""
from .clustering import ClusterSet, KmaConfig, kma_cluster, kmeans_cluster, ununiform_kma_cluster
from .dataset import LabeledDataset, NodePartition
from .model import ModelParams, TrainConfig
from .sim import MetricsLog, SimConfig, communication_cost, run
from .topology import TopologyGraph, all_pairs_min_delay
from .tree import ETree, PublicNodeConfig, build_etree

__version__ = "0.1.0"

__all__ = [
    "ClusterSet", "ETree", "KmaConfig", "LabeledDataset", "MetricsLog", "ModelParams",
    "NodePartition", "PublicNodeConfig", "SimConfig", "TopologyGraph", "TrainConfig",
    "all_pairs_min_delay", "build_etree", "communication_cost", "kma_cluster",
    "kmeans_cluster", "run", "ununiform_kma_cluster",
]
