"""Cooperative federated unsupervised contrastive learning, simulated on one machine."""
from .clustering import KMeansPP, kmeans, kmeanspp_seed, nearest_points_to_centroids
from .config import RunConfig, load_config
from .data import LabeledDataset, parse_idx, partition_noniid, synth_generate, write_idx
from .estimator import CFCLEmbedder
from .exchange import (approximate_dataset, composed_probabilities, macro_probabilities,
                       micro_probabilities, pull_sample, select_reserve)
from .federation import Federation, aggregate, run_simulation
from .metrics import DelayParams, LinearProbe, label_count_variance, linear_probe, transmission_delay
from .model import EncoderModel, batch_gradient, embed, triplet_loss
from .topology import Topology, generate_rgg, neighbors

__version__ = "0.1.0"
