"""Decentralized learning with classical and deep-relative-trust diffusion."""

from .mixing import DrtConfig, MixingTensor, build_mixing_tensor
from .nn import Architecture, Batch, init_params
from .strategies import RoundSpec, StrategyKind, run_round
from .topology import Topology, build_erdos_renyi, build_hypercube, build_ring, metropolis_weights, mixing_rate

__all__ = [
    "Architecture",
    "Batch",
    "DrtConfig",
    "MixingTensor",
    "RoundSpec",
    "StrategyKind",
    "Topology",
    "build_erdos_renyi",
    "build_hypercube",
    "build_mixing_tensor",
    "build_ring",
    "init_params",
    "metropolis_weights",
    "mixing_rate",
    "run_round",
]
