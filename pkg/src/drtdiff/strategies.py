"""Synchronous adapt-then-combine rounds for classical and DRT diffusion."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, batch_indices
from .errors import ContractViolation
from .mixing import DrtConfig, MixingTensor, build_mixing_tensor
from .nn import Architecture, Batch, LayeredParams, loss_and_grad
from .topology import BaseWeights, Topology


class StrategyKind(str, enum.Enum):
    CLASSICAL = "classical"
    DRT = "drt"


@dataclass
class AgentState:
    agent_id: int
    params: LayeredParams
    master_seed: int = 0

    def rng(self, round_index: int, epoch: int = 0) -> np.random.Generator:
        """Stream keyed on (master seed, agent, round, epoch): independent of execution order."""
        return np.random.default_rng([self.master_seed, self.agent_id, round_index, epoch])

    def copy(self) -> AgentState:
        return AgentState(self.agent_id, [layer.copy() for layer in self.params], self.master_seed)


@dataclass(frozen=True)
class RoundSpec:
    mu: float
    batch_size: int = 16
    local_steps: int | None = None
    consensus_steps: int = 3
    freeze_weights_within_round: bool = False

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise ContractViolation(f"step size must be nonnegative, got {self.mu}")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if self.local_steps is not None and self.local_steps < 0:
            raise ContractViolation("local_steps must be >= 0")
        if self.consensus_steps < 0:
            raise ContractViolation("consensus_steps must be >= 0")

    def steps_for(self, local_size: int) -> int:
        if self.local_steps is not None:
            return self.local_steps
        return math.ceil(local_size / self.batch_size)


@dataclass
class RoundTelemetry:
    agent_losses: list[float]
    tensors: list[MixingTensor] = field(default_factory=list)


def adapt_step(arch: Architecture, params: Sequence[np.ndarray], batch: Batch, mu: float) -> tuple[float, LayeredParams]:
    """One stochastic gradient step; returns the minibatch loss and the intermediate iterate."""
    value, grad = loss_and_grad(arch, params, batch)
    return value, [w - mu * g for w, g in zip(params, grad)]


def _stack_layer(psis: Sequence[Sequence[np.ndarray]], p: int) -> np.ndarray:
    try:
        return np.stack([psi[p] for psi in psis])
    except ValueError as exc:
        raise ContractViolation(f"layer {p} shapes differ across agents") from exc


def _combine(psis: Sequence[Sequence[np.ndarray]], matrices: Sequence[np.ndarray]) -> list[LayeredParams]:
    k = len(psis)
    n_layers = len(psis[0])
    if any(len(psi) != n_layers for psi in psis):
        raise ContractViolation("agents disagree on the number of layers")
    mixed = []
    for p in range(n_layers):
        a = matrices[p]
        if a.shape != (k, k):
            raise ContractViolation(f"combination matrix is {a.shape}, expected {(k, k)}")
        mixed.append(a.T @ _stack_layer(psis, p))
    return [[mixed[p][j] for p in range(n_layers)] for j in range(k)]


def combine_classical(psis: Sequence[Sequence[np.ndarray]], weights: BaseWeights | np.ndarray) -> list[LayeredParams]:
    """w_k = sum_l a_lk psi_l with the same static matrix on every layer."""
    a = weights.matrix if isinstance(weights, BaseWeights) else np.asarray(weights, dtype=float)
    return _combine(psis, [a] * len(psis[0]))


def combine_drt(
    psis: Sequence[Sequence[np.ndarray]],
    base: BaseWeights,
    topo: Topology,
    cfg: DrtConfig,
    iteration: int = 0,
) -> tuple[list[LayeredParams], MixingTensor]:
    tensor = build_mixing_tensor(psis, base, topo, cfg, iteration)
    return _combine(psis, list(tensor.per_layer)), tensor


def combine_with_tensor(psis: Sequence[Sequence[np.ndarray]], tensor: MixingTensor) -> list[LayeredParams]:
    return _combine(psis, list(tensor.per_layer))


def _local_training(
    arch: Architecture,
    state: AgentState,
    ds: Dataset,
    indices: np.ndarray,
    spec: RoundSpec,
    round_index: int,
) -> tuple[float, LayeredParams]:
    params = state.params
    n_steps = spec.steps_for(len(indices))
    losses = []
    epoch = 0
    chunks: list[np.ndarray] = []
    for _ in range(n_steps):
        if not chunks:
            chunks = batch_indices(indices, spec.batch_size, [state.master_seed, state.agent_id, round_index, epoch])
            epoch += 1
        value, params = adapt_step(arch, params, ds.subset(chunks.pop(0)), spec.mu)
        losses.append(value)
    return (float(np.mean(losses)) if losses else float("nan")), params


def run_round(
    arch: Architecture,
    states: Sequence[AgentState],
    ds: Dataset,
    assignments: Sequence[np.ndarray],
    spec: RoundSpec,
    kind: StrategyKind | str,
    base: BaseWeights,
    topo: Topology,
    drt: DrtConfig | None = None,
    round_index: int = 0,
    threads: int = 1,
    record_tensors: bool = False,
) -> tuple[list[AgentState], RoundTelemetry]:
    """Local epoch on every agent, then ``consensus_steps`` combination steps.

    DRT weights are rebuilt from the current iterates before every consensus
    step unless ``spec.freeze_weights_within_round`` is set. Recorded tensors
    are indexed by the global consensus-step counter ``round * R + r``.
    """
    kind = StrategyKind(kind)
    if len(states) != topo.num_agents or len(assignments) != topo.num_agents:
        raise ContractViolation("need one state and one index set per agent")
    if kind is StrategyKind.DRT and drt is None:
        drt = DrtConfig(clip_N=2.0 * topo.num_agents)

    jobs = [(arch, s, ds, idx, spec, round_index) for s, idx in zip(states, assignments)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: _local_training(*job), jobs))
    else:
        results = [_local_training(*job) for job in jobs]
    losses = [r[0] for r in results]
    psis = [r[1] for r in results]

    tensors: list[MixingTensor] = []
    frozen: MixingTensor | None = None
    for r in range(spec.consensus_steps):
        it = round_index * spec.consensus_steps + r
        if kind is StrategyKind.CLASSICAL:
            psis = combine_classical(psis, base)
            if record_tensors:
                tensors.append(MixingTensor(np.repeat(base.matrix[None], len(psis[0]), axis=0), it))
            continue
        if spec.freeze_weights_within_round:
            if frozen is None:
                frozen = build_mixing_tensor(psis, base, topo, drt, it)
            tensor = MixingTensor(frozen.per_layer, it)
            psis = combine_with_tensor(psis, tensor)
        else:
            psis, tensor = combine_drt(psis, base, topo, drt, it)
        if record_tensors:
            tensors.append(tensor)

    new_states = [AgentState(s.agent_id, list(p), s.master_seed) for s, p in zip(states, psis)]
    return new_states, RoundTelemetry(losses, tensors)
