"""Layer-wise, time-varying combination weights derived from deep relative trust.

For agent ``k`` and neighbour ``l != k`` the raw weight on layer ``p*`` is

    c_lk * 2^(L+1) * prod_p (1 + |w_k^p - w_l^p|^2 / (|w_l^p|^2 + kappa))
    ------------------------------------------------------------------
           |w_l^p*|^2 + |w_k^p* - w_l^p*|^2 + kappa

Raw weights in a column are clipped to ``N`` times the column minimum, the
self weight is ``c_kk / (n_k - 1)`` times the sum of clipped neighbour
weights, and the column is normalised to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import ContractViolation, DegenerateInputError, SingularityError
from .nn import Architecture, forward
from .topology import BaseWeights, Topology

DEFAULT_KAPPA = 1e-8


@dataclass(frozen=True)
class DrtConfig:
    kappa: float = DEFAULT_KAPPA
    clip_N: float = 2.0

    def __post_init__(self) -> None:
        if self.kappa < 0:
            raise ContractViolation(f"kappa must be >= 0, got {self.kappa}")
        if self.clip_N < 1:
            raise ContractViolation(f"clip_N must be >= 1, got {self.clip_N}")


@dataclass(eq=False)
class MixingTensor:
    """Per-layer K x K combination matrices; column k holds agent k's weights."""

    per_layer: np.ndarray
    iteration_index: int = 0

    def __post_init__(self) -> None:
        self.per_layer = np.asarray(self.per_layer, dtype=float)
        if self.per_layer.ndim != 3 or self.per_layer.shape[1] != self.per_layer.shape[2]:
            raise ContractViolation(f"mixing tensor must be L x K x K, got {self.per_layer.shape}")

    @property
    def num_layers(self) -> int:
        return self.per_layer.shape[0]

    @property
    def num_agents(self) -> int:
        return self.per_layer.shape[1]

    def layer(self, p: int) -> np.ndarray:
        return self.per_layer[p]


def mixing_weight_floor(num_agents: int, clip_N: float) -> float:
    """Smallest positive entry the construction can produce."""
    return 1.0 / ((num_agents - 1) * clip_N + 1)


def _sq_norms(params: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([float(layer @ layer) for layer in params])


def _sq_diffs(wk: Sequence[np.ndarray], wl: Sequence[np.ndarray]) -> np.ndarray:
    if len(wk) != len(wl):
        raise ContractViolation("parameter sets have different layer counts")
    out = np.empty(len(wk))
    for p, (a, b) in enumerate(zip(wk, wl)):
        if a.shape != b.shape:
            raise ContractViolation(f"layer {p} shapes differ: {a.shape} vs {b.shape}")
        d = a - b
        out[p] = d @ d
    return out


def _raw_weights(c_lk: float, diff_sq: np.ndarray, wl_sq: np.ndarray, kappa: float) -> np.ndarray:
    """Raw weights for every target layer p* at once (vector of length L)."""
    base = wl_sq + kappa
    if np.any(base <= 0):
        raise SingularityError("a neighbour layer has zero norm; use kappa > 0")
    n_layers = diff_sq.size
    numerator = c_lk * 2.0 ** (n_layers + 1) * np.prod(1.0 + diff_sq / base)
    return numerator / (base + diff_sq)


def drt_raw_weight(
    wk: Sequence[np.ndarray],
    wl: Sequence[np.ndarray],
    c_lk: float,
    p_star: int,
    cfg: DrtConfig,
) -> float:
    if c_lk <= 0:
        raise ContractViolation("raw weights are only defined for neighbours (c_lk > 0)")
    if not 0 <= p_star < len(wk):
        raise ContractViolation(f"layer index {p_star} out of range")
    return float(_raw_weights(c_lk, _sq_diffs(wk, wl), _sq_norms(wl), cfg.kappa)[p_star])


def build_mixing_tensor(
    all_params: Sequence[Sequence[np.ndarray]],
    base: BaseWeights,
    topo: Topology,
    cfg: DrtConfig,
    iteration: int = 0,
) -> MixingTensor:
    k_agents = topo.num_agents
    if len(all_params) != k_agents:
        raise ContractViolation(f"expected {k_agents} parameter sets, got {len(all_params)}")
    if not base.compatible_with(topo):
        raise ContractViolation("base weights are not compatible with the topology")
    c = base.matrix
    n_layers = len(all_params[0])
    sq_norms = [_sq_norms(w) for w in all_params]
    out = np.zeros((n_layers, k_agents, k_agents))

    for k, hood in enumerate(topo.neighborhoods):
        others = [l for l in hood if l != k]
        if not others:
            out[:, k, k] = 1.0
            continue
        raw = np.empty((len(others), n_layers))
        for j, l in enumerate(others):
            raw[j] = _raw_weights(c[l, k], _sq_diffs(all_params[k], all_params[l]), sq_norms[l], cfg.kappa)
        clipped = np.minimum(raw, cfg.clip_N * raw.min(axis=0))
        # per-layer sums are taken sequentially down each column
        neighbour_sum = clipped.sum(axis=0)
        self_weight = c[k, k] / (len(hood) - 1) * neighbour_sum
        total = neighbour_sum + self_weight
        out[:, others, k] = (clipped / total).T
        out[:, k, k] = self_weight / total
    return MixingTensor(out, iteration)


def check_mixing_tensor(tensor: MixingTensor, base: BaseWeights, clip_N: float, atol: float = 1e-12) -> None:
    """Raise ``ContractViolation`` unless every layer matrix is column-stochastic,
    shares the zero pattern of ``base`` and respects the positive-entry floor."""
    a = tensor.per_layer
    if np.any(a < 0):
        raise ContractViolation("negative mixing weight")
    col_err = np.abs(a.sum(axis=1) - 1.0).max()
    if col_err > atol:
        raise ContractViolation(f"column sums deviate from 1 by {col_err:.3e}")
    pattern = base.matrix > 0
    for p in range(tensor.num_layers):
        if not np.array_equal(a[p] > 0, pattern):
            raise ContractViolation(f"layer {p} zero pattern differs from the base weights")
    floor = mixing_weight_floor(tensor.num_agents, clip_N) - atol
    positive = a[a > 0]
    if positive.size and positive.min() < floor:
        raise ContractViolation(f"positive entry {positive.min():.6g} below lower bound {floor:.6g}")


def drt_bound_linear(wk: Sequence[np.ndarray], wl: Sequence[np.ndarray]) -> float:
    """prod_p (1 + |w_k^p - w_l^p| / |w_l^p|) - 1."""
    norms = np.sqrt(_sq_norms(wl))
    if np.any(norms == 0):
        raise SingularityError("zero layer norm in the reference network")
    return float(np.prod(1.0 + np.sqrt(_sq_diffs(wk, wl)) / norms) - 1.0)


def drt_bound_quadratic(wk: Sequence[np.ndarray], wl: Sequence[np.ndarray], kappa: float = 0.0) -> float:
    """2^(L+1) prod_p (1 + |w_k^p - w_l^p|^2 / (|w_l^p|^2 + kappa)) + 2."""
    base = _sq_norms(wl) + kappa
    if np.any(base <= 0):
        raise SingularityError("zero layer norm in the reference network; use kappa > 0")
    diff_sq = _sq_diffs(wk, wl)
    return float(2.0 ** (diff_sq.size + 1) * np.prod(1.0 + diff_sq / base) + 2.0)


def relative_output_distance(
    arch: Architecture,
    wk: Sequence[np.ndarray],
    wl: Sequence[np.ndarray],
    probe_inputs: np.ndarray,
) -> float:
    """max over probes of |f(x; w_k) - f(x; w_l)|^2 / |f(x; w_l)|^2.

    Probes on which the reference network outputs exactly zero are skipped.
    """
    fk = forward(arch, wk, probe_inputs)
    fl = forward(arch, wl, probe_inputs)
    denom = np.einsum("ij,ij->i", fl, fl)
    keep = denom > 0
    if not np.any(keep):
        raise DegenerateInputError("reference network outputs zero on every probe")
    diff = fk[keep] - fl[keep]
    return float((np.einsum("ij,ij->i", diff, diff) / denom[keep]).max())


def write_tensor(fh: TextIO, tensor: MixingTensor) -> None:
    """Append ``tensor`` as blocks of ``iter p K`` followed by K rows, one block per layer."""
    k = tensor.num_agents
    for p in range(tensor.num_layers):
        fh.write(f"{tensor.iteration_index} {p} {k}\n")
        for row in tensor.per_layer[p]:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def dump_tensors(path: str | Path, tensors: Iterable[MixingTensor]) -> None:
    with open(path, "w") as fh:
        for t in tensors:
            write_tensor(fh, t)


def load_tensors(path: str | Path) -> list[MixingTensor]:
    blocks: dict[int, dict[int, np.ndarray]] = {}
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    pos = 0
    while pos < len(lines):
        header = lines[pos].split()
        if len(header) != 3:
            raise ContractViolation(f"bad tensor header at line {pos + 1}: {lines[pos]!r}")
        it, p, k = (int(v) for v in header)
        rows = [[float(v) for v in ln.split()] for ln in lines[pos + 1 : pos + 1 + k]]
        blocks.setdefault(it, {})[p] = np.array(rows)
        pos += 1 + k
    return [
        MixingTensor(np.stack([layers[p] for p in sorted(layers)]), it)
        for it, layers in sorted(blocks.items())
    ]
