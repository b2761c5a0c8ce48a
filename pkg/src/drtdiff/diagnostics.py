"""Quantities used to check the convergence theory on recorded runs.

Backward products ``A_t^T ... A_i^T`` of column-stochastic matrices are
row-stochastic and approach a rank-one matrix ``1 phi_i^T``; ``phi_i`` weights
the network centroid around which agents cluster.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Dataset
from .errors import ContractViolation, DataAvailabilityError
from .mixing import MixingTensor
from .nn import Architecture, LayeredParams, loss_and_grad

PHI_WARN_RESIDUAL = 1e-6

DIAGNOSTICS_COLUMNS = ("iter", "layer", "residual", "disagreement", "grad_norm", "loss", "horizon")


@dataclass(frozen=True, eq=False)
class PhiEstimate:
    weights: np.ndarray
    horizon_used: int
    residual: float


@dataclass(frozen=True)
class DisagreementRecord:
    iteration: int
    value: float
    mu: float


def _index(tensors: Sequence[MixingTensor] | Mapping[int, MixingTensor]) -> Mapping[int, MixingTensor]:
    if isinstance(tensors, Mapping):
        return tensors
    return {t.iteration_index: t for t in tensors}


def backward_product(tensors, layer: int, start: int, end: int) -> np.ndarray:
    """``A_end^T A_{end-1}^T ... A_start^T`` for one layer."""
    if start > end:
        raise ContractViolation(f"start {start} > end {end}")
    by_iter = _index(tensors)
    prod = None
    for it in range(start, end + 1):
        if it not in by_iter:
            raise DataAvailabilityError(f"no mixing tensor recorded for iteration {it}")
        a_t = by_iter[it].layer(layer).T
        prod = a_t.copy() if prod is None else a_t @ prod
    return prod


def rank_one_residual(product: np.ndarray) -> float:
    """Largest sup-norm distance between two rows of ``product``."""
    spread = product.max(axis=0) - product.min(axis=0)
    return float(spread.max())


def estimate_phi(tensors, layer: int, start: int, horizon: int) -> PhiEstimate:
    """Row average of the backward product over ``[start, start + horizon]``."""
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    prod = backward_product(tensors, layer, start, start + horizon)
    residual = rank_one_residual(prod)
    if residual > PHI_WARN_RESIDUAL:
        warnings.warn(
            f"backward product over {horizon} steps from {start} is not yet rank one (residual {residual:.2e})",
            stacklevel=2,
        )
    return PhiEstimate(prod.mean(axis=0), horizon, residual)


def residual_curve(tensors, layer: int, start: int, horizons: Iterable[int]) -> np.ndarray:
    return np.array([rank_one_residual(backward_product(tensors, layer, start, start + h)) for h in horizons])


def fit_geometric(horizons: Sequence[float], residuals: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares fit of ``log r = log C + H log xi``; returns ``(C, xi, R^2)`` of the log fit."""
    h = np.asarray(horizons, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if np.any(r <= 0):
        raise ContractViolation("residuals must be positive for a log-linear fit")
    y = np.log(r)
    slope, intercept = np.polyfit(h, y, 1)
    fitted = intercept + slope * h
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(intercept)), float(np.exp(slope)), r2


def uniform_phi(num_agents: int, num_layers: int) -> list[np.ndarray]:
    return [np.full(num_agents, 1.0 / num_agents) for _ in range(num_layers)]


def centroid(params: Sequence[Sequence[np.ndarray]], phi: Sequence[PhiEstimate | np.ndarray]) -> LayeredParams:
    """Per-layer ``sum_k phi_k w_k``."""
    k = len(params)
    weights = [np.asarray(f.weights if isinstance(f, PhiEstimate) else f, dtype=float) for f in phi]
    if len(weights) != len(params[0]):
        raise ContractViolation(f"need one weight vector per layer ({len(params[0])}), got {len(weights)}")
    out = []
    for p, w in enumerate(weights):
        if w.shape != (k,):
            raise ContractViolation(f"layer {p} weights have shape {w.shape}, expected ({k},)")
        try:
            stacked = np.stack([agent[p] for agent in params])
        except ValueError as exc:
            raise ContractViolation(f"layer {p} shapes differ across agents") from exc
        out.append(w @ stacked)
    return out


def network_disagreement(params: Sequence[Sequence[np.ndarray]], center: Sequence[np.ndarray]) -> float:
    total = 0.0
    for agent in params:
        for w, c in zip(agent, center):
            d = w - c
            total += float(d @ d)
    return total


def centroid_grad_norm(arch: Architecture, center: Sequence[np.ndarray], dataset: Dataset) -> float:
    """Euclidean norm of the full-batch gradient of the mean loss over ``dataset``."""
    _, grad = loss_and_grad(arch, center, dataset.as_batch())
    return float(np.sqrt(sum(float(g @ g) for g in grad)))


def generalization_gap(train_acc: float, test_acc: float) -> float:
    for name, v in (("train_acc", train_acc), ("test_acc", test_acc)):
        if not 0.0 <= v <= 1.0:
            raise ContractViolation(f"{name} must lie in [0, 1], got {v}")
    return train_acc - test_acc


def write_diagnostics_csv(path: str | Path, rows: Iterable[Mapping[str, object]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DIAGNOSTICS_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
