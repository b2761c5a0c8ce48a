"""Run paired classical / DRT diffusion experiments and summarise their metrics."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import diagnostics as diag
from .config import ExperimentConfig
from .data import Dataset, PartitionSpec, make_gaussian_blobs, partition, split_dataset
from .errors import ContractViolation, NumericalFailure
from .mixing import DrtConfig, load_tensors, write_tensor
from .nn import Architecture, LayeredParams, accuracy, format_params, init_params, loss, parse_params
from .strategies import AgentState, RoundSpec, RoundTelemetry, StrategyKind, run_round
from .topology import (
    BaseWeights,
    Topology,
    build_complete,
    build_erdos_renyi,
    build_hypercube,
    build_ring,
    metropolis_weights,
    mixing_rate,
)

log = logging.getLogger(__name__)

STEADY_FRACTION = 0.2
SUMMARY_COLUMNS = ("round", "strategy", "topology", "lambda2", "train_loss", "train_acc", "test_acc", "gen_gap", "disagreement")


def metrics_columns(num_agents: int) -> list[str]:
    cols = list(SUMMARY_COLUMNS)
    cols += [f"train_loss_{k}" for k in range(num_agents)]
    cols += [f"train_acc_{k}" for k in range(num_agents)]
    cols += [f"test_acc_{k}" for k in range(num_agents)]
    return cols


@dataclass
class Setup:
    cfg: ExperimentConfig
    topology: Topology
    base: BaseWeights
    lambda2: float
    arch: Architecture
    train: Dataset
    test: Dataset
    assignments: list[np.ndarray]
    init: list[LayeredParams]

    @property
    def num_agents(self) -> int:
        return self.topology.num_agents

    def round_spec(self) -> RoundSpec:
        r = self.cfg.run
        return RoundSpec(r.mu, r.batch_size, r.local_steps, r.consensus_steps, r.freeze_weights_within_round)

    def drt_config(self) -> DrtConfig:
        return DrtConfig(self.cfg.run.kappa, self.cfg.clip_N)


def build_topology(cfg: ExperimentConfig) -> Topology:
    t = cfg.topology
    if t.kind == "ring":
        return build_ring(t.num_agents)
    if t.kind == "hypercube":
        return build_hypercube(t.dim)
    if t.kind == "erdos_renyi":
        return build_erdos_renyi(t.num_agents, t.p, t.seed)
    return build_complete(t.num_agents)


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    full = make_gaussian_blobs(d.num_classes, d.dim, d.per_class + d.test_per_class, d.spread, d.seed)
    if d.test_per_class == 0:
        return full, full
    return split_dataset(full, d.test_per_class, d.seed)


def agent_init_seed(master_seed: int, agent: int) -> int:
    return int(np.random.SeedSequence([master_seed, agent, 0xC0FFEE]).generate_state(1)[0])


def setup_experiment(cfg: ExperimentConfig) -> Setup:
    cfg.validate()
    topo = build_topology(cfg)
    base = metropolis_weights(topo)
    train, test = build_datasets(cfg)
    d = cfg.data
    spec = PartitionSpec(cfg.num_agents, d.classes_per_agent, d.samples_per_agent, d.iid, d.partition_seed)
    assignments = partition(train, spec)
    m = cfg.model
    arch = Architecture(m.layer_dims, m.activation, m.bias)
    init = [init_params(arch, agent_init_seed(cfg.run.master_seed, k)) for k in range(cfg.num_agents)]
    return Setup(cfg, topo, base, mixing_rate(base), arch, train, test, assignments, init)


def _fmt(v: float) -> str:
    return repr(float(v))


def evaluate(setup: Setup, params: Sequence[LayeredParams]) -> dict[str, object]:
    arch, train, test = setup.arch, setup.train, setup.test
    losses, train_accs, test_accs = [], [], []
    for w, idx in zip(params, setup.assignments):
        local = train.subset(idx)
        losses.append(loss(arch, w, local))
        train_accs.append(accuracy(arch, w, local.inputs, local.labels))
        test_accs.append(accuracy(arch, w, test.inputs, test.labels))
    center = diag.centroid(params, diag.uniform_phi(len(params), arch.num_layers))
    train_acc, test_acc = float(np.mean(train_accs)), float(np.mean(test_accs))
    return {
        "train_loss": float(np.mean(losses)),
        "train_acc": train_acc,
        "test_acc": test_acc,
        "gen_gap": diag.generalization_gap(train_acc, test_acc),
        "disagreement": diag.network_disagreement(params, center),
        "train_losses": losses,
        "train_accs": train_accs,
        "test_accs": test_accs,
    }


def metrics_row(setup: Setup, round_number: int, strategy: str, m: dict[str, object]) -> list[str]:
    row = [str(round_number), strategy, setup.cfg.topology.kind, _fmt(setup.lambda2)]
    row += [_fmt(m[c]) for c in SUMMARY_COLUMNS[4:]]
    row += [_fmt(v) for v in m["train_losses"]]
    row += [_fmt(v) for v in m["train_accs"]]
    row += [_fmt(v) for v in m["test_accs"]]
    return row


def write_checkpoint(path: Path, params: Sequence[LayeredParams]) -> None:
    path.write_text(f"{len(params)}\n" + "".join(format_params(w) for w in params))


def read_checkpoint(path: Path) -> list[LayeredParams]:
    lines = path.read_text().splitlines()
    k = int(lines[0])
    out, pos = [], 1
    for _ in range(k):
        n_layers = int(lines[pos])
        out.append(parse_params("\n".join(lines[pos : pos + 2 + n_layers])))
        pos += 2 + n_layers
    return out


def strategies_for(cfg: ExperimentConfig) -> list[StrategyKind]:
    if cfg.run.strategy == "both":
        return [StrategyKind.CLASSICAL, StrategyKind.DRT]
    return [StrategyKind(cfg.run.strategy)]


@dataclass
class RoundResult:
    round_number: int
    states: list[AgentState]
    telemetry: RoundTelemetry
    seconds: float

    @property
    def params(self) -> list[LayeredParams]:
        return [s.params for s in self.states]


def simulate(
    setup: Setup,
    kind: StrategyKind | str,
    rounds: int | None = None,
    record_tensors: bool = False,
    spec: RoundSpec | None = None,
) -> Iterator[RoundResult]:
    """Yield the network state after every round of one strategy."""
    kind = StrategyKind(kind)
    cfg = setup.cfg
    spec = spec or setup.round_spec()
    drt = setup.drt_config()
    states = [AgentState(k, [w.copy() for w in setup.init[k]], cfg.run.master_seed) for k in range(setup.num_agents)]
    for rnd in range(cfg.run.rounds if rounds is None else rounds):
        start = time.perf_counter()
        try:
            states, telemetry = run_round(
                setup.arch, states, setup.train, setup.assignments, spec, kind,
                setup.base, setup.topology, drt, rnd, cfg.run.threads, record_tensors,
            )
        except FloatingPointError as exc:
            raise NumericalFailure(f"round {rnd + 1} ({kind.value}): {exc}") from exc
        yield RoundResult(rnd + 1, states, telemetry, time.perf_counter() - start)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict[str, object]:
    """Run every requested strategy in lockstep on a shared setup.

    Writes ``metrics.csv``, ``summary.json``, ``timing.csv``, the resolved
    config and topology, and optional tensor dumps / checkpoints.
    """
    out = Path(out_dir) if out_dir is not None else cfg.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    setup = setup_experiment(cfg)
    cfg.save(out / "config.json")
    setup.topology.save(out / "topology.txt")

    kinds = strategies_for(cfg)
    init_metrics = evaluate(setup, setup.init)
    history: dict[str, list[dict[str, object]]] = {kind.value: [] for kind in kinds}
    tensor_files = {}
    if cfg.output.dump_tensors:
        tensor_files = {kind: open(out / f"tensors_{kind.value}.txt", "w") for kind in kinds}
    ckpt_dirs = {}
    if cfg.output.checkpoint_every > 0:
        for kind in kinds:
            ckpt_dirs[kind] = out / "checkpoints" / kind.value
            ckpt_dirs[kind].mkdir(parents=True, exist_ok=True)
            write_checkpoint(ckpt_dirs[kind] / "round_0000.txt", setup.init)

    runs = [simulate(setup, kind, record_tensors=cfg.output.dump_tensors) for kind in kinds]
    try:
        with open(out / "metrics.csv", "w", newline="") as mfh, open(out / "timing.csv", "w", newline="") as tfh:
            writer = csv.writer(mfh, lineterminator="\n")
            writer.writerow(metrics_columns(setup.num_agents))
            timer = csv.writer(tfh, lineterminator="\n")
            timer.writerow(["round", "strategy", "seconds"])
            for steps in zip(*runs):
                for kind, step in zip(kinds, steps):
                    for tensor in step.telemetry.tensors:
                        write_tensor(tensor_files[kind], tensor)
                    params = step.params
                    m = evaluate(setup, params)
                    history[kind.value].append(m)
                    writer.writerow(metrics_row(setup, step.round_number, kind.value, m))
                    timer.writerow([step.round_number, kind.value, f"{step.seconds:.6f}"])
                    every = cfg.output.checkpoint_every
                    if every and step.round_number % every == 0:
                        write_checkpoint(ckpt_dirs[kind] / f"round_{step.round_number:04d}.txt", params)
                log.info("round %d/%d done", steps[0].round_number, cfg.run.rounds)
    finally:
        for fh in tensor_files.values():
            fh.close()

    summary = summarize(setup, init_metrics, history)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def steady_window(n_rounds: int) -> int:
    return max(1, math.ceil(STEADY_FRACTION * n_rounds))


def summarize(setup: Setup, init_metrics: dict[str, object], history: dict[str, list[dict[str, object]]]) -> dict[str, object]:
    summary: dict[str, object] = {
        "topology": setup.cfg.topology.kind,
        "num_agents": setup.num_agents,
        "lambda2": setup.lambda2,
        "rounds": setup.cfg.run.rounds,
        "init": {k: init_metrics[k] for k in ("train_loss", "train_acc", "test_acc", "gen_gap", "disagreement")},
        "strategies": {},
    }
    for name, rows in history.items():
        rows = rows or [init_metrics]
        tail = rows[-steady_window(len(rows)) :]
        summary["strategies"][name] = {
            "final_train_acc": rows[-1]["train_acc"],
            "final_test_acc": rows[-1]["test_acc"],
            "steady_test_acc": float(np.mean([r["test_acc"] for r in tail])),
            "steady_gen_gap": float(np.mean([r["gen_gap"] for r in tail])),
            "final_disagreement": rows[-1]["disagreement"],
        }
    return summary


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SUMMARY_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ContractViolation(f"{path}: metrics CSV lacks columns {missing}")
        return list(reader)


def compare_report(csv_paths: Iterable[str | Path]) -> dict[str, dict[str, object]]:
    """Steady-state test accuracy and generalisation gap per topology and strategy.

    The steady state is the mean over the last 20% of rounds of each run.
    """
    table: dict[str, dict[str, object]] = {}
    for path in csv_paths:
        rows = read_metrics(path)
        groups: dict[tuple[str, str], list[dict[str, str]]] = defaultdict(list)
        for row in rows:
            groups[(row["topology"], row["strategy"])].append(row)
        for (topo, strategy), grp in groups.items():
            grp.sort(key=lambda r: int(r["round"]))
            tail = grp[-steady_window(len(grp)) :]
            entry = table.setdefault(topo, {"lambda2": float(grp[0]["lambda2"]), "strategies": {}})
            entry["strategies"][strategy] = {
                "steady_test_acc": float(np.mean([float(r["test_acc"]) for r in tail])),
                "steady_gen_gap": float(np.mean([float(r["gen_gap"]) for r in tail])),
            }
    return table


def format_report(table: dict[str, dict[str, object]]) -> str:
    strategies = sorted({s for entry in table.values() for s in entry["strategies"]})
    header = ["topology", "lambda2"] + [f"{s} acc" for s in strategies] + [f"{s} gap" for s in strategies]
    lines = [" | ".join(header)]
    for topo, entry in sorted(table.items()):
        cells = [topo, f"{entry['lambda2']:.3f}"]
        for key in ("steady_test_acc", "steady_gen_gap"):
            for s in strategies:
                stats = entry["strategies"].get(s)
                cells.append(f"{100 * stats[key]:.2f}%" if stats else "-")
        lines.append(" | ".join(cells))
    return "\n".join(lines)


def diagnose_run(run_dir: str | Path, horizon: int = 50, plain_mean: bool = False) -> dict[str, list[dict[str, object]]]:
    """Post-hoc centroid analysis of a finished run with tensor dumps and checkpoints.

    For the checkpoint taken after round ``j`` the centroid weights come from
    the backward product starting at that round's successor, consensus step
    ``j * R``. Checkpoints without ``horizon`` recorded steps ahead are skipped.
    """
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.load(run_dir / "config.json")
    setup = setup_experiment(cfg)
    r_steps = cfg.run.consensus_steps
    n_layers = setup.arch.num_layers
    results = {}
    for kind in strategies_for(cfg):
        tensor_path = run_dir / f"tensors_{kind.value}.txt"
        ckpt_dir = run_dir / "checkpoints" / kind.value
        if not ckpt_dir.is_dir():
            continue
        tensors = {t.iteration_index: t for t in load_tensors(tensor_path)} if tensor_path.exists() else {}
        rows = []
        for ckpt in sorted(ckpt_dir.glob("round_*.txt")):
            rnd = int(ckpt.stem.split("_")[1])
            params = read_checkpoint(ckpt)
            start = rnd * r_steps
            if plain_mean:
                phis = [diag.PhiEstimate(w, 0, 0.0) for w in diag.uniform_phi(setup.num_agents, n_layers)]
            elif all((start + h) in tensors for h in range(horizon + 1)):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    phis = [diag.estimate_phi(tensors, p, start, horizon) for p in range(n_layers)]
            else:
                continue
            center = diag.centroid(params, phis)
            grad_norm = diag.centroid_grad_norm(setup.arch, center, setup.train)
            full_loss = loss(setup.arch, center, setup.train.as_batch())
            for p in range(n_layers):
                layer_dis = diag.network_disagreement([[w[p]] for w in params], [center[p]])
                rows.append({
                    "iter": start, "layer": p, "residual": phis[p].residual,
                    "disagreement": layer_dis, "grad_norm": grad_norm, "loss": full_loss,
                    "horizon": phis[p].horizon_used,
                })
        diag.write_diagnostics_csv(run_dir / f"diagnostics_{kind.value}.csv", rows)
        results[kind.value] = rows
    return results
