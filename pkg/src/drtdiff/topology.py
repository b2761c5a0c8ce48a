"""Communication graphs, Metropolis base weights and mixing rates."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConnectivityError, ContractViolation, InvalidSizeError, ToleranceError


@dataclass(frozen=True)
class Topology:
    """Undirected graph over ``num_agents`` agents.

    Self-loops are implicit: every agent belongs to its own neighborhood, so
    ``degree(k)`` counts ``k`` itself.
    """

    num_agents: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.num_agents < 1:
            raise InvalidSizeError(f"num_agents must be positive, got {self.num_agents}")
        normalized = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                continue
            if not (0 <= u < self.num_agents and 0 <= v < self.num_agents):
                raise ContractViolation(f"edge ({u}, {v}) outside [0, {self.num_agents})")
            normalized.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(normalized))

    def neighborhood(self, k: int) -> list[int]:
        """Sorted neighborhood of ``k``, including ``k``."""
        return self.neighborhoods[k]

    @property
    def neighborhoods(self) -> list[list[int]]:
        nbrs = [{k} for k in range(self.num_agents)]
        for u, v in self.edges:
            nbrs[u].add(v)
            nbrs[v].add(u)
        return [sorted(s) for s in nbrs]

    def degree(self, k: int) -> int:
        return len(self.neighborhoods[k])

    def adjacency(self) -> np.ndarray:
        """Boolean K x K adjacency with a true diagonal."""
        adj = np.eye(self.num_agents, dtype=bool)
        for u, v in self.edges:
            adj[u, v] = adj[v, u] = True
        return adj

    def is_connected(self) -> bool:
        nbrs = self.neighborhoods
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.num_agents

    def require_connected(self) -> None:
        if not self.is_connected():
            raise ConnectivityError("topology is not connected", attempts=0)

    def to_edgelist(self) -> str:
        lines = [str(self.num_agents)]
        lines += [f"{u} {v}" for u, v in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str) -> Topology:
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 1:
            raise ContractViolation("edge list must start with a single 'K' header line")
        k = int(rows[0][0])
        edges = []
        for row in rows[1:]:
            if len(row) != 2:
                raise ContractViolation(f"malformed edge line: {' '.join(row)!r}")
            edges.append((int(row[0]), int(row[1])))
        return cls(k, frozenset(edges))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_edgelist())

    @classmethod
    def load(cls, path: str | Path) -> Topology:
        return cls.from_edgelist(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class BaseWeights:
    """Static nonnegative K x K matrix ``C``; entry ``[l, k]`` is the weight agent k puts on l."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractViolation(f"base weights must be square, got shape {m.shape}")
        if np.any(m < 0):
            raise ContractViolation("base weights must be nonnegative")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def num_agents(self) -> int:
        return self.matrix.shape[0]

    def compatible_with(self, topo: Topology) -> bool:
        return topo.num_agents == self.num_agents and bool(
            np.array_equal(self.matrix > 0, topo.adjacency())
        )


def build_ring(num_agents: int) -> Topology:
    if num_agents < 2:
        raise InvalidSizeError(f"a ring needs at least 2 agents, got {num_agents}")
    return Topology(num_agents, frozenset((k, (k + 1) % num_agents) for k in range(num_agents)))


def build_hypercube(dim: int) -> Topology:
    if dim < 1:
        raise InvalidSizeError(f"hypercube dimension must be >= 1, got {dim}")
    k = 2**dim
    edges = frozenset((u, u ^ (1 << b)) for u in range(k) for b in range(dim))
    return Topology(k, edges)


def build_complete(num_agents: int) -> Topology:
    if num_agents < 1:
        raise InvalidSizeError(f"num_agents must be positive, got {num_agents}")
    return Topology(num_agents, frozenset(itertools.combinations(range(num_agents), 2)))


def build_erdos_renyi(num_agents: int, p: float, seed: int, max_retries: int = 1000) -> Topology:
    """Connected G(K, p) draw.

    Disconnected draws are discarded and the generator is re-seeded from
    ``(seed, attempt)``, so the result is a pure function of ``(K, p, seed)``
    and neighbouring seeds do not collapse onto the same retry sequence.
    """
    if num_agents < 2:
        raise InvalidSizeError(f"need at least 2 agents, got {num_agents}")
    if not 0.0 < p <= 1.0:
        raise ContractViolation(f"edge probability must be in (0, 1], got {p}")
    pairs = list(itertools.combinations(range(num_agents), 2))
    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, attempt])
        keep = rng.random(len(pairs)) < p
        topo = Topology(num_agents, frozenset(e for e, kept in zip(pairs, keep) if kept))
        if topo.is_connected():
            return topo
    raise ConnectivityError(
        f"no connected Erdos-Renyi graph (K={num_agents}, p={p}) after {max_retries} attempts",
        attempts=max_retries,
    )


def metropolis_weights(topo: Topology) -> BaseWeights:
    topo.require_connected()
    nbrs = topo.neighborhoods
    deg = [len(n) for n in nbrs]
    k = topo.num_agents
    a = np.zeros((k, k))
    for u, v in topo.edges:
        a[u, v] = a[v, u] = 1.0 / max(deg[u], deg[v])
    a[np.diag_indices(k)] = 1.0 - a.sum(axis=0)
    return BaseWeights(a)


def mixing_rate(weights: BaseWeights, tol: float = 1e-9, max_iter: int = 100_000) -> float:
    """Second-largest eigenvalue magnitude of a symmetric doubly stochastic matrix.

    Power iteration runs on the square of the matrix deflated by its
    ``(1, 1/sqrt(K))`` Perron pair, which keeps the iteration stable when
    ``+lambda`` and ``-lambda`` are both eigenvalues (bipartite graphs).
    """
    a = weights.matrix
    if not np.allclose(a, a.T, atol=1e-12, rtol=0.0):
        raise ContractViolation("mixing_rate requires a symmetric matrix")
    k = a.shape[0]
    if k == 1:
        return 0.0
    deflated = a - np.full((k, k), 1.0 / k)
    sq = deflated @ deflated

    x = np.random.default_rng(0).standard_normal(k)
    x -= x.mean()
    x /= np.linalg.norm(x)
    residual = np.inf
    for _ in range(max_iter):
        y = sq @ x
        rho = float(x @ y)
        residual = float(np.linalg.norm(y - rho * x))
        if residual <= tol:
            return float(np.sqrt(max(rho, 0.0)))
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
    raise ToleranceError(
        f"power iteration did not converge in {max_iter} iterations (residual {residual:.3e})",
        residual=residual,
    )
