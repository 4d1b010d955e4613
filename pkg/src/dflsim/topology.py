"""Erdos-Renyi communication graphs with designated benign and malicious nodes.

Generation is rejection sampling: graphs are redrawn until the subgraph induced
by the benign nodes is connected, which preserves the conditional Erdos-Renyi
edge distribution. Node ids 0..num_benign-1 are benign, the rest malicious.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import rng


class TopologyError(RuntimeError):
    """Graph generation could not satisfy the connectivity assumption."""


@dataclass(frozen=True)
class TopologyConfig:
    num_benign: int = 10
    num_malicious: int = 2
    edge_prob: float = 0.7
    seed: int = 0
    max_retries: int = 1000


@dataclass(frozen=True)
class TopologyGraph:
    """Undirected graph over disjoint benign/malicious node sets.

    Structural invariants (symmetry, empty diagonal, the benign/malicious
    partition, and |benign| >= 2) are enforced here; benign-subgraph
    connectivity is enforced by generate() and queryable via
    is_benign_connected().
    """

    n: int
    adjacency: np.ndarray
    benign: frozenset
    malicious: frozenset

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool).copy()
        if adj.shape != (self.n, self.n):
            raise ValueError(f"adjacency must be {self.n}x{self.n}")
        if np.any(np.diag(adj)):
            raise ValueError("self-loops are not allowed")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        benign = frozenset(int(i) for i in self.benign)
        malicious = frozenset(int(i) for i in self.malicious)
        if benign & malicious:
            raise ValueError("benign and malicious sets must be disjoint")
        if benign | malicious != set(range(self.n)):
            raise ValueError("benign and malicious sets must cover all node ids")
        if len(benign) < 2:
            raise ValueError("at least 2 benign nodes are required")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "benign", benign)
        object.__setattr__(self, "malicious", malicious)

    def to_json_dict(self) -> dict:
        edges = [
            [int(i), int(j)]
            for i in range(self.n)
            for j in range(i + 1, self.n)
            if self.adjacency[i, j]
        ]
        return {
            "n": self.n,
            "edges": edges,
            "benign": sorted(self.benign),
            "malicious": sorted(self.malicious),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TopologyGraph":
        n = int(doc["n"])
        adj = np.zeros((n, n), dtype=bool)
        for i, j in doc["edges"]:
            adj[i, j] = adj[j, i] = True
        return cls(n, adj, frozenset(doc["benign"]), frozenset(doc["malicious"]))


def neighbors(g: TopologyGraph, k: int) -> set:
    """Open neighborhood of node k (never contains k itself)."""
    if not 0 <= k < g.n:
        raise ValueError(f"node id {k} out of range [0, {g.n})")
    return set(int(i) for i in np.flatnonzero(g.adjacency[k]))


def is_benign_connected(g: TopologyGraph) -> bool:
    """BFS reachability over benign-benign edges only."""
    benign = sorted(g.benign)
    start = benign[0]
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(g.adjacency[u]):
            v = int(v)
            if v in g.benign and v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(benign)


def generate(config: TopologyConfig) -> TopologyGraph:
    """Sample an Erdos-Renyi graph whose benign-induced subgraph is connected."""
    if config.num_benign < 2:
        raise ValueError("num_benign must be at least 2")
    if config.num_malicious < 0:
        raise ValueError("num_malicious must be nonnegative")
    if not 0.0 <= config.edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    n = config.num_benign + config.num_malicious
    benign = frozenset(range(config.num_benign))
    malicious = frozenset(range(config.num_benign, n))
    gen = rng.stream(config.seed, purpose="topology")
    for _ in range(config.max_retries):
        draws = gen.random((n, n))
        upper = np.triu(draws < config.edge_prob, k=1)
        adj = upper | upper.T
        g = TopologyGraph(n, adj, benign, malicious)
        if is_benign_connected(g):
            return g
    raise TopologyError(
        f"failed to generate a graph with a connected benign subgraph after "
        f"{config.max_retries} attempts (num_benign={config.num_benign}, "
        f"edge_prob={config.edge_prob})"
    )
