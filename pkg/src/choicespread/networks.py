"""Network loading, structural metrics, mixed human/artificial population
assignment, seed selection, and the synchronous threshold-contagion process."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .thresholds import ThresholdMatrix

logger = logging.getLogger(__name__)

SEEDING_POLICIES = ("random", "degree")


class NetworkError(ValueError):
    """Raised for unreadable network files or invalid simulation inputs."""


@dataclass
class Network:
    """Undirected simple graph over integer node ids, with CSR adjacency."""

    node_ids: np.ndarray          # sorted original ids
    adjacency: sp.csr_matrix      # symmetric 0/1, no diagonal

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids)
        self._index = {int(v): i for i, v in enumerate(self.node_ids)}
        self.degrees = np.asarray(self.adjacency.sum(axis=1)).ravel().astype(int)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    def index_of(self, node_id: int) -> int:
        return self._index[int(node_id)]

    def neighbors(self, idx: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[idx]:a.indptr[idx + 1]]


def network_from_edges(edges: Sequence[tuple[int, int]],
                       extra_nodes: Sequence[int] = ()) -> Network:
    """Build a Network from integer pairs, dropping self-loops and duplicate
    edges (counts logged)."""
    nodes = set(int(n) for n in extra_nodes)
    seen: set[tuple[int, int]] = set()
    self_loops = duplicates = 0
    for a, b in edges:
        a, b = int(a), int(b)
        nodes.update((a, b))
        if a == b:
            self_loops += 1
            continue
        key = (a, b) if a < b else (b, a)
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
    if not nodes:
        raise NetworkError("network has no nodes")
    if self_loops or duplicates:
        logger.info("dropped %d self-loops and %d duplicate edges",
                    self_loops, duplicates)
    node_ids = np.array(sorted(nodes))
    index = {v: i for i, v in enumerate(node_ids)}
    n = len(node_ids)
    if seen:
        rows, cols = [], []
        for a, b in seen:
            rows += [index[a], index[b]]
            cols += [index[b], index[a]]
        adj = sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(n, n), dtype=np.float64)
    else:
        adj = sp.csr_matrix((n, n), dtype=np.float64)
    return Network(node_ids=node_ids, adjacency=adj)


def load_network(edge_list_file: str) -> Network:
    """Read whitespace- or comma-separated integer pairs; '#' lines are
    comments. Self-loops and duplicate edges are dropped with counts logged."""
    edges = []
    try:
        with open(edge_list_file, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.replace(",", " ").split()
                if len(parts) < 2:
                    raise NetworkError(
                        f"{edge_list_file}:{lineno}: expected two node ids")
                edges.append((int(parts[0]), int(parts[1])))
    except OSError as exc:
        raise NetworkError(f"cannot read {edge_list_file}: {exc}") from exc
    except ValueError as exc:
        raise NetworkError(f"{edge_list_file}: non-integer node id") from exc
    if not edges:
        raise NetworkError(f"{edge_list_file}: no edges")
    return network_from_edges(edges)


def load_network_dir(directory: str) -> dict[str, Network]:
    """Load every edge-list file in a directory (sorted by name), keyed by
    file stem."""
    nets = {}
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if not os.path.isfile(path):
            continue
        nets[os.path.splitext(name)[0]] = load_network(path)
    if not nets:
        raise NetworkError(f"no network files in {directory}")
    return nets


def network_metrics(net: Network) -> dict:
    """Node/edge counts, global transitivity (3 x triangles over connected
    triples), and the exact degree list."""
    degrees = net.degrees
    triples = int((degrees * (degrees - 1) // 2).sum())
    triangles = 0
    neighbor_sets = [set(net.neighbors(i).tolist()) for i in range(net.n_nodes)]
    for i in range(net.n_nodes):
        for j in net.neighbors(i):
            if j > i:
                triangles += len(neighbor_sets[i] & neighbor_sets[int(j)])
    triangles //= 3  # each triangle counted once per edge
    transitivity = 3.0 * triangles / triples if triples else 0.0
    return {
        "n_nodes": net.n_nodes,
        "n_edges": net.n_edges,
        "global_transitivity": transitivity,
        "degrees": degrees.tolist(),
    }


def _tercile(value: float, q33: float, q67: float) -> int:
    if value < q33:
        return 0
    if value > q67:
        return 2
    return 1


def stratified_network_sample(networks: Mapping[str, Network],
                              seed: int,
                              per_cell: int = 2) -> list[str]:
    """Classify networks into a 3x3 grid over (node count, transitivity) at
    the 33%/67% quantiles and draw per_cell networks uniformly from each
    non-empty cell (cells with fewer members contribute all, logged)."""
    if not networks:
        raise NetworkError("no networks to sample from")
    names = sorted(networks.keys())
    sizes = np.array([networks[n].n_nodes for n in names], dtype=float)
    trans = np.array(
        [network_metrics(networks[n])["global_transitivity"] for n in names])
    s33, s67 = np.quantile(sizes, [0.33, 0.67])
    t33, t67 = np.quantile(trans, [0.33, 0.67])

    cells: dict[tuple[int, int], list[str]] = {}
    for name, s, t in zip(names, sizes, trans):
        cells.setdefault((_tercile(s, s33, s67), _tercile(t, t33, t67)), []).append(name)

    rng = np.random.default_rng(seed)
    selected: list[str] = []
    for si in range(3):
        for ti in range(3):
            members = cells.get((si, ti), [])
            if not members:
                logger.info("stratification cell (%d,%d) is empty", si, ti)
                continue
            if len(members) <= per_cell:
                if len(members) < per_cell:
                    logger.info("stratification cell (%d,%d) has only %d members",
                                si, ti, len(members))
                selected.extend(members)
            else:
                selected.extend(
                    rng.choice(members, size=per_cell, replace=False).tolist())
    return selected


@dataclass
class AgentAssignment:
    """Per-node agent identity for a mixed human/artificial population.

    Both pool draws are made for every node so that, for a fixed seed, raising
    q only flips additional nodes from human to artificial while all agent
    indices stay put (assignments are coupled across q).
    """

    human_pool: ThresholdMatrix
    artificial_pool: ThresholdMatrix
    is_artificial: np.ndarray     # (N,) bool
    human_index: np.ndarray       # (N,) index into human_pool agents (-1 if unused)
    artificial_index: np.ndarray  # (N,) index into artificial pool (-1 if unused)

    @property
    def n_nodes(self) -> int:
        return len(self.is_artificial)

    def pool_label(self, node_idx: int) -> str:
        return ("artificial" if self.is_artificial[node_idx] else "human")

    def agent_id(self, node_idx: int) -> str:
        if self.is_artificial[node_idx]:
            return self.artificial_pool.agent_ids[self.artificial_index[node_idx]]
        return self.human_pool.agent_ids[self.human_index[node_idx]]

    def node_thresholds(self, product_id: str) -> np.ndarray:
        """Per-node tau vector for one product (inf where the agent never
        adopts)."""
        tau = np.empty(self.n_nodes)
        human = ~self.is_artificial
        if human.any():
            col = self.human_pool.column(product_id)
            tau[human] = col[self.human_index[human]]
        if self.is_artificial.any():
            col = self.artificial_pool.column(product_id)
            tau[self.is_artificial] = col[self.artificial_index[self.is_artificial]]
        return tau


def assign_population(net: Network, human_pool: ThresholdMatrix,
                      artificial_pool: ThresholdMatrix, q: float,
                      seed: int) -> AgentAssignment:
    """Make round(q*N) uniformly chosen nodes artificial and draw each node's
    agent uniformly with replacement from its pool. Deterministic given seed."""
    if not 0.0 <= q <= 1.0:
        raise NetworkError(f"q={q} outside [0, 1]")
    n = net.n_nodes
    n_art = int(round(q * n))
    if n_art > 0 and artificial_pool.n_agents == 0:
        raise NetworkError("artificial pool is empty but q > 0")
    if n_art < n and human_pool.n_agents == 0:
        raise NetworkError("human pool is empty but q < 1")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    is_art = np.zeros(n, dtype=bool)
    is_art[order[:n_art]] = True
    human_idx = (rng.integers(0, human_pool.n_agents, size=n)
                 if human_pool.n_agents else np.full(n, -1))
    art_idx = (rng.integers(0, artificial_pool.n_agents, size=n)
               if artificial_pool.n_agents else np.full(n, -1))
    return AgentAssignment(
        human_pool=human_pool, artificial_pool=artificial_pool,
        is_artificial=is_art, human_index=human_idx, artificial_index=art_idx)


def select_seeds(net: Network, policy: str, rate: float,
                 seed: int) -> frozenset[int]:
    """Pick max(1, round(rate*N)) seed nodes: uniformly without replacement
    (random policy) or the top-degree nodes with ties broken by ascending
    node id (degree policy). Returns original node ids."""
    if policy not in SEEDING_POLICIES:
        raise NetworkError(f"invalid seeding policy {policy!r}")
    if not 0.0 < rate <= 1.0:
        raise NetworkError(f"seeding rate {rate} outside (0, 1]")
    count = max(1, int(round(rate * net.n_nodes)))
    if policy == "random":
        rng = np.random.default_rng(seed)
        idx = rng.choice(net.n_nodes, size=count, replace=False)
    else:
        order = sorted(range(net.n_nodes),
                       key=lambda i: (-net.degrees[i], int(net.node_ids[i])))
        idx = order[:count]
    return frozenset(int(net.node_ids[i]) for i in idx)


@dataclass
class DiffusionResult:
    """Outcome of one contagion run: nested adopter sets per step (step 0 is
    the seed set), the step at which adoption stopped growing, and the final
    adoption rate (seeds included)."""

    adopters_per_step: list[frozenset[int]]
    steps_to_fixation: int
    adoption_rate: float

    @property
    def final_adopters(self) -> frozenset[int]:
        return self.adopters_per_step[-1]


def diffuse(net: Network, node_tau: np.ndarray,
            seeds: frozenset[int] | set[int]) -> DiffusionResult:
    """Synchronous threshold contagion.

    At each step a non-adopter adopts iff it has at least one adopting
    neighbor (exposure rule) and the fraction of its neighbors adopted at the
    previous step is >= its threshold. Adoption is irreversible; the process
    is deterministic and halts within N steps.
    """
    node_tau = np.asarray(node_tau, dtype=float)
    if node_tau.shape != (net.n_nodes,):
        raise NetworkError("need one threshold per node")
    if np.isnan(node_tau).any():
        raise NetworkError("node thresholds contain NaN")
    seed_idx = [net.index_of(s) for s in seeds]
    if len(seed_idx) != len(set(seed_idx)):
        raise NetworkError("duplicate seeds")

    adopted = np.zeros(net.n_nodes, dtype=bool)
    adopted[seed_idx] = True
    degrees = np.maximum(net.degrees, 1)  # isolated nodes never pass exposure

    history = [frozenset(int(net.node_ids[i]) for i in np.flatnonzero(adopted))]
    for _ in range(net.n_nodes):
        counts = net.adjacency @ adopted.astype(np.float64)
        frac = counts / degrees
        new = (~adopted) & (counts >= 1.0) & (frac >= node_tau)
        if not new.any():
            break
        adopted |= new
        history.append(frozenset(int(net.node_ids[i]) for i in np.flatnonzero(adopted)))
    return DiffusionResult(
        adopters_per_step=history,
        steps_to_fixation=len(history) - 1,
        adoption_rate=float(adopted.sum()) / net.n_nodes,
    )


def run_diffusion(net: Network, assignment: AgentAssignment,
                  product_thresholds: Mapping[str, np.ndarray] | str,
                  seeds: frozenset[int] | set[int]) -> DiffusionResult:
    """Run the contagion for one product over an assigned population.

    product_thresholds is either a product_id (thresholds pulled from the
    assignment's pools) or a mapping {pool label: per-agent tau vector for
    the product}.
    """
    if assignment.n_nodes != net.n_nodes:
        raise NetworkError("assignment does not cover this network")
    if isinstance(product_thresholds, str):
        node_tau = assignment.node_thresholds(product_thresholds)
    else:
        node_tau = np.empty(net.n_nodes)
        human = ~assignment.is_artificial
        if human.any():
            node_tau[human] = np.asarray(
                product_thresholds["human"])[assignment.human_index[human]]
        if assignment.is_artificial.any():
            node_tau[assignment.is_artificial] = np.asarray(
                product_thresholds["artificial"]
            )[assignment.artificial_index[assignment.is_artificial]]
    return diffuse(net, node_tau, seeds)
