"""Time-varying communication graphs: construction, scheduling, spectra.

The solver talks to the network layer through three objects. A ``Laplacian``
wraps the mixing matrix of one communication round. A ``NetworkSchedule``
deterministically generates Laplacians indexed by iteration, re-drawing the
topology at epoch boundaries. ``SpectralBounds`` records the extreme
eigenvalues seen over a schedule, which calibrate the solver's step sizes:
``lambda_min_plus`` is the smallest positive eigenvalue over all scheduled
graphs and ``lambda_max`` the largest eigenvalue.

Every scheduled graph is connected, so each Laplacian has kernel exactly
span{1} and the positive part of the spectrum is well defined.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FAMILIES",
    "DisconnectedGraphError",
    "Laplacian",
    "NetworkSchedule",
    "SpectralBounds",
    "laplacian_from_edges",
    "schedule_laplacian",
    "spectral_bounds",
    "apply_communication",
]

FAMILIES = ("cycle", "star", "complete", "erdos_renyi", "mst_of_er")

# Families whose epochs differ only by a relabeling of the nodes. A
# relabeling is a permutation similarity, so the spectrum of every epoch
# equals the spectrum of epoch 0.
_RELABEL_FAMILIES = frozenset({"cycle", "star", "complete"})

# Families that need an edge probability.
_RANDOM_FAMILIES = frozenset({"erdos_renyi", "mst_of_er"})

# Draws attempted before falling back to unioning a random spanning tree.
_ER_MAX_DRAWS = 1000

# |lowest eigenvalue| of a Laplacian may not exceed this times max(1, lambda_max).
_EIG_FLOOR = 1e-10


class DisconnectedGraphError(ValueError):
    """The edge list does not describe a connected graph."""


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True

    def component_count(self) -> int:
        return sum(1 for i, p in enumerate(self.parent) if self.find(i) == i)


@dataclass(frozen=True)
class Laplacian:
    """Combinatorial Laplacian D - A of one communication round."""

    m: int
    entries: np.ndarray

    def apply(self, stack: np.ndarray) -> np.ndarray:
        """Multiply an (m, d) node stack by the Laplacian.

        Equivalent to acting with the block matrix ``kron(entries, I_d)`` on
        the stacked vector, without ever forming the Kronecker product.
        """
        stack = np.asarray(stack, dtype=float)
        if stack.ndim != 2 or stack.shape[0] != self.m:
            raise ValueError(
                f"stack must have shape ({self.m}, d), got {stack.shape}"
            )
        return self.entries @ stack

    def eigenvalues(self) -> np.ndarray:
        """All eigenvalues, ascending (symmetric dense solve)."""
        return np.linalg.eigvalsh(self.entries)


@dataclass(frozen=True)
class SpectralBounds:
    """Extreme Laplacian eigenvalues over a schedule's realized graphs."""

    lambda_min_plus: float
    lambda_max: float

    def __post_init__(self):
        if not (0.0 < self.lambda_min_plus <= self.lambda_max):
            raise ValueError(
                "need 0 < lambda_min_plus <= lambda_max, got "
                f"({self.lambda_min_plus}, {self.lambda_max})"
            )


@dataclass(frozen=True)
class NetworkSchedule:
    """Deterministic generator of per-iteration communication graphs.

    Parameters
    ----------
    family : str
        One of ``FAMILIES``. Fixed-shape families (cycle, star, complete)
        are relabeled uniformly at random each epoch; random families are
        re-drawn each epoch.
    m : int
        Node count, at least 2.
    epoch_len : int or None
        Iterations between topology re-draws. ``None`` means static: the
        epoch-0 graph is used forever.
    seed : int
        Root seed. Together with the epoch index it fully determines each
        epoch's graph, independent of query order.
    p : float or None
        Edge probability, required by the random families.
    """

    family: str
    m: int
    epoch_len: int | None = None
    seed: int = 0
    p: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.m < 2:
            raise ValueError(f"need m >= 2 nodes, got {self.m}")
        if self.epoch_len is not None and self.epoch_len < 1:
            raise ValueError(f"epoch_len must be >= 1 or None, got {self.epoch_len}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")
        if self.family in _RANDOM_FAMILIES:
            if self.p is None:
                raise ValueError(f"family {self.family!r} requires an edge probability p")
            if not (0.0 <= self.p <= 1.0):
                raise ValueError(f"p must lie in [0, 1], got {self.p}")

    def epoch_of(self, n: int) -> int:
        if n < 0:
            raise ValueError(f"iteration index must be nonnegative, got {n}")
        if self.epoch_len is None:
            return 0
        return n // self.epoch_len

    def epoch_count(self, horizon: int) -> int:
        """Number of distinct epochs hit by iterations 0..horizon-1."""
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        if self.epoch_len is None:
            return 1
        return -(-horizon // self.epoch_len)


def _epoch_rng(schedule: NetworkSchedule, epoch: int) -> np.random.Generator:
    # Entropy namespaced under stream 0; dataset draws elsewhere use stream 1.
    return np.random.default_rng([schedule.seed, 0, epoch])


def _random_spanning_tree(rng: np.random.Generator, m: int) -> list[tuple[int, int]]:
    """Uniform random labeled tree via a Pruefer sequence."""
    if m == 2:
        return [(0, 1)]
    prufer = rng.integers(0, m, size=m - 2)
    degree = [1] * m
    for v in prufer:
        degree[v] += 1
    leaves = [i for i in range(m) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for v in prufer:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, int(v)))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, int(v))
    edges.append((heapq.heappop(leaves), heapq.heappop(leaves)))
    return edges


def _is_connected(m: int, edges: list[tuple[int, int]]) -> bool:
    uf = _UnionFind(m)
    for a, b in edges:
        uf.union(a, b)
    return uf.component_count() == 1


def _er_draw(rng: np.random.Generator, m: int, p: float) -> list[tuple[int, int]]:
    iu, ju = np.triu_indices(m, k=1)
    mask = rng.random(iu.shape[0]) < p
    return [(int(a), int(b)) for a, b in zip(iu[mask], ju[mask])]


def _connected_er(rng: np.random.Generator, m: int, p: float) -> list[tuple[int, int]]:
    """Erdos-Renyi draw, rejection-sampled for connectivity.

    After ``_ER_MAX_DRAWS`` failures the last draw is unioned with a random
    spanning tree, which forces connectivity without biasing dense regimes.
    """
    edges: list[tuple[int, int]] = []
    for _ in range(_ER_MAX_DRAWS):
        edges = _er_draw(rng, m, p)
        if _is_connected(m, edges):
            return edges
    tree = _random_spanning_tree(rng, m)
    merged = {(min(a, b), max(a, b)) for a, b in edges}
    merged.update((min(a, b), max(a, b)) for a, b in tree)
    return sorted(merged)


def _kruskal_mst(
    m: int, edges: list[tuple[int, int]], weights: np.ndarray
) -> list[tuple[int, int]]:
    order = np.argsort(weights, kind="stable")
    uf = _UnionFind(m)
    tree = []
    for idx in order:
        a, b = edges[idx]
        if uf.union(a, b):
            tree.append((a, b))
            if len(tree) == m - 1:
                break
    return tree


def _epoch_edges(schedule: NetworkSchedule, epoch: int) -> list[tuple[int, int]]:
    m = schedule.m
    if schedule.family == "complete":
        # Invariant under relabeling; no randomness consumed.
        return list(itertools.combinations(range(m), 2))
    rng = _epoch_rng(schedule, epoch)
    if schedule.family == "cycle":
        perm = rng.permutation(m)
        if m == 2:
            return [(int(perm[0]), int(perm[1]))]
        return [(int(perm[i]), int(perm[(i + 1) % m])) for i in range(m)]
    if schedule.family == "star":
        perm = rng.permutation(m)
        hub = int(perm[0])
        return [(hub, int(perm[i])) for i in range(1, m)]
    if schedule.family == "erdos_renyi":
        return _connected_er(rng, m, schedule.p)
    # mst_of_er: spanning tree of a connected ER draw under random weights.
    edges = _connected_er(rng, m, schedule.p)
    weights = rng.random(len(edges))
    return _kruskal_mst(m, edges, weights)


def laplacian_from_edges(m: int, edges) -> Laplacian:
    """Build the Laplacian D - A of an undirected simple graph.

    Rejects self-loops, duplicate or out-of-range edges, and disconnected
    graphs (a disconnected graph would give the Laplacian a kernel of
    dimension > 1, breaking the solver's consensus geometry).
    """
    if m < 1:
        raise ValueError(f"need m >= 1 nodes, got {m}")
    seen = set()
    for edge in edges:
        a, b = edge
        a, b = int(a), int(b)
        if not (0 <= a < m and 0 <= b < m):
            raise ValueError(f"edge {edge} out of range for m={m}")
        if a == b:
            raise ValueError(f"self-loop at node {a}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValueError(f"duplicate edge {key}")
        seen.add(key)
    uf = _UnionFind(m)
    for a, b in seen:
        uf.union(a, b)
    comps = uf.component_count()
    if comps != 1:
        raise DisconnectedGraphError(
            f"graph has {comps} components; Laplacian kernel dimension would "
            f"be {comps}, expected 1"
        )
    entries = np.zeros((m, m))
    for a, b in seen:
        entries[a, b] = entries[b, a] = -1.0
        entries[a, a] += 1.0
        entries[b, b] += 1.0
    entries.flags.writeable = False
    return Laplacian(m=m, entries=entries)


def schedule_laplacian(schedule: NetworkSchedule, n: int) -> Laplacian:
    """Laplacian in force at iteration n (constant within an epoch)."""
    epoch = schedule.epoch_of(n)
    return laplacian_from_edges(schedule.m, _epoch_edges(schedule, epoch))


def _positive_extremes(eigs: np.ndarray) -> tuple[float, float]:
    lam_max = float(eigs[-1])
    floor = _EIG_FLOOR * max(1.0, lam_max)
    if eigs[0] < -floor:
        raise ValueError(f"Laplacian has negative eigenvalue {eigs[0]}")
    if abs(eigs[0]) > floor:
        raise ValueError(f"Laplacian lost its zero eigenvalue: {eigs[0]}")
    lam_min_plus = float(eigs[1])
    if lam_min_plus <= floor:
        raise DisconnectedGraphError(
            f"second-smallest eigenvalue {lam_min_plus} is not positive; graph disconnected"
        )
    return lam_min_plus, lam_max


def spectral_bounds(schedule: NetworkSchedule, horizon: int) -> SpectralBounds:
    """Extreme eigenvalues over all epochs realized in iterations 0..horizon-1.

    The stacked block mixing matrix kron(W, I_d) shares W's eigenvalues (each
    with multiplicity d), so bounds computed on the m x m matrices apply to
    the stacked operator. For relabeled families one epoch suffices: the
    spectrum is permutation-invariant.
    """
    epochs = schedule.epoch_count(horizon)
    if schedule.family in _RELABEL_FAMILIES:
        epochs = 1
    lam_min_plus = math.inf
    lam_max = 0.0
    for epoch in range(epochs):
        lap = laplacian_from_edges(schedule.m, _epoch_edges(schedule, epoch))
        lo, hi = _positive_extremes(lap.eigenvalues())
        lam_min_plus = min(lam_min_plus, lo)
        lam_max = max(lam_max, hi)
    return SpectralBounds(lambda_min_plus=lam_min_plus, lambda_max=lam_max)


def apply_communication(lap: Laplacian, stack: np.ndarray) -> np.ndarray:
    """One communication round: mix an (m, d) node stack through ``lap``."""
    return lap.apply(stack)
