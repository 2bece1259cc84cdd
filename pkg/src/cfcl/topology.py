"""Device communication graphs."""
import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform


class TopologyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Topology:
    n: int
    adjacency: np.ndarray  # symmetric boolean (n, n)
    positions: Optional[np.ndarray] = None
    radius: Optional[float] = None

    @classmethod
    def from_positions(cls, positions, radius):
        positions = np.asarray(positions, dtype=float)
        D = squareform(pdist(positions))
        adj = D <= radius
        np.fill_diagonal(adj, False)
        return cls(len(positions), adj, positions, float(radius))

    @classmethod
    def from_adjacency(cls, adjacency_list, n=None):
        """Build from ``{node: [neighbors]}`` or a list of neighbor lists."""
        if isinstance(adjacency_list, dict):
            items = {int(k): list(v) for k, v in adjacency_list.items()}
        else:
            items = {i: list(v) for i, v in enumerate(adjacency_list)}
        if n is None:
            n = max([k for k in items] + [j for v in items.values() for j in v]) + 1
        adj = np.zeros((n, n), dtype=bool)
        for i, nbrs in items.items():
            for j in nbrs:
                if not (0 <= i < n and 0 <= j < n):
                    raise TopologyError(f"edge ({i}, {j}) outside 0..{n - 1}")
                if i == j:
                    raise TopologyError(f"self loop at {i}")
                adj[i, j] = adj[j, i] = True
        return cls(n, adj)

    @property
    def edges(self):
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def average_degree(self):
        return float(self.adjacency.sum()) / self.n

    def is_connected(self):
        return connected_components(self.adjacency, directed=False)[0] == 1

    def write_edges_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["i", "j"])
            w.writerows(self.edges)


def neighbors(topology, i):
    if not 0 <= i < topology.n:
        raise IndexError(f"device id {i} out of range 0..{topology.n - 1}")
    return set(np.flatnonzero(topology.adjacency[i]).tolist())


def _radius_for_degree(dists, n, target):
    # smallest sorted pairwise distance whose graph reaches the target degree
    lo, hi = 0, len(dists) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if 2.0 * np.count_nonzero(dists <= dists[mid]) / n >= target:
            hi = mid
        else:
            lo = mid + 1
    return float(dists[lo])


def generate_rgg(n, target_avg_degree, rng, tolerance=0.5, max_retries=100):
    """Random geometric graph in the unit square, connected, with average
    degree within ``tolerance`` of the target."""
    if n < 2:
        raise ValueError("need at least two devices")
    if not 0 < target_avg_degree <= n - 1:
        raise ValueError(f"target degree must lie in (0, {n - 1}]")
    for _ in range(max_retries):
        pos = rng.random((n, 2))
        dists = np.sort(pdist(pos))
        r = _radius_for_degree(dists, n, target_avg_degree)
        topo = Topology.from_positions(pos, r)
        if abs(topo.average_degree - target_avg_degree) <= tolerance and topo.is_connected():
            return topo
    raise TopologyError(f"no connected RGG with degree {target_avg_degree}±{tolerance} in {max_retries} tries")
