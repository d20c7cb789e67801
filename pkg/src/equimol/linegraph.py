"""Line graphs over molecular graphs: triplets, coordinate embeddings, and
the iterated hierarchy used for N-body directional aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DegenerateGeometryError, COINCIDENCE_TOL


class LineGraphError(Exception):
    pass


class EmptyLevelError(LineGraphError):
    """lift() called on a level with no edges."""


@dataclass
class TripletList:
    """Ordered pairs (b, a) of directed edges sharing a destination atom.

    With a = (j -> i) and b = (k -> i), j != k, the triplet carries messages
    from bond b to bond a.  rel_vec is the opposite-end vector
    r_kj = r_j - r_k, dist its length (always <= 2 * cutoff by the triangle
    inequality on two bonds within the cutoff).
    """

    edge_b: np.ndarray  # source bond index per triplet
    edge_a: np.ndarray  # destination bond index per triplet
    center: np.ndarray  # shared destination atom i per triplet
    rel_vec: np.ndarray  # (T, 3) r_j - r_k
    dist: np.ndarray  # (T,)

    @property
    def n_triplets(self):
        return self.edge_a.shape[0]


def build_triplets(graph):
    """All ordered pairs of distinct incoming edges per destination atom.

    Enumeration is deterministic: destinations in ascending order, then the
    destination bond a in incoming-edge order, then the source bond b.
    """
    edge_a, edge_b, center = [], [], []
    for i, inc in enumerate(graph.incoming):
        for a in inc:
            for b in inc:
                if a == b:
                    continue
                edge_a.append(a)
                edge_b.append(b)
                center.append(i)
    edge_a = np.asarray(edge_a, dtype=np.int64)
    edge_b = np.asarray(edge_b, dtype=np.int64)
    center = np.asarray(center, dtype=np.int64)
    pos = graph.molecule.positions
    if len(edge_a):
        j = graph.src[edge_a]
        k = graph.src[edge_b]
        rel = pos[j] - pos[k]
        dist = np.sqrt(np.einsum("tc,tc->t", rel, rel))
        if np.any(dist < COINCIDENCE_TOL):
            raise DegenerateGeometryError("triplet endpoints coincide")
    else:
        rel = np.zeros((0, 3))
        dist = np.zeros((0,))
    return TripletList(edge_b, edge_a, center, rel, dist)


@dataclass
class LineGraphLevel:
    """One level of the hierarchy G^(0) = G, G^(n+1) = L[G^(n)].

    Vertices carry 3D coordinate embeddings; edges are undirected pairs
    (u, v) with u < v, sorted lexicographically.
    """

    level: int
    n_vertices: int
    edges: list
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.shape != (self.n_vertices, 3):
            raise LineGraphError("coords shape must be (n_vertices, 3)")


def level_from_graph(graph):
    """Level 0: the molecular graph itself, with undirected bonds and atom
    positions as the coordinate embedding."""
    bonds = sorted({(min(j, i), max(j, i)) for j, i in zip(graph.src, graph.dst)})
    return LineGraphLevel(0, graph.molecule.n_atoms, bonds, graph.molecule.positions)


def level_from_edges(n_vertices, edges, coords, level=0):
    edges = sorted({(min(u, v), max(u, v)) for u, v in edges})
    for u, v in edges:
        if u == v or not (0 <= u < n_vertices and 0 <= v < n_vertices):
            raise LineGraphError(f"bad edge ({u}, {v})")
    return LineGraphLevel(level, n_vertices, edges, coords)


def lift(level):
    """One line-graph step: vertices become the edges of the input level,
    adjacent when the underlying edges share an endpoint; the coordinate
    embedding of a new vertex is the midpoint of its two endpoint embeddings.
    """
    if not level.edges:
        raise EmptyLevelError(f"level {level.level} has no edges to lift")
    old_edges = level.edges
    coords = 0.5 * (level.coords[[u for u, _ in old_edges]]
                    + level.coords[[v for _, v in old_edges]])
    # adjacency: two old edges share an endpoint
    by_endpoint = {}
    for idx, (u, v) in enumerate(old_edges):
        by_endpoint.setdefault(u, []).append(idx)
        by_endpoint.setdefault(v, []).append(idx)
    new_edges = set()
    for members in by_endpoint.values():
        for x in range(len(members)):
            for y in range(x + 1, len(members)):
                new_edges.add((members[x], members[y]))
    return LineGraphLevel(level.level + 1, len(old_edges), sorted(new_edges), coords)


def aggregate_directional(graph, bond_weights, triplet_weights=None, triplets=None):
    """Weighted directional aggregate per atom:

        sum_j w_j * r_ji  +  sum_{j<k} w_jk * (r_ji + r_ki)

    bond_weights has one scalar per directed edge; triplet_weights one scalar
    per unordered triplet, enumerated as the ordered triplets with
    edge_b < edge_a (ascending edge_a order within each destination).
    """
    bond_weights = np.asarray(bond_weights, dtype=np.float64)
    if bond_weights.shape != (graph.n_edges,):
        raise LineGraphError("need one weight per directed edge")
    n = graph.molecule.n_atoms
    out = np.zeros((n, 3))
    np.add.at(out, graph.dst, bond_weights[:, None] * graph.rel_vec)

    if triplet_weights is not None:
        if triplets is None:
            triplets = build_triplets(graph)
        mask = triplets.edge_b < triplets.edge_a
        a = triplets.edge_a[mask]
        b = triplets.edge_b[mask]
        ctr = triplets.center[mask]
        triplet_weights = np.asarray(triplet_weights, dtype=np.float64)
        if triplet_weights.shape != (a.shape[0],):
            raise LineGraphError(
                f"need one weight per unordered triplet ({a.shape[0]}), got {triplet_weights.shape}")
        both = graph.rel_vec[a] + graph.rel_vec[b]
        np.add.at(out, ctr, triplet_weights[:, None] * both)
    return out
