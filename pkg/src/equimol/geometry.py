"""Molecules and cutoff-based directed molecular graphs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_CUTOFF = 5.0
DEFAULT_MAX_NEIGHBORS = 32

COINCIDENCE_TOL = 1e-12


class GeometryError(Exception):
    pass


class DegenerateGeometryError(GeometryError):
    """Two atoms (or triplet endpoints) coincide within tolerance."""


@dataclass
class Molecule:
    """Atomic numbers, positions in Angstrom, and optional labels."""

    atomic_numbers: np.ndarray
    positions: np.ndarray
    energy: float | None = None
    forces: np.ndarray | None = None
    polarizability: np.ndarray | None = None

    def __post_init__(self):
        self.atomic_numbers = np.asarray(self.atomic_numbers, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        n = self.atomic_numbers.shape[0]
        if n < 1:
            raise GeometryError("molecule needs at least one atom")
        if self.positions.shape != (n, 3):
            raise GeometryError(f"positions shape {self.positions.shape} != ({n}, 3)")
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("positions must be finite")
        if np.any(self.atomic_numbers < 1):
            raise GeometryError("atomic numbers must be positive")
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64)
            if self.forces.shape != (n, 3):
                raise GeometryError("forces shape must match positions")
        if self.polarizability is not None:
            self.polarizability = np.asarray(self.polarizability, dtype=np.float64)
            if self.polarizability.shape != (3, 3):
                raise GeometryError("polarizability must be 3x3")

    @property
    def n_atoms(self):
        return self.atomic_numbers.shape[0]

    def transformed(self, q=None, t=None):
        """Copy with positions mapped to positions @ q.T + t (labels co-transform)."""
        pos = self.positions
        forces = self.forces
        alpha = self.polarizability
        if q is not None:
            q = np.asarray(q, dtype=np.float64)
            pos = pos @ q.T
            if forces is not None:
                forces = forces @ q.T
            if alpha is not None:
                alpha = q @ alpha @ q.T
        if t is not None:
            pos = pos + np.asarray(t, dtype=np.float64)
        return Molecule(self.atomic_numbers.copy(), pos, self.energy, forces, alpha)

    def permuted(self, perm):
        """Copy with atoms reordered: new atom p is old atom perm[p]."""
        perm = np.asarray(perm)
        forces = self.forces[perm] if self.forces is not None else None
        return Molecule(self.atomic_numbers[perm], self.positions[perm],
                        self.energy, forces, self.polarizability)


@dataclass
class MolecularGraph:
    """Directed edges (src j -> dst i) with rel_vec = r_i - r_j.

    Edges are grouped by destination atom in ascending order; within one
    destination they are sorted by distance, ties broken by source index.
    """

    molecule: Molecule
    src: np.ndarray
    dst: np.ndarray
    rel_vec: np.ndarray
    dist: np.ndarray
    cutoff: float = DEFAULT_CUTOFF
    n_max: int = DEFAULT_MAX_NEIGHBORS
    # incoming edge indices per atom, in edge order
    incoming: list = field(default_factory=list, repr=False)

    @property
    def n_edges(self):
        return self.src.shape[0]


def build_graph(mol, cutoff=DEFAULT_CUTOFF, n_max=DEFAULT_MAX_NEIGHBORS):
    """Neighbor-list graph: each atom receives edges from its up-to-n_max
    nearest neighbors within the cutoff."""
    if cutoff <= 0:
        raise GeometryError("cutoff must be positive")
    if n_max < 1:
        raise GeometryError("n_max must be at least 1")
    pos = mol.positions
    n = mol.n_atoms
    diff = pos[None, :, :] - pos[:, None, :]
    d = np.sqrt(np.einsum("ijc,ijc->ij", diff, diff))
    off_diag = ~np.eye(n, dtype=bool)
    if n > 1 and np.any(d[off_diag] < COINCIDENCE_TOL):
        i, j = np.argwhere((d < COINCIDENCE_TOL) & off_diag)[0]
        raise DegenerateGeometryError(f"atoms {i} and {j} coincide")

    src, dst = [], []
    incoming = []
    for i in range(n):
        cand = [j for j in range(n) if j != i and d[i, j] <= cutoff]
        cand.sort(key=lambda j: (d[i, j], j))
        cand = cand[:n_max]
        start = len(src)
        for j in cand:
            src.append(j)
            dst.append(i)
        incoming.append(list(range(start, len(src))))

    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    rel = pos[dst] - pos[src] if len(src) else np.zeros((0, 3))
    dist = np.sqrt(np.einsum("ec,ec->e", rel, rel)) if len(src) else np.zeros((0,))
    return MolecularGraph(mol, src, dst, rel, dist, cutoff, n_max, incoming)


def graph_from_edges(mol, edges, cutoff=DEFAULT_CUTOFF, n_max=DEFAULT_MAX_NEIGHBORS):
    """Build a MolecularGraph from an explicit directed edge list.

    Used by fixtures whose topology is not a cutoff graph (e.g. a star whose
    leaves are mutually within the cutoff).  Edges are (src, dst) pairs and
    are re-grouped by destination to keep the standard ordering.
    """
    edges = [(int(j), int(i)) for j, i in edges]
    for j, i in edges:
        if j == i or not (0 <= j < mol.n_atoms and 0 <= i < mol.n_atoms):
            raise GeometryError(f"bad edge ({j}, {i})")
    pos = mol.positions
    order = sorted(range(len(edges)),
                   key=lambda e: (edges[e][1],
                                  float(np.linalg.norm(pos[edges[e][1]] - pos[edges[e][0]])),
                                  edges[e][0]))
    edges = [edges[e] for e in order]
    src = np.asarray([j for j, _ in edges], dtype=np.int64)
    dst = np.asarray([i for _, i in edges], dtype=np.int64)
    rel = pos[dst] - pos[src] if len(edges) else np.zeros((0, 3))
    dist = np.sqrt(np.einsum("ec,ec->e", rel, rel)) if len(edges) else np.zeros((0,))
    if np.any(dist < COINCIDENCE_TOL) and len(edges):
        raise DegenerateGeometryError("zero-length edge in explicit edge list")
    incoming = [[] for _ in range(mol.n_atoms)]
    for e, i in enumerate(dst):
        incoming[i].append(e)
    return MolecularGraph(mol, src, dst, rel, dist, cutoff, n_max, incoming)


def relative_direction(graph):
    """Per-edge unit vectors rel_vec / dist."""
    if np.any(graph.dist <= 0):
        raise DegenerateGeometryError("zero-length edge")
    return graph.rel_vec / graph.dist[:, None]
