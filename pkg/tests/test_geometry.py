import numpy as np
import pytest

from equimol.geometry import (
    DegenerateGeometryError,
    GeometryError,
    Molecule,
    build_graph,
    relative_direction,
)


def random_molecule(rng, n, box=4.0, min_sep=0.6):
    # rejection-sample positions so no pair is closer than min_sep
    pos = []
    while len(pos) < n:
        p = rng.uniform(0, box, size=3)
        if all(np.linalg.norm(p - q) >= min_sep for q in pos):
            pos.append(p)
    z = rng.integers(1, 9, size=n)
    return Molecule(z, np.array(pos))


def test_molecule_validation():
    with pytest.raises(GeometryError):
        Molecule(np.array([], dtype=int), np.zeros((0, 3)))
    with pytest.raises(GeometryError):
        Molecule([1, 1], [[0.0, 0.0, 0.0]])
    with pytest.raises(GeometryError):
        Molecule([1], [[np.inf, 0.0, 0.0]])
    with pytest.raises(GeometryError):
        Molecule([0], [[0.0, 0.0, 0.0]])
    with pytest.raises(GeometryError):
        Molecule([1, 1], np.zeros((2, 3)) + [[0, 0, 0], [1, 0, 0]], forces=np.zeros((3, 3)))


def test_two_atoms_within_cutoff():
    mol = Molecule([1, 1], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    g = build_graph(mol, cutoff=5.0)
    assert g.n_edges == 2
    assert np.allclose(g.dist, [1.0, 1.0])
    # edge (j=1 -> i=0) has rel_vec r_0 - r_1
    k = int(np.argwhere(g.dst == 0)[0, 0])
    assert np.allclose(g.rel_vec[k], [-1.0, 0.0, 0.0])


def test_two_atoms_beyond_cutoff():
    mol = Molecule([1, 1], [[0.0, 0.0, 0.0], [6.0, 0.0, 0.0]])
    g = build_graph(mol, cutoff=5.0)
    assert g.n_edges == 0


def test_coincident_atoms_rejected():
    mol = Molecule([1, 1], [[0.0, 0.0, 0.0], [0.0, 0.0, 5e-13]])
    with pytest.raises(DegenerateGeometryError):
        build_graph(mol)


def test_edges_match_all_pairs_oracle():
    rng = np.random.default_rng(11)
    mol = random_molecule(rng, 20, box=8.0)
    cutoff = 3.5
    g = build_graph(mol, cutoff=cutoff, n_max=32)
    got = set(zip(g.src.tolist(), g.dst.tolist()))
    expected = set()
    for i in range(20):
        for j in range(20):
            if i != j and np.linalg.norm(mol.positions[i] - mol.positions[j]) <= cutoff:
                expected.add((j, i))
    assert got == expected
    # distances and rel_vec agree with direct computation
    for e in range(g.n_edges):
        r = mol.positions[g.dst[e]] - mol.positions[g.src[e]]
        assert np.allclose(g.rel_vec[e], r)
        assert g.dist[e] == pytest.approx(np.linalg.norm(r))


def test_n_max_truncation_keeps_nearest():
    # one center with 5 neighbors at increasing distance, n_max=3
    pos = [[0.0, 0.0, 0.0]]
    for k in range(5):
        pos.append([1.0 + 0.1 * k, 0.0, 0.0])
    mol = Molecule([6] * 6, pos)
    g = build_graph(mol, cutoff=5.0, n_max=3)
    into_center = g.src[g.dst == 0]
    assert list(into_center) == [1, 2, 3]
    assert all(len(g.incoming[i]) <= 3 for i in range(6))


def test_n_max_tie_broken_by_atom_index():
    # two neighbors at exactly the same distance; smaller index wins
    mol = Molecule([6, 1, 1, 1], [[0.0, 0.0, 0.0],
                                  [1.0, 0.0, 0.0],
                                  [0.0, 1.0, 0.0],
                                  [0.0, 0.0, 1.0]])
    g = build_graph(mol, cutoff=5.0, n_max=2)
    assert list(g.src[g.dst == 0]) == [1, 2]


def test_deterministic_edge_ordering():
    rng = np.random.default_rng(12)
    mol = random_molecule(rng, 10)
    g1 = build_graph(mol)
    g2 = build_graph(mol)
    assert np.array_equal(g1.src, g2.src) and np.array_equal(g1.dst, g2.dst)
    # grouped by destination, ascending
    assert np.all(np.diff(g1.dst) >= 0)
    for i in range(mol.n_atoms):
        dmask = g1.dst == i
        assert np.all(np.diff(g1.dist[dmask]) >= 0)


def test_translation_leaves_graph_unchanged():
    rng = np.random.default_rng(13)
    mol = random_molecule(rng, 12)
    g = build_graph(mol)
    gt = build_graph(mol.transformed(t=[10.0, -3.0, 0.5]))
    assert np.array_equal(g.src, gt.src)
    assert np.array_equal(g.dst, gt.dst)
    assert np.allclose(g.rel_vec, gt.rel_vec, atol=1e-12)
    assert np.allclose(g.dist, gt.dist, atol=1e-12)


def test_rotation_rotates_rel_vec():
    rng = np.random.default_rng(14)
    mol = random_molecule(rng, 12)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    g = build_graph(mol)
    gq = build_graph(mol.transformed(q=q))
    assert np.array_equal(g.src, gq.src)
    assert np.allclose(g.dist, gq.dist, atol=1e-10)
    assert np.allclose(gq.rel_vec, g.rel_vec @ q.T, atol=1e-10)


def test_edge_count_bound():
    rng = np.random.default_rng(15)
    mol = random_molecule(rng, 15, box=3.0)
    g = build_graph(mol, cutoff=6.0, n_max=4)
    assert g.n_edges <= mol.n_atoms * 4


def test_relative_direction_unit():
    mol = Molecule([1, 1], [[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
    g = build_graph(mol)
    u = relative_direction(g)
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)
    k = int(np.argwhere(g.dst == 1)[0, 0])
    assert np.allclose(u[k], [0.0, 0.0, 1.0])
    k34 = Molecule([1, 1], [[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]])
    u2 = relative_direction(build_graph(k34))
    assert np.allclose(sorted(np.abs(u2[:, 0])), [0.6, 0.6])
    assert np.allclose(sorted(np.abs(u2[:, 1])), [0.8, 0.8])


def test_permutation_relabels_consistently():
    rng = np.random.default_rng(16)
    mol = random_molecule(rng, 8)
    perm = rng.permutation(8)
    g = build_graph(mol)
    gp = build_graph(mol.permuted(perm))
    # same multiset of distances regardless of labeling
    assert np.allclose(np.sort(g.dist), np.sort(gp.dist), atol=1e-12)
