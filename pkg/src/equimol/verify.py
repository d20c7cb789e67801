"""Executable checks of the model's symmetry claims: orthogonal-transform
certification, finite-difference force validation, an independent line-graph
oracle, and the two-fixture angle-separability demonstration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import Molecule, build_graph, graph_from_edges
from .linegraph import level_from_edges, lift
from . import model as md

MODES = ("rotation", "reflection", "mixed")


class VerifyError(Exception):
    pass


@dataclass
class OrthogonalSampler:
    """Random O(3) matrices by orthonormalizing a Gaussian 3x3.

    mixed mode alternates determinant sign, so any run of 2k draws contains
    exactly k reflections."""

    seed: int = 0
    mode: str = "mixed"

    def __post_init__(self):
        if self.mode not in MODES:
            raise VerifyError(f"mode must be one of {MODES}")
        self._rng = np.random.default_rng(self.seed)
        self._count = 0

    def sample(self):
        m = self._rng.normal(size=(3, 3))
        q, r = np.linalg.qr(m)
        q = q @ np.diag(np.sign(np.diag(r)))
        if np.linalg.det(q) < 0:
            q = q @ np.diag([1.0, 1.0, -1.0])  # canonicalize to a rotation
        if self.mode == "reflection" or (self.mode == "mixed" and self._count % 2):
            q = q @ np.diag([1.0, 1.0, -1.0])
        self._count += 1
        return q

    def take(self, n):
        return [self.sample() for _ in range(n)]


@dataclass(eq=False)
class Fixture:
    """Named geometry with an explicit directed edge list (the star graphs
    are not realizable through a distance cutoff: every atom pair is within
    range, so the topology is pinned by hand)."""

    name: str
    molecule: Molecule
    edges: tuple

    def graph(self, cutoff=5.0, n_max=32):
        return graph_from_edges(self.molecule, list(self.edges), cutoff, n_max)


_SQ3 = np.sqrt(3.0)


def _star(name, outer):
    positions = np.vstack([np.zeros(3), np.asarray(outer, dtype=np.float64)])
    z = np.full(len(positions), 6)
    edges = tuple((j, 0) for j in range(1, len(positions)))
    return Fixture(name, Molecule(z, positions), edges)


FIXTURES = {
    # center i with bonds to j, k collinear and m at the probed angle
    "fig1a_collinear_90": _star("fig1a_collinear_90",
                                [[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]]),
    "fig1a_collinear_60": _star("fig1a_collinear_60",
                                [[1.0, 0, 0], [-1.0, 0, 0], [0.5, _SQ3 / 2, 0]]),
    # three unit bonds at 120 degrees in the xy plane plus one out of plane
    "fig1b_trigonal": _star("fig1b_trigonal",
                            [[1.0, 0, 0], [-0.5, _SQ3 / 2, 0],
                             [-0.5, -_SQ3 / 2, 0], [0, 0, 1.0]]),
    "path4_dihedral": Fixture(
        "path4_dihedral",
        Molecule(np.full(4, 6), np.array([
            [-0.5, _SQ3 / 2, 0.0],
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.5, _SQ3 / 4, 0.75],
        ])),
        ((0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2))),
}

KINDS = ("scalar", "vector", "rank2")


@dataclass
class CertificationReport:
    name: str
    kind: str
    trials: int
    tol: float
    max_deviation: float
    worst_trial: int
    passed: bool

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "trials": self.trials,
                "tol": self.tol, "max_deviation": self.max_deviation,
                "worst_trial": self.worst_trial, "passed": self.passed}

    def __str__(self):
        mark = "PASS" if self.passed else "FAIL"
        return (f"[{mark}] {self.name} ({self.kind}): max deviation "
                f"{self.max_deviation:.3e} over {self.trials} trials "
                f"(tol {self.tol:.1e}, worst trial {self.worst_trial})")


def _deviation(kind, out, ref, q):
    if kind == "scalar":
        expected = ref
    elif kind == "vector":
        expected = ref @ q.T
    else:
        expected = q @ ref @ q.T
    denom = max(np.max(np.abs(ref)), np.max(np.abs(out)), 1e-30)
    return np.max(np.abs(out - expected)) / denom


def certify_equivariance(f, kind, molecules, qs, tol=1e-10, translations=None,
                         name="equivariance"):
    """Worst relative deviation of f over all (Q, molecule) trials.

    Trial t transforms molecules[t % len(molecules)] by qs[t] (plus the
    optional translation), so every molecule and every Q is exercised."""
    if kind not in KINDS:
        raise VerifyError(f"kind must be one of {KINDS}")
    base = [np.asarray(f(m), dtype=np.float64) for m in molecules]
    worst = -1.0
    worst_trial = -1
    for t, q in enumerate(qs):
        mol = molecules[t % len(molecules)]
        shift = translations[t] if translations is not None else np.zeros(3)
        out = np.asarray(f(mol.transformed(q, shift)), dtype=np.float64)
        dev = _deviation(kind, out, base[t % len(molecules)], q)
        if dev > worst:
            worst = dev
            worst_trial = t
    return CertificationReport(name, kind, len(qs), tol, float(worst),
                               worst_trial, bool(worst < tol))


def certify_invariance(f, molecules, rng, trials=100, tol=1e-10,
                       name="relabeling"):
    """Scalar invariance under random permutations plus translations."""
    base = [np.asarray(f(m), dtype=np.float64) for m in molecules]
    worst = -1.0
    worst_trial = -1
    for t in range(trials):
        i = t % len(molecules)
        mol = molecules[i]
        perm = rng.permutation(mol.n_atoms)
        shift = rng.normal(scale=5.0, size=3)
        out = np.asarray(f(mol.permuted(perm).transformed(np.eye(3), shift)),
                         dtype=np.float64)
        denom = max(np.max(np.abs(base[i])), np.max(np.abs(out)), 1e-30)
        dev = np.max(np.abs(out - base[i])) / denom
        if dev > worst:
            worst = dev
            worst_trial = t
    return CertificationReport(name, "scalar", trials, tol, float(worst),
                               worst_trial, bool(worst < tol))


def sample_molecules(rng, count=20, n_atoms=(3, 20), box=6.0, min_sep=0.7):
    mols = []
    for _ in range(count):
        n = int(rng.integers(n_atoms[0], n_atoms[1] + 1))
        pos = np.zeros((n, 3))
        placed = 0
        while placed < n:
            cand = rng.uniform(-box / 2, box / 2, size=3)
            if placed == 0 or np.min(np.linalg.norm(pos[:placed] - cand, axis=1)) > min_sep:
                pos[placed] = cand
                placed += 1
        mols.append(Molecule(rng.integers(1, 10, size=n), pos))
    return mols


def scalar_head(cfg, params, broken=False):
    bias = np.array([0.05, -0.02, 0.03]) if broken else None
    return lambda mol: md.forward(mol, cfg, params, _vector_bias=bias).pooled_s.data.copy()


def vector_head(cfg, params, broken=False):
    bias = np.array([0.05, -0.02, 0.03]) if broken else None
    return lambda mol: md.forward(mol, cfg, params, _vector_bias=bias).pooled_v.data.copy()


def tensor_head(cfg, params):
    return lambda mol: md.forward(mol, cfg, params).alpha.data.copy()


def certify_model(cfg, params, trials=100, seed=0, tol=1e-10, molecules=None,
                  broken=False):
    """The full certification battery for one parameter set: scalar and
    vector heads under mixed O(3) with translations, scalars under
    relabeling, and the rank-2 head when the config carries one."""
    rng = np.random.default_rng(seed)
    if molecules is None:
        molecules = sample_molecules(rng)
    sampler = OrthogonalSampler(seed=seed + 1, mode="mixed")
    qs = sampler.take(trials)
    shifts = rng.normal(scale=5.0, size=(trials, 3))
    reports = [
        certify_equivariance(scalar_head(cfg, params, broken), "scalar",
                             molecules, qs, tol, shifts, name="pooled_scalar"),
        certify_equivariance(vector_head(cfg, params, broken), "vector",
                             molecules, qs, tol, shifts, name="pooled_vector"),
        certify_invariance(scalar_head(cfg, params, broken), molecules,
                           np.random.default_rng(seed + 2), trials, tol,
                           name="pooled_scalar_relabels"),
    ]
    if cfg.head == "polarizability":
        reports.append(certify_equivariance(
            tensor_head(cfg, params), "rank2", molecules, qs, tol, shifts,
            name="polarizability"))
    return reports


def check_forces(molecules, cfg, params, step=1e-4, rtol=1e-5, atol=1e-7,
                 net_tol=1e-8):
    """Analytic forces against central finite differences of the energy,
    plus the zero-net-force identity."""
    worst_rel = 0.0
    worst_net = 0.0
    for mol in molecules:
        _, forces = md.energy_and_forces(mol, cfg, params)
        worst_net = max(worst_net, float(np.linalg.norm(forces.sum(axis=0))))
        for i in range(mol.n_atoms):
            for k in range(3):
                plus = mol.positions.copy()
                minus = mol.positions.copy()
                plus[i, k] += step
                minus[i, k] -= step
                ep = md.forward(Molecule(mol.atomic_numbers, plus), cfg,
                                params).pooled_s.item()
                em = md.forward(Molecule(mol.atomic_numbers, minus), cfg,
                                params).pooled_s.item()
                numeric = -(ep - em) / (2 * step)
                err = abs(forces[i, k] - numeric)
                scale = max(abs(numeric), abs(forces[i, k]), atol / rtol)
                worst_rel = max(worst_rel, err / scale)
    return {
        "max_relative_deviation": worst_rel,
        "max_net_force": worst_net,
        "rtol": rtol,
        "net_tol": net_tol,
        "passed": bool(worst_rel < rtol and worst_net < net_tol),
    }


def gradcheck_model(cfg, params, seed=0, step=1e-5, rtol=1e-6, atol=1e-9):
    """Finite-difference check of the tape gradients through the full model,
    with respect to positions and the triplet radial weights."""
    rng = np.random.default_rng(seed)
    mols = sample_molecules(rng, count=1, n_atoms=(3, 4), box=3.0)
    mol = mols[0]
    graph = build_graph(mol, cfg.r_c, cfg.n_max)
    pos = Tensor(mol.positions.copy(), requires_grad=True)

    def f(p, w_t):
        params.w_t = w_t
        return md.scalar_output(md.forward(mol, cfg, params, graph=graph,
                                           positions=p))

    return ad.gradcheck(f, [pos, params.w_t], step=step, rtol=rtol, atol=atol)


def linegraph_oracle(n_vertices, edges):
    """Brute-force line graph, independent of the production construction:
    vertices are the sorted undirected edges, joined when they share an
    endpoint."""
    verts = sorted({(min(u, v), max(u, v)) for u, v in edges})
    lg_edges = [(i, j) for i, j in combinations(range(len(verts)), 2)
                if set(verts[i]) & set(verts[j])]
    return verts, lg_edges


def compare_linegraph(n_vertices, edges, coords, depth=2):
    """Exact agreement between lift() and the oracle at every depth."""
    level = level_from_edges(n_vertices, list(edges), np.asarray(coords, dtype=np.float64))
    oracle_edges = [tuple(e) for e in level.edges]
    oracle_n = level.n_vertices
    for _ in range(depth):
        if not oracle_edges:
            # previous comparison already agreed on emptiness; nothing to lift
            return True
        verts, lg_edges = linegraph_oracle(oracle_n, oracle_edges)
        level = lift(level)
        if level.n_vertices != len(verts):
            return False
        if sorted(tuple(e) for e in level.edges) != sorted(lg_edges):
            return False
        oracle_n, oracle_edges = len(verts), lg_edges
    return True


def fig1_separability(variant, n_seeds=100, d=16, d_t=2, n_blocks=2, n_bf=6,
                      tol_identical=1e-12, tol_separate=1e-6):
    """Angle separability on the Fig-style star fixtures.

    bond_only: the 90/60 pair must be indistinguishable in every pooled
    scalar, and the trigonal fixture's pooled vector must stay collinear
    with the out-of-plane bond.  with_triplets: the pair must separate for
    nearly every random initialization."""
    if variant not in ("bond_only", "with_triplets"):
        raise VerifyError("variant must be bond_only or with_triplets")
    cfg = md.ModelConfig(d=d, d_t=d_t, n_blocks=n_blocks, n_bf=n_bf,
                         use_triplets=variant == "with_triplets")
    fx90 = FIXTURES["fig1a_collinear_90"]
    fx60 = FIXTURES["fig1a_collinear_60"]
    fxb = FIXTURES["fig1b_trigonal"]
    g90, g60, gb = fx90.graph(), fx60.graph(), fxb.graph()
    m_bond = fxb.molecule.positions[4] - fxb.molecule.positions[0]

    max_pair = 0.0
    max_sin = 0.0
    n_separated = 0
    diffs = []
    for seed in range(n_seeds):
        params = md.init_params(cfg, seed=seed)
        o90 = md.forward(fx90.molecule, cfg, params, graph=g90)
        o60 = md.forward(fx60.molecule, cfg, params, graph=g60)
        s_diff = abs(o90.pooled_s.item() - o60.pooled_s.item())
        vnorm_diff = abs(np.linalg.norm(o90.pooled_v.data)
                         - np.linalg.norm(o60.pooled_v.data))
        scale = max(1.0, abs(o90.pooled_s.item()))
        diff = max(s_diff, vnorm_diff)
        diffs.append(diff)
        if variant == "bond_only":
            max_pair = max(max_pair, diff / scale)
            ob = md.forward(fxb.molecule, cfg, params, graph=gb)
            v = ob.pooled_v.data.reshape(3)
            norm = np.linalg.norm(v)
            if norm > 1e-30:
                sin = np.linalg.norm(np.cross(v, m_bond)) / (norm * np.linalg.norm(m_bond))
                max_sin = max(max_sin, sin)
        else:
            if diff > tol_separate:
                n_separated += 1

    if variant == "bond_only":
        return {
            "variant": variant,
            "seeds": n_seeds,
            "max_pair_deviation": max_pair,
            "max_offaxis_sine": max_sin,
            "tol": tol_identical,
            "passed": bool(max_pair < tol_identical and max_sin < tol_identical),
            "verdict": "indistinguishable" if max_pair < tol_identical else "distinguishable",
        }
    return {
        "variant": variant,
        "seeds": n_seeds,
        "n_separated": n_separated,
        "min_difference": float(min(diffs)),
        "tol": tol_separate,
        "passed": bool(n_separated >= int(0.95 * n_seeds)),
        "verdict": "distinguishable" if n_separated >= int(0.95 * n_seeds) else "indistinguishable",
    }


def fig1_aggregate_vectors(theta_name="fig1a_collinear_90"):
    """Plain sum of unit bond vectors into the center atom of a fixture;
    the quantity Fig-style diagrams read off directly."""
    fx = FIXTURES[theta_name]
    graph = fx.graph()
    center = 0
    mask = graph.dst == center
    units = graph.rel_vec[mask] / graph.dist[mask][:, None]
    return units.sum(axis=0)


def write_verdict(path, reports):
    """Machine-readable JSON verdict file from a list of reports (dataclass
    reports or plain dicts)."""
    payload = []
    for r in reports:
        payload.append(r.to_dict() if hasattr(r, "to_dict") else r)
    doc = {"passed": all(p.get("passed", False) for p in payload),
           "reports": payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc
