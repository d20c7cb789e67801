"""Helpers shared across test modules: random geometry, orthogonal matrices,
and the Lennard-Jones labeling oracle used by the overfit proxies."""

import numpy as np

from equimol.geometry import Molecule

# verdict lines registered by the acceptance tests; echoed after the run so
# they survive pytest's output capture
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


def rand_q(rng, reflect=False):
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q = q @ np.diag(np.sign(np.diag(r)))
    if reflect:
        q = q @ np.diag([1.0, 1.0, -1.0])
    return q


def random_molecule(rng, n, box=4.0, min_sep=0.7, z_max=9):
    pos = np.zeros((n, 3))
    placed = 0
    while placed < n:
        cand = rng.uniform(-box / 2, box / 2, size=3)
        if placed == 0 or np.min(np.linalg.norm(pos[:placed] - cand, axis=1)) > min_sep:
            pos[placed] = cand
            placed += 1
    z = rng.integers(1, z_max + 1, size=n)
    return Molecule(atomic_numbers=z, positions=pos)


def lj_labels(positions, eps=0.25, sigma=1.2):
    """Pairwise 12-6 energy and analytic forces."""
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    energy = 0.0
    forces = np.zeros((n, 3))
    for i in range(n):
        for j in range(i + 1, n):
            vec = positions[i] - positions[j]
            r = np.linalg.norm(vec)
            sr6 = (sigma / r) ** 6
            sr12 = sr6 * sr6
            energy += 4.0 * eps * (sr12 - sr6)
            dedr = 4.0 * eps * (-12.0 * sr12 + 6.0 * sr6) / r
            f = -dedr * vec / r
            forces[i] += f
            forces[j] -= f
    return energy, forces


LJ_BASE = np.array([
    [0.00, 0.00, 0.00],
    [1.45, 0.00, 0.00],
    [0.70, 1.30, 0.00],
    [0.72, 0.45, 1.25],
    [2.10, 1.15, 0.65],
])

LJ_SPECIES = np.array([6, 1, 1, 8, 1])


def make_lj_dataset(n_conformers=50, seed=0, jitter=0.08, shuffle_labels=False):
    """Conformers of one 5-atom system with LJ labels, energies mean-centered.

    shuffle_labels permutes the label set relative to the geometries, which
    destroys the signal while preserving the label distribution."""
    rng = np.random.default_rng(seed)
    frames = [LJ_BASE + rng.normal(0.0, jitter, size=LJ_BASE.shape)
              for _ in range(n_conformers)]
    labels = [lj_labels(f) for f in frames]
    energies = np.array([e for e, _ in labels])
    energies -= energies.mean()
    forces = [f for _, f in labels]
    if shuffle_labels:
        perm = rng.permutation(n_conformers)
        energies = energies[perm]
        forces = [forces[k] for k in perm]
    return [Molecule(LJ_SPECIES.copy(), frames[i],
                     energy=float(energies[i]), forces=forces[i])
            for i in range(n_conformers)]
