"""Initial invariant/equivariant features for atoms, bonds, and triplets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

Z_TABLE_SIZE = 100


class FeaturizeError(Exception):
    pass


class UnknownElementError(FeaturizeError):
    pass


@dataclass
class RadialBasisConfig:
    """Gaussian centers evenly spaced on [0, mu_max]."""

    n_bf: int = 20
    mu_max: float = 5.0
    sigma: float | None = None
    r_c: float = 5.0

    def __post_init__(self):
        if self.n_bf < 2:
            raise FeaturizeError("need at least two basis functions")
        if self.sigma is None:
            # width equal to the center spacing gives smooth overlap
            self.sigma = self.mu_max / (self.n_bf - 1)
        if self.sigma <= 0:
            raise FeaturizeError("sigma must be positive")

    @property
    def centers(self):
        return np.linspace(0.0, self.mu_max, self.n_bf)


@dataclass
class FeatureState:
    """Scalar (invariant) and vector (equivariant) features per entity."""

    node_s: ad.Tensor  # (N, d)
    node_v: ad.Tensor  # (N, d, 3)
    edge_s: ad.Tensor  # (E, d)
    edge_v: ad.Tensor  # (E, d, 3)
    tri_s: ad.Tensor  # (T, d_t)
    tri_v: ad.Tensor  # (T, d_t, 3)


def cosine_cutoff(x, r_c):
    """0.5 * (1 + cos(pi x / r_c)) inside the cutoff, 0 beyond it.

    Continuous and once-differentiable at x = r_c, so features built from it
    vanish smoothly with finite position gradients.
    """
    x = ad.as_tensor(x)
    inside = x.data <= r_c
    val = ad.mul(ad.add(ad.cos(ad.mul(x, np.pi / r_c)), 1.0), 0.5)
    return ad.where(inside, val, ad.constant(np.zeros_like(x.data)))


def gaussian_expand(dist, cfg):
    """Component m = exp(-(d - mu_m)^2 / (2 sigma^2)), shape (E, n_bf)."""
    dist = ad.as_tensor(dist)
    mu = ad.constant(cfg.centers[None, :])
    diff = ad.sub(ad.reshape(dist, (dist.shape[0], 1)), mu)
    return ad.exp(ad.mul(ad.mul(diff, diff), -1.0 / (2.0 * cfg.sigma ** 2)))


def init_node(atomic_numbers, w_z):
    """h0 = embedding-table row per atomic number; vector features start at
    exactly zero."""
    z = np.asarray(atomic_numbers)
    n_rows = w_z.shape[0]
    if np.any(z < 1) or np.any(z > n_rows):
        bad = z[(z < 1) | (z > n_rows)][0]
        raise UnknownElementError(f"atomic number {bad} outside embedding table (1..{n_rows})")
    h0 = ad.gather(w_z, z - 1)
    hv0 = ad.constant(np.zeros((z.shape[0], w_z.shape[1], 3)))
    return h0, hv0


def _init_expanded(dist, unit_vec, cfg, weight):
    # shared by edges and triplets: W(expansion) * f_cut on the scalar side,
    # unit direction * f_cut broadcast over channels on the vector side
    d = weight.shape[1]
    fc = cosine_cutoff(dist, cfg.r_c)
    scal = ad.mul(ad.matmul(gaussian_expand(dist, cfg), weight),
                  ad.reshape(fc, (dist.shape[0], 1)))
    scaled_dir = ad.mul(unit_vec, ad.reshape(fc, (dist.shape[0], 1)))
    vec = ad.mul(ad.reshape(scaled_dir, (dist.shape[0], 1, 3)),
                 ad.constant(np.ones((1, d, 1))))
    return scal, vec


def init_edge(dist, unit_vec, cfg, w_e):
    """Bond features from distance and unit direction (both may be taped)."""
    return _init_expanded(dist, unit_vec, cfg, w_e)


def init_triplet(dist_kj, unit_kj, cfg2, w_t):
    """Triplet features from the opposite-end vector r_kj; cfg2 carries the
    doubled cutoff 2 R_c."""
    return _init_expanded(dist_kj, unit_kj, cfg2, w_t)
