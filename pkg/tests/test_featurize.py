import numpy as np
import pytest

from equimol import autodiff as ad
from equimol.featurize import (
    FeaturizeError,
    RadialBasisConfig,
    UnknownElementError,
    cosine_cutoff,
    gaussian_expand,
    init_edge,
    init_node,
    init_triplet,
)


def test_radial_config_centers():
    cfg = RadialBasisConfig(n_bf=5, mu_max=5.0, r_c=5.0)
    assert np.allclose(cfg.centers, [0.0, 1.25, 2.5, 3.75, 5.0])
    assert cfg.sigma == pytest.approx(1.25)
    with pytest.raises(FeaturizeError):
        RadialBasisConfig(n_bf=1)
    with pytest.raises(FeaturizeError):
        RadialBasisConfig(n_bf=4, sigma=-1.0)


def test_cosine_cutoff_values():
    r_c = 5.0
    assert cosine_cutoff(np.array([0.0]), r_c).data[0] == pytest.approx(1.0)
    assert cosine_cutoff(np.array([r_c]), r_c).data[0] == pytest.approx(0.0, abs=1e-16)
    assert cosine_cutoff(np.array([r_c / 2]), r_c).data[0] == pytest.approx(0.5)
    assert cosine_cutoff(np.array([r_c + 1.0]), r_c).data[0] == 0.0


def test_cosine_cutoff_gradient_vanishes_at_boundary():
    r_c = 5.0
    x = ad.Tensor(np.array([2.0, 4.999999, 5.0]), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.reduce_sum(cosine_cutoff(x, r_c))
    g = tape.backward(y)[x]
    assert abs(g[2]) < 1e-12
    assert abs(g[1]) < 1e-5
    assert g[0] != 0.0


def test_gaussian_expand_peak_and_sigma_offset():
    cfg = RadialBasisConfig(n_bf=6, mu_max=5.0, r_c=5.0)
    d = ad.as_tensor(np.array([cfg.centers[2]]))
    out = gaussian_expand(d, cfg).data[0]
    assert out[2] == pytest.approx(1.0)
    d2 = ad.as_tensor(np.array([cfg.centers[2] + cfg.sigma]))
    out2 = gaussian_expand(d2, cfg).data[0]
    assert out2[2] == pytest.approx(np.exp(-0.5))


def test_gaussian_expand_matches_loop_oracle():
    cfg = RadialBasisConfig(n_bf=9, mu_max=4.0, sigma=0.37, r_c=4.0)
    rng = np.random.default_rng(31)
    dist = rng.uniform(0.2, 4.0, size=11)
    got = gaussian_expand(ad.as_tensor(dist), cfg).data
    for e, d in enumerate(dist):
        for m, mu in enumerate(cfg.centers):
            ref = np.exp(-((d - mu) ** 2) / (2 * cfg.sigma ** 2))
            assert got[e, m] == pytest.approx(ref, rel=1e-14)
    assert np.all(got > 0) and np.all(got <= 1.0)


def test_init_node_lookup():
    rng = np.random.default_rng(32)
    w_z = ad.as_tensor(rng.normal(size=(100, 8)))
    h0, hv0 = init_node(np.array([6, 1, 6]), w_z)
    assert np.array_equal(h0.data[0], h0.data[2])
    assert np.array_equal(h0.data[0], w_z.data[5])
    assert np.array_equal(h0.data[1], w_z.data[0])
    assert np.array_equal(hv0.data, np.zeros((3, 8, 3)))


def test_init_node_unknown_element():
    w_z = ad.as_tensor(np.zeros((100, 4)))
    with pytest.raises(UnknownElementError):
        init_node(np.array([101]), w_z)
    with pytest.raises(UnknownElementError):
        init_node(np.array([0]), w_z)


def test_init_edge_at_cutoff_is_zero():
    cfg = RadialBasisConfig(n_bf=4, mu_max=5.0, r_c=5.0)
    w_e = ad.as_tensor(np.ones((4, 3)))
    dist = ad.as_tensor(np.array([5.0]))
    unit = ad.as_tensor(np.array([[1.0, 0.0, 0.0]]))
    e0, ev0 = init_edge(dist, unit, cfg, w_e)
    assert np.allclose(e0.data, 0.0, atol=1e-15)
    assert np.allclose(ev0.data, 0.0, atol=1e-15)


def test_init_edge_manual_oracle():
    # n_bf=3 with identity weights on a 1 Angstrom edge, hand-evaluated
    cfg = RadialBasisConfig(n_bf=3, mu_max=5.0, r_c=5.0)  # centers 0, 2.5, 5; sigma 2.5
    w_e = ad.as_tensor(np.eye(3))
    dist = ad.as_tensor(np.array([1.0]))
    unit = ad.as_tensor(np.array([[0.0, 0.0, 1.0]]))
    e0, ev0 = init_edge(dist, unit, cfg, w_e)
    fcut = 0.5 * (1 + np.cos(np.pi / 5.0))
    expansion = np.exp(-np.array([1.0, 2.25, 16.0]) / 12.5)
    assert np.allclose(e0.data[0], expansion * fcut, rtol=1e-14)
    assert ev0.data.shape == (1, 3, 3)
    for c in range(3):
        assert np.allclose(ev0.data[0, c], [0.0, 0.0, fcut], rtol=1e-14)


def test_edge_features_transform_correctly():
    cfg = RadialBasisConfig(n_bf=5, mu_max=5.0, r_c=5.0)
    rng = np.random.default_rng(33)
    w_e = ad.as_tensor(rng.normal(size=(5, 6)))
    rel = rng.normal(size=(4, 3))
    dist = np.linalg.norm(rel, axis=1)
    unit = rel / dist[:, None]
    e0, ev0 = init_edge(ad.as_tensor(dist), ad.as_tensor(unit), cfg, w_e)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    q[:, 1] *= -1.0
    e0q, ev0q = init_edge(ad.as_tensor(dist), ad.as_tensor(unit @ q.T), cfg, w_e)
    assert np.allclose(e0q.data, e0.data, atol=1e-14)
    assert np.allclose(ev0q.data, np.einsum("ecx,yx->ecy", ev0.data, q), atol=1e-13)


def test_init_triplet_geometry_cases():
    cfg2 = RadialBasisConfig(n_bf=4, mu_max=10.0, r_c=10.0)
    w_t = ad.as_tensor(np.ones((4, 2)))
    # collinear j-i-k with unit bonds: |r_kj| = 2 along the bond axis
    dist = ad.as_tensor(np.array([2.0]))
    unit = ad.as_tensor(np.array([[1.0, 0.0, 0.0]]))
    t0, tv0 = init_triplet(dist, unit, cfg2, w_t)
    fcut = 0.5 * (1 + np.cos(np.pi * 2.0 / 10.0))
    assert np.allclose(np.abs(tv0.data[0, 0]), [fcut, 0.0, 0.0], atol=1e-14)
    # equilateral 120-degree star with unit bonds: |r_kj| = sqrt(3)
    d_kj = np.linalg.norm(np.array([1.0, 0.0, 0.0]) - np.array([-0.5, np.sqrt(3) / 2, 0.0]))
    assert d_kj == pytest.approx(np.sqrt(3.0))


def test_feature_gradients_flow_to_distance():
    cfg = RadialBasisConfig(n_bf=4, mu_max=5.0, r_c=5.0)
    w_e = ad.as_tensor(np.random.default_rng(34).normal(size=(4, 2)))
    dist = ad.Tensor(np.array([1.3, 4.9999]), requires_grad=True)
    unit = ad.as_tensor(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def f(d):
        e0, ev0 = init_edge(d, unit, cfg, w_e)
        return ad.add(ad.reduce_sum(e0), ad.reduce_sum(ev0))

    report = ad.gradcheck(f, [dist])
    assert report.passed, repr(report)
