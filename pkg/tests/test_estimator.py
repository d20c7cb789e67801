import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from equimol import model as md
from equimol.estimator import MolecularPotentialRegressor, PolarizabilityRegressor
from equimol.geometry import Molecule

from conftest import make_lj_dataset, random_molecule


def tiny_potential(**overrides):
    kw = dict(d=8, d_t=1, n_blocks=1, n_bf=4, n_epochs=2, batch_size=4, seed=0)
    kw.update(overrides)
    return MolecularPotentialRegressor(**kw)


class TestSklearnPlumbing:
    def test_get_params_round_trip(self):
        est = tiny_potential(lr=5e-4)
        params = est.get_params()
        assert params["lr"] == 5e-4
        assert params["d"] == 8
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_set_params(self):
        est = tiny_potential()
        est.set_params(n_epochs=7, readout="mean")
        assert est.n_epochs == 7
        assert est.readout == "mean"

    def test_predict_before_fit(self):
        with pytest.raises(NotFittedError):
            tiny_potential().predict(make_lj_dataset(2))


class TestValidation:
    def test_empty_input(self):
        with pytest.raises(ValueError, match="empty"):
            tiny_potential().fit([])

    def test_non_molecule_entries(self):
        with pytest.raises(ValueError, match="expected Molecule"):
            tiny_potential().fit([np.zeros((3, 3))])

    def test_single_molecule_not_a_sequence(self):
        with pytest.raises(ValueError, match="sequence"):
            tiny_potential().fit(make_lj_dataset(1)[0])

    def test_y_length_mismatch(self):
        mols = make_lj_dataset(4)
        with pytest.raises(ValueError, match="shape"):
            tiny_potential().fit(mols, y=np.zeros(3))

    def test_missing_energy_label(self):
        bare = [Molecule(m.atomic_numbers, m.positions)
                for m in make_lj_dataset(3)]
        with pytest.raises(ValueError, match="no energy"):
            tiny_potential().fit(bare)

    def test_missing_forces_for_force_target(self):
        mols = [Molecule(m.atomic_numbers, m.positions, energy=m.energy)
                for m in make_lj_dataset(3)]
        with pytest.raises(ValueError, match="no forces"):
            tiny_potential(target="energy_force").fit(mols)

    def test_unknown_target(self):
        with pytest.raises(ValueError, match="target"):
            tiny_potential(target="dipole").fit(make_lj_dataset(2))


@pytest.fixture(scope="module")
def fitted():
    mols = make_lj_dataset(8, seed=5)
    est = tiny_potential()
    return est.fit(mols), mols


class TestPotentialFit:
    def test_predict_shape_and_finiteness(self, fitted):
        est, mols = fitted
        pred = est.predict(mols)
        assert pred.shape == (8,)
        assert np.all(np.isfinite(pred))

    def test_history_recorded(self, fitted):
        est, _ = fitted
        assert est.history_
        assert est.best_epoch_ >= 0

    def test_forces_shape(self, fitted):
        est, mols = fitted
        forces = est.predict_forces(mols[:2])
        assert len(forces) == 2
        assert forces[0].shape == (5, 3)

    def test_score_is_float(self, fitted):
        est, mols = fitted
        y = np.array([m.energy for m in mols])
        assert np.isfinite(est.score(mols, y))

    def test_y_overrides_labels(self):
        mols = make_lj_dataset(4, seed=6)
        bare = [Molecule(m.atomic_numbers, m.positions, forces=m.forces)
                for m in mols]
        y = np.array([m.energy for m in mols])
        est = tiny_potential().fit(bare, y)
        assert est.predict(bare).shape == (4,)

    def test_energy_only_target_rejects_force_request(self):
        mols = make_lj_dataset(4, seed=7)
        est = tiny_potential(target="energy").fit(mols)
        with pytest.raises(ValueError, match="forces"):
            est.predict_forces(mols)

    def test_standardize_passthrough(self):
        mols = make_lj_dataset(4, seed=8)
        est = tiny_potential(standardize=True).fit(mols)
        assert est.standardization_["std"] > 0
        assert np.all(np.isfinite(est.predict(mols)))


class TestPolarizability:
    def _dataset(self, n=6, seed=9):
        rng = np.random.default_rng(seed)
        cfg = md.ModelConfig(d=8, d_t=1, n_blocks=1, n_bf=4,
                             head="polarizability")
        teacher = md.init_params(cfg, seed=seed + 1)
        mols = []
        for _ in range(n):
            mol = random_molecule(rng, 4, box=3.0)
            alpha = md.polarizability(mol, cfg, teacher)
            mols.append(Molecule(mol.atomic_numbers, mol.positions,
                                 polarizability=alpha))
        return mols

    def test_fit_predict_symmetric(self):
        mols = self._dataset()
        est = PolarizabilityRegressor(d=8, d_t=1, n_blocks=1, n_bf=4,
                                      n_epochs=2, batch_size=3)
        pred = est.fit(mols).predict(mols)
        assert pred.shape == (6, 3, 3)
        np.testing.assert_array_equal(pred, np.transpose(pred, (0, 2, 1)))

    def test_missing_label(self):
        bare = [Molecule(m.atomic_numbers, m.positions)
                for m in self._dataset(3)]
        est = PolarizabilityRegressor(n_epochs=1)
        with pytest.raises(ValueError, match="polarizability"):
            est.fit(bare)

    def test_y_supplies_labels_and_score_runs(self):
        mols = self._dataset(5, seed=12)
        y = np.stack([m.polarizability for m in mols])
        bare = [Molecule(m.atomic_numbers, m.positions) for m in mols]
        est = PolarizabilityRegressor(d=8, d_t=1, n_blocks=1, n_bf=4,
                                      n_epochs=2, batch_size=2, seed=13)
        est.fit(bare, y)
        assert np.isfinite(est.score(bare, y))

    def test_clone_compatible(self):
        est = PolarizabilityRegressor(n_blocks=3)
        assert clone(est).get_params() == est.get_params()
