"""Scikit-learn style wrappers around the training loop.

X is a list of Molecule objects; labels ride either on the molecules or in y.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_is_fitted

from . import model as md
from . import training as tr
from .geometry import Molecule


def _as_molecule_list(X):
    if isinstance(X, Molecule):
        raise ValueError("X must be a sequence of Molecule, not a single one")
    mols = list(X)
    if not mols:
        raise ValueError("X is empty")
    for i, mol in enumerate(mols):
        if not isinstance(mol, Molecule):
            raise ValueError(f"X[{i}] is {type(mol).__name__}, expected Molecule")
    return mols


class MolecularPotentialRegressor(BaseEstimator, RegressorMixin):
    """Predicts per-structure energies (and forces when target includes them).

    Fitting stores the learned weights on `params_`; `history_` carries the
    per-epoch metric rows the training loop produced.
    """

    def __init__(self, d=32, d_t=1, n_blocks=2, r_c=5.0, n_max=32, n_bf=12,
                 readout="sum", use_triplets=True, target="energy_force",
                 lr=1e-3, n_epochs=100, batch_size=8, val_fraction=0.1,
                 lambda_e=0.05, lambda_f=0.95, standardize=False, seed=0):
        self.d = d
        self.d_t = d_t
        self.n_blocks = n_blocks
        self.r_c = r_c
        self.n_max = n_max
        self.n_bf = n_bf
        self.readout = readout
        self.use_triplets = use_triplets
        self.target = target
        self.lr = lr
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.lambda_e = lambda_e
        self.lambda_f = lambda_f
        self.standardize = standardize
        self.seed = seed

    def _model_config(self):
        head = "scalar+force" if self.target == "energy_force" else "scalar"
        return md.ModelConfig(
            d=self.d, d_t=self.d_t, n_blocks=self.n_blocks, r_c=self.r_c,
            n_max=self.n_max, n_bf=self.n_bf, readout=self.readout,
            use_triplets=self.use_triplets, head=head)

    def _train_config(self):
        return tr.TrainConfig(
            target=self.target, lr=self.lr, n_epochs=self.n_epochs,
            batch_size=self.batch_size, val_fraction=self.val_fraction,
            lambda_e=self.lambda_e, lambda_f=self.lambda_f,
            standardize=self.standardize, seed=self.seed)

    def _labeled(self, X, y):
        mols = _as_molecule_list(X)
        if y is not None:
            y = np.asarray(y, dtype=np.float64)
            if y.shape != (len(mols),):
                raise ValueError(
                    f"y has shape {y.shape}, expected ({len(mols)},)")
            if not np.all(np.isfinite(y)):
                raise ValueError("y contains non-finite energies")
            mols = [Molecule(m.atomic_numbers, m.positions, energy=e,
                             forces=m.forces) for m, e in zip(mols, y)]
        missing = [i for i, m in enumerate(mols) if m.energy is None]
        if missing:
            raise ValueError(f"molecules {missing[:5]} have no energy label; "
                             "pass y or label the molecules")
        if self.target == "energy_force":
            missing = [i for i, m in enumerate(mols) if m.forces is None]
            if missing:
                raise ValueError(
                    f"molecules {missing[:5]} have no forces; use "
                    "target='energy' or provide force labels")
        return mols

    def fit(self, X, y=None):
        if self.target not in ("energy", "energy_force"):
            raise ValueError(f"unknown target {self.target!r}")
        mols = self._labeled(X, y)
        cfg = self._model_config()
        result = tr.train(mols, cfg, self._train_config())
        self.config_ = cfg
        self.params_ = result.params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.standardization_ = result.standardization or {"mean": 0.0, "std": 1.0}
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        mols = _as_molecule_list(X)
        std = self.standardization_
        out = np.zeros(len(mols))
        for i, mol in enumerate(mols):
            result = md.forward(mol, self.config_, self.params_)
            out[i] = result.pooled_s.item() * std["std"] + std["mean"]
        return out

    def predict_forces(self, X):
        """Returns a list of (n_atoms, 3) arrays, one per molecule."""
        check_is_fitted(self, "params_")
        if self.config_.head != "scalar+force":
            raise ValueError("forces need target='energy_force'")
        mols = _as_molecule_list(X)
        forces = []
        for mol in mols:
            _, f = md.energy_and_forces(mol, self.config_, self.params_)
            forces.append(f * self.standardization_["std"])
        return forces


class PolarizabilityRegressor(BaseEstimator, RegressorMixin):
    """Predicts symmetric 3x3 polarizability tensors per structure."""

    def __init__(self, d=32, d_t=1, n_blocks=2, r_c=5.0, n_max=32, n_bf=12,
                 use_triplets=True, lr=1e-3, n_epochs=100, batch_size=8,
                 val_fraction=0.1, seed=0):
        self.d = d
        self.d_t = d_t
        self.n_blocks = n_blocks
        self.r_c = r_c
        self.n_max = n_max
        self.n_bf = n_bf
        self.use_triplets = use_triplets
        self.lr = lr
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.seed = seed

    def _labeled(self, X, y):
        mols = _as_molecule_list(X)
        if y is not None:
            y = np.asarray(y, dtype=np.float64)
            if y.shape != (len(mols), 3, 3):
                raise ValueError(
                    f"y has shape {y.shape}, expected ({len(mols)}, 3, 3)")
            mols = [Molecule(m.atomic_numbers, m.positions, energy=m.energy,
                             forces=m.forces, polarizability=t)
                    for m, t in zip(mols, y)]
        missing = [i for i, m in enumerate(mols) if m.polarizability is None]
        if missing:
            raise ValueError(
                f"molecules {missing[:5]} have no polarizability label")
        return mols

    def fit(self, X, y=None):
        mols = self._labeled(X, y)
        cfg = md.ModelConfig(
            d=self.d, d_t=self.d_t, n_blocks=self.n_blocks, r_c=self.r_c,
            n_max=self.n_max, n_bf=self.n_bf, use_triplets=self.use_triplets,
            head="polarizability")
        tcfg = tr.TrainConfig(
            target="polarizability", lr=self.lr, n_epochs=self.n_epochs,
            batch_size=self.batch_size, val_fraction=self.val_fraction,
            seed=self.seed)
        result = tr.train(mols, cfg, tcfg)
        self.config_ = cfg
        self.params_ = result.params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        mols = _as_molecule_list(X)
        out = np.zeros((len(mols), 3, 3))
        for i, mol in enumerate(mols):
            out[i] = md.polarizability(mol, self.config_, self.params_)
        return out

    def score(self, X, y, sample_weight=None):
        """R^2 over the nine tensor components."""
        y = np.asarray(y, dtype=np.float64)
        pred = self.predict(X)
        return r2_score(y.reshape(len(pred), -1), pred.reshape(len(pred), -1),
                        sample_weight=sample_weight)
