"""Optimization of model parameters against labeled molecules.

The force term of the joint objective needs d/dtheta of quantities that are
themselves position gradients.  The tape engine is deliberately first-order,
so that directional second derivative is obtained from two extra taped
passes at positions displaced along the force residual:

    dL_f/dtheta = -(2 lambda_f / 3N) |w| * (gE(r + eps u) - gE(r - eps u)) / (2 eps)

with w = F - F_ref, u = w/|w|, and gE the parameter gradient of the energy.
The probe reuses the molecule's neighbor list, so the displaced evaluations
see the same topology and the estimate stays smooth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import build_graph
from . import model as md

TARGETS = ("energy", "energy_force", "polarizability")


class TrainingError(Exception):
    pass


class ShapeMismatchError(TrainingError):
    pass


class DivergenceError(TrainingError):
    """Raised when the loss stops being finite or blows up.

    Carries the last parameter snapshot that was still healthy."""

    def __init__(self, message, last_good, epoch):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


@dataclass
class TrainConfig:
    lambda_e: float = 0.05
    lambda_f: float = 0.95
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    n_epochs: int = 100
    seed: int = 0
    val_fraction: float = 0.1
    target: str = "energy_force"
    standardize: bool = False
    precision: str = "float64"
    fd_step: float = 1e-3
    force_floor: float = 1e-12
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-6
    divergence_factor: float = 1e4

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainingError("batch_size must be at least 1")
        if self.lambda_e < 0 or self.lambda_f < 0:
            raise TrainingError("loss weights must be nonnegative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise TrainingError("val_fraction must lie in [0, 1)")
        if self.target not in TARGETS:
            raise TrainingError(f"target must be one of {TARGETS}")
        if self.precision != "float64":
            raise TrainingError("only float64 is supported")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise TrainingError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def joint_loss(energies, ref_energies, forces, ref_forces,
               lambda_e=0.05, lambda_f=0.95):
    """Per-molecule lambda_e (E - E_ref)^2 + lambda_f/(3N) sum (F - F_ref)^2,
    averaged over the batch."""
    energies = np.asarray(energies, dtype=np.float64)
    ref_energies = np.asarray(ref_energies, dtype=np.float64)
    if energies.shape != ref_energies.shape:
        raise ShapeMismatchError("energy arrays differ in length")
    n = energies.shape[0]
    if n == 0:
        raise ShapeMismatchError("empty batch")
    if lambda_f != 0.0:
        if forces is None or ref_forces is None:
            raise ShapeMismatchError("force terms required when lambda_f != 0")
        if len(forces) != n or len(ref_forces) != n:
            raise ShapeMismatchError("force lists differ in length")
    total = 0.0
    for i in range(n):
        term = lambda_e * (energies[i] - ref_energies[i]) ** 2
        if lambda_f != 0.0:
            f = np.asarray(forces[i], dtype=np.float64)
            fr = np.asarray(ref_forces[i], dtype=np.float64)
            if f.shape != fr.shape or f.ndim != 2 or f.shape[1] != 3:
                raise ShapeMismatchError(f"force shapes disagree for molecule {i}")
            term += lambda_f / (3.0 * f.shape[0]) * np.sum((f - fr) ** 2)
        total += term
    return total / n


def per_atom_tensor_rmse(preds, refs, atom_counts):
    """sqrt(1/N sum_i (|alpha_i - alpha_hat_i|_F / n_i)^2)."""
    if not (len(preds) == len(refs) == len(atom_counts)):
        raise ShapeMismatchError("prediction, reference, and count lengths differ")
    if not preds:
        raise ShapeMismatchError("empty batch")
    acc = 0.0
    for p, r, n in zip(preds, refs, atom_counts):
        diff = np.asarray(p, dtype=np.float64) - np.asarray(r, dtype=np.float64)
        acc += (np.linalg.norm(diff) / n) ** 2
    return np.sqrt(acc / len(preds))


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in params.named_tensors():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(tensor.data))
            v = self.v.setdefault(name, np.zeros_like(tensor.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def split_dataset(n, val_fraction, rng):
    """Disjoint, exhaustive, seed-reproducible train/validation index split."""
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    if val_fraction > 0 and n > 1:
        n_val = max(n_val, 1)
    n_val = min(n_val, n - 1) if n > 1 else 0
    return perm[n_val:], perm[:n_val]


def _param_grads_by_name(params, grads):
    name_of = {id(t): name for name, t in params.named_tensors()}
    return {name_of[id(t)]: g for t, g in grads.items() if id(t) in name_of}


def _energy_pass(mol, graph, cfg, params, with_forces):
    pos = Tensor(mol.positions, requires_grad=with_forces)
    with ad.Tape() as tape:
        out = md.forward(mol, cfg, params, graph=graph, positions=pos)
        energy = md.scalar_output(out)
    grads = tape.backward(energy)
    forces = None
    if with_forces:
        g = grads.get(pos)
        forces = -g if g is not None else np.zeros((mol.n_atoms, 3))
    return energy.item(), forces, _param_grads_by_name(params, grads)


def _molecule_gradients(mol, graph, cfg, params, tcfg):
    """Loss value and parameter gradients for one molecule (no batch factor)."""
    if tcfg.target == "polarizability":
        return _polarizability_gradients(mol, graph, cfg, params)

    with_forces = tcfg.target == "energy_force"
    energy, forces, g_energy = _energy_pass(mol, graph, cfg, params, with_forces)
    err = energy - mol.energy
    loss = tcfg.lambda_e * err * err
    coef = 2.0 * tcfg.lambda_e * err
    total = {name: coef * g for name, g in g_energy.items()}

    if with_forces and tcfg.lambda_f != 0.0:
        w = forces - mol.forces
        wn = np.linalg.norm(w)
        n3 = 3.0 * mol.n_atoms
        loss += tcfg.lambda_f / n3 * wn * wn
        if wn >= tcfg.force_floor:
            u = w / wn
            eps = tcfg.fd_step
            shifted = []
            for sign in (1.0, -1.0):
                displaced = mol.positions + sign * eps * u
                probe = Tensor(displaced)
                with ad.Tape() as tape:
                    out = md.forward(mol, cfg, params, graph=graph, positions=probe)
                    e_probe = md.scalar_output(out)
                grads = tape.backward(e_probe)
                shifted.append(_param_grads_by_name(params, grads))
            coef_f = -2.0 * tcfg.lambda_f / n3 * wn / (2.0 * eps)
            plus, minus = shifted
            for name in plus:
                contrib = coef_f * (plus[name] - minus[name])
                if name in total:
                    total[name] = total[name] + contrib
                else:
                    total[name] = contrib
    return loss, total


def _polarizability_gradients(mol, graph, cfg, params):
    ref = mol.polarizability
    n = mol.n_atoms
    with ad.Tape() as tape:
        out = md.forward(mol, cfg, params, graph=graph)
        diff = ad.sub(out.alpha, ad.constant(ref))
        loss_t = ad.mul(ad.reduce_sum(ad.mul(diff, diff)), ad.constant(1.0 / n ** 2))
    grads = tape.backward(loss_t)
    return loss_t.item(), _param_grads_by_name(params, grads)


@dataclass
class Metrics:
    loss: float
    per_target: dict  # target name -> {"mae": float, "rmse": float}


def evaluate(molecules, graphs, cfg, params, tcfg):
    """Forward-only metrics over a list of molecules."""
    if tcfg.target == "polarizability":
        preds = [md.forward(m, cfg, params, graph=g).alpha.data
                 for m, g in zip(molecules, graphs)]
        refs = [m.polarizability for m in molecules]
        counts = [m.n_atoms for m in molecules]
        rmse = per_atom_tensor_rmse(preds, refs, counts)
        mae = float(np.mean([np.linalg.norm(p - r) / n
                             for p, r, n in zip(preds, refs, counts)]))
        loss = float(np.mean([np.sum((p - r) ** 2) / n ** 2
                              for p, r, n in zip(preds, refs, counts)]))
        return Metrics(loss, {"polarizability": {"mae": mae, "rmse": rmse}})

    with_forces = tcfg.target == "energy_force"
    energies, forces = [], []
    for mol, graph in zip(molecules, graphs):
        e, f, _ = _energy_pass(mol, graph, cfg, params, with_forces)
        energies.append(e)
        forces.append(f)
    ref_e = np.array([m.energy for m in molecules])
    pred_e = np.array(energies)
    e_err = pred_e - ref_e
    per_target = {"energy": {
        "mae": float(np.mean(np.abs(e_err))),
        "rmse": float(np.sqrt(np.mean(e_err ** 2))),
    }}
    if with_forces:
        ref_f = [m.forces for m in molecules]
        flat = np.concatenate([(f - fr).ravel() for f, fr in zip(forces, ref_f)])
        per_target["force"] = {
            "mae": float(np.mean(np.abs(flat))),
            "rmse": float(np.sqrt(np.mean(flat ** 2))),
        }
        loss = joint_loss(pred_e, ref_e, forces, ref_f, tcfg.lambda_e, tcfg.lambda_f)
    else:
        loss = joint_loss(pred_e, ref_e, None, None, tcfg.lambda_e, 0.0)
    return Metrics(float(loss), per_target)


@dataclass
class TrainResult:
    params: object
    history: list
    best_epoch: int
    best_val_loss: float
    standardization: dict | None = None


def _validate_labels(molecules, target):
    for i, mol in enumerate(molecules):
        if target in ("energy", "energy_force") and mol.energy is None:
            raise TrainingError(f"molecule {i} lacks an energy label")
        if target == "energy_force" and mol.forces is None:
            raise TrainingError(f"molecule {i} lacks force labels")
        if target == "polarizability" and mol.polarizability is None:
            raise TrainingError(f"molecule {i} lacks a polarizability label")


def _standardize(molecules, train_idx):
    energies = np.array([molecules[i].energy for i in train_idx])
    mean = float(np.mean(energies))
    std = float(np.std(energies))
    if std < 1e-12:
        std = 1.0
    rescaled = []
    for mol in molecules:
        forces = None if mol.forces is None else mol.forces / std
        energy = None if mol.energy is None else (mol.energy - mean) / std
        rescaled.append(type(mol)(mol.atomic_numbers, mol.positions,
                                  energy=energy, forces=forces,
                                  polarizability=mol.polarizability))
    return rescaled, {"mean": mean, "std": std}


def train(molecules, cfg, tcfg, params=None, metrics_path=None):
    """Returns best-validation parameters plus the metric history.

    History records are {epoch, split, target, mae, rmse, loss}; epoch 0 is
    the pre-update state, so ratios against initialization read directly off
    the history.  When the validation split is empty the training split
    doubles as the selection set.
    """
    if not molecules:
        raise TrainingError("empty dataset")
    _validate_labels(molecules, tcfg.target)
    rng = np.random.default_rng(tcfg.seed)
    train_idx, val_idx = split_dataset(len(molecules), tcfg.val_fraction, rng)
    if train_idx.size == 0:
        raise TrainingError("empty train split")

    standardization = None
    if tcfg.standardize and tcfg.target in ("energy", "energy_force"):
        molecules, standardization = _standardize(molecules, train_idx)

    graphs = [build_graph(m, cfg.r_c, cfg.n_max) for m in molecules]
    if params is None:
        params = md.init_params(cfg, seed=tcfg.seed)
    optimizer = Adam(tcfg.beta1, tcfg.beta2, tcfg.eps)
    lr = tcfg.lr

    train_mols = [molecules[i] for i in train_idx]
    train_graphs = [graphs[i] for i in train_idx]
    val_mols = [molecules[i] for i in val_idx]
    val_graphs = [graphs[i] for i in val_idx]
    selection = (val_mols, val_graphs) if val_mols else (train_mols, train_graphs)

    history = []
    sink = open(metrics_path, "w") if metrics_path else None

    def record(epoch, split, metrics):
        for target, stats in metrics.per_target.items():
            row = {"epoch": epoch, "split": split, "target": target,
                   "mae": stats["mae"], "rmse": stats["rmse"],
                   "loss": metrics.loss}
            history.append(row)
            if sink:
                sink.write(json.dumps(row, sort_keys=True) + "\n")

    try:
        train_metrics = evaluate(train_mols, train_graphs, cfg, params, tcfg)
        record(0, "train", train_metrics)
        val_metrics = evaluate(*selection, cfg, params, tcfg)
        record(0, "val", val_metrics)
        initial_loss = train_metrics.loss
        best_val = val_metrics.loss
        best_epoch = 0
        best_snapshot = params.copy_data()
        stale = 0

        for epoch in range(1, tcfg.n_epochs + 1):
            order = rng.permutation(train_idx.size)
            for start in range(0, order.size, tcfg.batch_size):
                batch = order[start:start + tcfg.batch_size]
                acc = {}
                for k in batch:
                    _, grads = _molecule_gradients(
                        train_mols[k], train_graphs[k], cfg, params, tcfg)
                    for name, g in grads.items():
                        if name in acc:
                            acc[name] = acc[name] + g
                        else:
                            acc[name] = g
                scale = 1.0 / batch.size
                optimizer.step(params, {n: g * scale for n, g in acc.items()}, lr)

            train_metrics = evaluate(train_mols, train_graphs, cfg, params, tcfg)
            record(epoch, "train", train_metrics)
            val_metrics = evaluate(*selection, cfg, params, tcfg)
            record(epoch, "val", val_metrics)

            loss = train_metrics.loss
            if not np.isfinite(loss) or loss > tcfg.divergence_factor * max(initial_loss, 1e-30):
                raise DivergenceError(
                    f"loss {loss} diverged at epoch {epoch}", best_snapshot, epoch)

            if val_metrics.loss < best_val:
                best_val = val_metrics.loss
                best_epoch = epoch
                best_snapshot = params.copy_data()
                stale = 0
            else:
                stale += 1
                if stale >= tcfg.plateau_patience:
                    lr = max(lr * tcfg.plateau_factor, tcfg.min_lr)
                    stale = 0
    finally:
        if sink:
            sink.close()

    params.load_data(best_snapshot)
    return TrainResult(params, history, best_epoch, best_val,
                       standardization=standardization)
