"""Extended-XYZ ingestion and writing, plus the JSON run configuration."""

from __future__ import annotations

import json
import math
import shlex
from dataclasses import dataclass, field

import numpy as np

from .geometry import Molecule
from .model import ModelConfig, ConfigError
from .training import TrainConfig

ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca "
    "Sc Ti V Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr "
    "Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce Pr Nd "
    "Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg "
    "Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm"
).split()
assert len(ELEMENTS) == 100

SYMBOL_TO_Z = {sym: z for z, sym in enumerate(ELEMENTS, start=1)}


class ParseError(Exception):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _parse_float(token, line, what):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"bad {what} {token!r}", line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {token!r}", line)
    return value


def _parse_comment(comment, line):
    """key=value pairs; only energy is consumed, everything else (Lattice,
    Properties, ...) is ignored."""
    try:
        tokens = shlex.split(comment)
    except ValueError as err:
        raise ParseError(f"malformed comment: {err}", line) from None
    energy = None
    for token in tokens:
        key, sep, value = token.partition("=")
        if sep and key.lower() == "energy":
            energy = _parse_float(value, line, "energy")
    return energy


def parse_extxyz(lines):
    """Parse extended-XYZ frames from an iterable of lines (such as an open
    file).  Atom lines are `symbol x y z` with optional `fx fy fz`."""
    molecules = []
    it = enumerate(lines, start=1)
    while True:
        header = None
        for lineno, raw in it:
            if raw.strip():
                header = (lineno, raw)
                break
        if header is None:
            break
        lineno, raw = header
        try:
            count = int(raw.strip())
        except ValueError:
            raise ParseError(f"expected atom count, got {raw.strip()!r}", lineno) from None
        if count < 1:
            raise ParseError(f"atom count must be positive, got {count}", lineno)

        comment_entry = next(it, None)
        if comment_entry is None:
            raise ParseError("missing comment line", lineno + 1)
        energy = _parse_comment(comment_entry[1], comment_entry[0])

        numbers = np.zeros(count, dtype=np.int64)
        positions = np.zeros((count, 3))
        forces = np.zeros((count, 3))
        n_force_rows = 0
        for i in range(count):
            entry = next(it, None)
            if entry is None:
                raise ParseError(f"frame truncated: expected {count} atoms, got {i}",
                                 comment_entry[0] + i + 1)
            row_no, row = entry
            fields = row.split()
            if len(fields) not in (4, 7):
                raise ParseError(
                    f"expected 4 or 7 fields, got {len(fields)}", row_no)
            symbol = fields[0].capitalize()
            z = SYMBOL_TO_Z.get(symbol)
            if z is None:
                raise ParseError(f"unknown element symbol {fields[0]!r}", row_no)
            numbers[i] = z
            for k in range(3):
                positions[i, k] = _parse_float(fields[1 + k], row_no, "coordinate")
            if len(fields) == 7:
                for k in range(3):
                    forces[i, k] = _parse_float(fields[4 + k], row_no, "force")
                n_force_rows += 1
        if n_force_rows not in (0, count):
            raise ParseError(
                "frame mixes atom lines with and without forces", row_no)
        molecules.append(Molecule(
            numbers, positions, energy=energy,
            forces=forces if n_force_rows else None))
    return molecules


def read_extxyz(path):
    with open(path) as fh:
        return parse_extxyz(fh)


def format_extxyz(molecules):
    """Render frames with 17-significant-digit numbers, so a write/parse
    round trip reproduces every float64 exactly."""
    out = []
    for mol in molecules:
        out.append(str(mol.n_atoms))
        out.append("" if mol.energy is None else f"energy={mol.energy:.17g}")
        for i in range(mol.n_atoms):
            sym = ELEMENTS[mol.atomic_numbers[i] - 1]
            row = [sym] + [f"{x:.17g}" for x in mol.positions[i]]
            if mol.forces is not None:
                row += [f"{x:.17g}" for x in mol.forces[i]]
            out.append(" ".join(row))
    return "\n".join(out) + "\n"


def write_extxyz(path, molecules):
    with open(path, "w") as fh:
        fh.write(format_extxyz(molecules))


@dataclass
class RunConfig:
    """Top-level JSON config: run name, dataset path, output directory, and
    the nested model/training configs."""

    name: str = "run"
    dataset: str = ""
    output_dir: str = "."
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        return {"name": self.name, "dataset": self.dataset,
                "output_dir": self.output_dir,
                "model": self.model.to_dict(), "train": self.train.to_dict()}

    @classmethod
    def from_dict(cls, data):
        known = {"name", "dataset", "output_dir", "model", "train"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        return cls(
            name=data.get("name", "run"),
            dataset=data.get("dataset", ""),
            output_dir=data.get("output_dir", "."),
            model=ModelConfig.from_dict(data.get("model", {})),
            train=TrainConfig.from_dict(data.get("train", {})),
        )


def load_run_config(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON in {path}: {err}") from None
    return RunConfig.from_dict(data)


def save_run_config(path, run_config):
    with open(path, "w") as fh:
        json.dump(run_config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
