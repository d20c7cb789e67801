import json

import numpy as np
import pytest

from equimol import cli
from equimol import io as mio
from equimol import model as md

from conftest import make_lj_dataset


def run_cli(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestUsage:
    def test_no_command_is_usage_error(self, capsys):
        code, _, err = run_cli([], capsys)
        assert code == 2
        assert "usage" in err

    def test_help_exits_zero(self, capsys):
        code, out, _ = run_cli(["--help"], capsys)
        assert code == 0
        assert "check-equivariance" in out

    def test_check_needs_exactly_one_source(self, capsys):
        code, _, err = run_cli(["check-equivariance"], capsys)
        assert code == 2
        code, _, err = run_cli(
            ["check-equivariance", "some.ckpt", "--random"], capsys)
        assert code == 2

    def test_missing_file_is_reported(self, capsys, tmp_path):
        code, _, err = run_cli(
            ["predict", str(tmp_path / "nope.ckpt"), str(tmp_path / "x.xyz")],
            capsys)
        assert code == 1
        assert "error:" in err


class TestCheckEquivariance:
    def test_random_model_passes(self, capsys, tmp_path):
        verdict = tmp_path / "verdict.json"
        code, out, _ = run_cli(
            ["check-equivariance", "--random", "--trials", "6",
             "--json", str(verdict)], capsys)
        assert code == 0
        assert out.count("[PASS]") == 3
        data = json.loads(verdict.read_text())
        assert data["passed"] is True
        assert len(data["reports"]) == 3

    def test_deterministic_output(self, capsys):
        argv = ["check-equivariance", "--random", "--trials", "4", "--seed", "3"]
        code1, out1, _ = run_cli(argv, capsys)
        code2, out2, _ = run_cli(argv, capsys)
        assert code1 == code2 == 0
        assert out1 == out2


class TestGradcheck:
    def test_random_model(self, capsys):
        code, out, _ = run_cli(["gradcheck", "--random"], capsys)
        assert code == 0
        assert "[PASS] gradcheck" in out


class TestLinegraph:
    def test_levels_printed(self, capsys, tmp_path):
        path = tmp_path / "mol.xyz"
        path.write_text(
            "4\n\nC 0 0 0\nH 1.0 0 0\nH 0 1.0 0\nH 0 0 1.0\n")
        code, out, _ = run_cli(
            ["linegraph", str(path), "--depth", "2"], capsys)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].startswith("level 0: 4 vertices")
        assert len(lines) == 3

    def test_path_graph_counts(self, capsys, tmp_path):
        # 4 collinear atoms, only consecutive pairs within the cutoff:
        # path -> 3-vertex path -> single edge
        path = tmp_path / "chain.xyz"
        path.write_text("4\n\nC 0 0 0\nC 4 0 0\nC 8 0 0\nC 12 0 0\n")
        code, out, _ = run_cli(["linegraph", str(path), "--depth", "2"], capsys)
        assert code == 0
        assert out.splitlines() == [
            "level 0: 4 vertices, 3 edges",
            "level 1: 3 vertices, 2 edges",
            "level 2: 2 vertices, 1 edges",
        ]

    def test_parse_error_reported(self, capsys, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("2\n\nH 0 0 0\n")
        code, _, err = run_cli(["linegraph", str(path)], capsys)
        assert code == 1
        assert "error: line" in err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_run")
    mols = make_lj_dataset(n_conformers=8, seed=4)
    data_path = root / "lj.xyz"
    mio.write_extxyz(data_path, mols)
    run = {
        "name": "tiny",
        "dataset": str(data_path),
        "output_dir": str(root / "out"),
        "model": {"d": 8, "d_t": 1, "n_blocks": 1, "n_bf": 4,
                  "head": "scalar+force"},
        "train": {"n_epochs": 2, "batch_size": 4, "seed": 1},
    }
    cfg_path = root / "run.json"
    cfg_path.write_text(json.dumps(run))
    return root, cfg_path, data_path


class TestTrainPredict:
    def test_train_then_predict(self, workspace, capsys):
        root, cfg_path, data_path = workspace
        code, out, err = run_cli(["train", str(cfg_path)], capsys)
        assert code == 0, err
        ckpt = root / "out" / "tiny.ckpt"
        metrics = root / "out" / "tiny_metrics.jsonl"
        assert ckpt.exists() and metrics.exists()
        rows = [json.loads(line) for line in metrics.read_text().splitlines()]
        assert {row["split"] for row in rows} == {"train", "val"}

        pred_path = root / "pred.jsonl"
        code, _, err = run_cli(
            ["predict", str(ckpt), str(data_path), "--output", str(pred_path)],
            capsys)
        assert code == 0, err
        preds = [json.loads(line) for line in pred_path.read_text().splitlines()]
        assert len(preds) == 8
        for row in preds:
            assert row["n_atoms"] == 5
            assert np.isfinite(row["energy"])
            assert np.asarray(row["forces"]).shape == (5, 3)

    def test_predict_polarizability_head(self, capsys, tmp_path):
        cfg = md.ModelConfig(d=8, d_t=1, n_blocks=1, n_bf=4,
                             head="polarizability")
        params = md.init_params(cfg, seed=2)
        ckpt = tmp_path / "alpha.ckpt"
        md.save_checkpoint(str(ckpt), params, cfg)
        xyz = tmp_path / "one.xyz"
        xyz.write_text("2\n\nH 0 0 0\nH 0.9 0 0\n")
        code, out, _ = run_cli(["predict", str(ckpt), str(xyz)], capsys)
        assert code == 0
        row = json.loads(out.strip())
        alpha = np.asarray(row["polarizability"])
        assert alpha.shape == (3, 3)
        np.testing.assert_allclose(alpha, alpha.T, atol=0)


class TestDemoFig1:
    def test_runs_and_passes(self, capsys):
        code, out, _ = run_cli(["demo-fig1", "--seeds", "4"], capsys)
        assert code == 0
        assert "theta=90deg" in out
        assert "indistinguishable" in out
        assert "distinguishable" in out
        assert "separability verdict: PASS" in out
