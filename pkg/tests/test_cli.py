"""Command-line behaviour: config resolution, exit codes, artifacts."""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np
import pytest

from srforge.cli import (
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_USAGE,
    main,
)
from srforge.datagen import GenerationConfig, build_corpus, build_skeleton_bank, write_corpus
from srforge.expr_core import VOCAB
from srforge.model import Model, ModelConfig
from srforge.tensor_nn import save_checkpoint


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    cfg = GenerationConfig(n_raw_samples=120, master_seed=9, n_realizations=3)
    bank = build_skeleton_bank(cfg)
    write_corpus(build_corpus(bank, cfg), path)
    return path


def forced_checkpoint(path, token: str, d_model: int = 16):
    """A model whose output layer always votes for one token."""
    cfg = ModelConfig(
        d_model=d_model, n_enc_layers=1, n_dec_layers=1, n_heads=2,
        p_drop=0.0, encoder_kind="mlp",
    )
    model = Model(cfg, seed=0)
    model.out.w.data[...] = 0.0
    model.out.b.data[...] = 0.0
    model.out.b.data[VOCAB.id_of(token)] = 50.0
    save_checkpoint(path, model.store, asdict(cfg))
    return path


def write_raw_table(path, rows: int = 12):
    rng = np.random.default_rng(0)
    np.savetxt(path, rng.uniform(0.5, 2.0, size=(rows, 7)), fmt="%.8g")


def make_problem_dir(root, truth: str = "x1"):
    d = root / "problems" / "easy"
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(1)
    table = rng.uniform(0.5, 5.0, size=(60, 3))
    np.savetxt(d / "toy.txt", table, fmt="%.8g")
    (d / "toy.truth").write_text(truth + "\n")
    return root / "problems"


class TestConfigResolution:
    def test_config_file_then_flag_override(self, tmp_path, capsys):
        cfg_file = tmp_path / "gen.cfg"
        cfg_file.write_text("n_raw=150\nseed=4\n# comment\n\nrealizations=2\n")
        out = tmp_path / "c1"
        code = main([
            "generate", "--config", str(cfg_file), "--seed", "5",
            "--out", str(out),
        ])
        assert code == EXIT_OK
        run_cfg = (out / "run.cfg").read_text()
        assert "n_raw=150" in run_cfg  # from file
        assert "seed=5" in run_cfg  # flag wins over file
        assert "realizations=2" in run_cfg

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("n_raw=10\nbogus=1\n")
        code = main(["generate", "--config", str(cfg_file), "--out", str(tmp_path / "o")])
        assert code == EXIT_USAGE
        assert "bogus" in capsys.readouterr().err

    def test_malformed_config_line(self, tmp_path, capsys):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("just a line\n")
        assert main(["generate", "--config", str(cfg_file), "--out", "o"]) == EXIT_USAGE

    def test_missing_config_file_is_data_error(self, tmp_path):
        code = main(["generate", "--config", str(tmp_path / "nope.cfg"), "--out", "o"])
        assert code == EXIT_DATA

    def test_missing_required_option(self, capsys):
        assert main(["generate"]) == EXIT_USAGE
        assert "--out" in capsys.readouterr().err

    def test_bad_int_in_config(self, tmp_path, capsys):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("n_raw=many\n")
        assert main(["generate", "--config", str(cfg_file), "--out", "o"]) == EXIT_USAGE

    def test_bad_choice_in_config(self, tmp_path, corpus_dir, capsys):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("encoder=conv\n")
        code = main([
            "train", "--config", str(cfg_file),
            "--corpus", str(corpus_dir), "--out", str(tmp_path / "o"),
        ])
        assert code == EXIT_USAGE

    def test_unknown_flag(self, capsys):
        assert main(["generate", "--frobnicate"]) == EXIT_USAGE

    def test_invalid_smoothing_flag(self, corpus_dir, tmp_path, capsys):
        code = main([
            "train", "--corpus", str(corpus_dir), "--out", str(tmp_path / "o"),
            "--label-smoothing", "0.05",
        ])
        assert code == EXIT_USAGE

    def test_threads_env_var(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SRFORGE_THREADS", "3")
        out = tmp_path / "c"
        assert main(["generate", "--out", str(out), "--n-raw", "60"]) == EXIT_OK
        assert "threads=3" in (out / "run.cfg").read_text()

    def test_threads_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SRFORGE_THREADS", "3")
        out = tmp_path / "c"
        code = main(["generate", "--out", str(out), "--n-raw", "60", "--threads", "2"])
        assert code == EXIT_OK
        assert "threads=2" in (out / "run.cfg").read_text()

    def test_nonpositive_threads_rejected(self, monkeypatch, capsys):
        monkeypatch.setenv("SRFORGE_THREADS", "-1")
        assert main(["generate", "--out", "o", "--n-raw", "60"]) == EXIT_USAGE


class TestGenerate:
    def test_stage_counts_and_determinism(self, tmp_path, capsys):
        args = ["generate", "--n-raw", "200", "--seed", "7", "--realizations", "2"]
        assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
        first = capsys.readouterr().out
        counts = dict(
            line.split() for line in first.strip().splitlines() if " " in line
        )
        assert int(counts["raw"]) >= int(counts["valid"]) >= int(counts["unique"])

        assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "data.bin").read_bytes() == (b / "data.bin").read_bytes()
        assert (a / "skeletons.txt").read_text() == (b / "skeletons.txt").read_text()
        assert (a / "split.json").read_text() == (b / "split.json").read_text()


class TestTrain:
    def test_missing_corpus_is_data_error(self, tmp_path, capsys):
        code = main([
            "train", "--corpus", str(tmp_path / "nocorpus"), "--out", str(tmp_path / "o"),
        ])
        assert code == EXIT_DATA

    def test_deterministic_metrics(self, corpus_dir, tmp_path, capsys):
        base = [
            "train", "--corpus", str(corpus_dir), "--epochs", "1",
            "--encoder", "mlp", "--seed", "3", "--warmup", "100",
        ]
        assert main(base + ["--out", str(tmp_path / "r1")]) == EXIT_OK
        assert main(base + ["--out", str(tmp_path / "r2")]) == EXIT_OK
        m1 = (tmp_path / "r1" / "metrics.csv").read_bytes()
        m2 = (tmp_path / "r2" / "metrics.csv").read_bytes()
        assert m1 == m2
        run_cfg = (tmp_path / "r1" / "run.cfg").read_text()
        assert "batch_size=64" in run_cfg  # desk profile default resolved

    def test_resume_continues_step_counter(self, corpus_dir, tmp_path, capsys):
        base = [
            "train", "--corpus", str(corpus_dir), "--epochs", "1",
            "--encoder", "mlp", "--warmup", "100",
        ]
        assert main(base + ["--out", str(tmp_path / "r1")]) == EXIT_OK
        steps_first = int(capsys.readouterr().out.split("steps ")[1].split()[0])
        code = main(base + [
            "--out", str(tmp_path / "r2"),
            "--resume", str(tmp_path / "r1" / "model_final.ckpt"),
        ])
        assert code == EXIT_OK
        steps_second = int(capsys.readouterr().out.split("steps ")[1].split()[0])
        assert steps_second == 2 * steps_first


class TestPredict:
    def test_forced_model_prints_tokens_and_infix(self, tmp_path, capsys):
        ckpt = forced_checkpoint(tmp_path / "m.ckpt", "x1")
        table = tmp_path / "in.txt"
        write_raw_table(table)
        code = main(["predict", "--checkpoint", str(ckpt), "--input", str(table)])
        assert code == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert out == ["x1", "x1"]

    def test_problem_layout_input(self, tmp_path, capsys):
        ckpt = forced_checkpoint(tmp_path / "m.ckpt", "x2")
        table = tmp_path / "in.txt"
        np.savetxt(table, np.random.default_rng(0).uniform(1, 2, (8, 3)), fmt="%.6g")
        code = main([
            "predict", "--checkpoint", str(ckpt), "--input", str(table),
            "--layout", "problem",
        ])
        assert code == EXIT_OK
        assert capsys.readouterr().out.splitlines()[0] == "x2"

    def test_incomplete_decode_exit_code(self, tmp_path, capsys):
        ckpt = forced_checkpoint(tmp_path / "m.ckpt", "add")
        table = tmp_path / "in.txt"
        write_raw_table(table)
        code = main(["predict", "--checkpoint", str(ckpt), "--input", str(table)])
        assert code == EXIT_NUMERIC
        err = capsys.readouterr().err
        assert "incomplete decode" in err and "add add" in err

    def test_malformed_table(self, tmp_path, capsys):
        ckpt = forced_checkpoint(tmp_path / "m.ckpt", "x1")
        table = tmp_path / "in.txt"
        table.write_text("1 2 three 4 5 6 7\n")
        code = main(["predict", "--checkpoint", str(ckpt), "--input", str(table)])
        assert code == EXIT_DATA

    def test_wrong_column_count_raw(self, tmp_path, capsys):
        ckpt = forced_checkpoint(tmp_path / "m.ckpt", "x1")
        table = tmp_path / "in.txt"
        np.savetxt(table, np.ones((5, 4)), fmt="%.3g")
        code = main(["predict", "--checkpoint", str(ckpt), "--input", str(table)])
        assert code == EXIT_DATA

    def test_missing_checkpoint(self, tmp_path):
        table = tmp_path / "in.txt"
        write_raw_table(table)
        code = main([
            "predict", "--checkpoint", str(tmp_path / "none.ckpt"),
            "--input", str(table),
        ])
        assert code == EXIT_DATA


class TestEvaluate:
    def test_oracle_all_zero_and_seed_stable(self, tmp_path, capsys):
        problems = make_problem_dir(tmp_path, truth="C*x1 + log(x2)")
        args = [
            "evaluate", "--problems", str(problems), "--oracle",
            "--n-obs", "10", "--repeats", "3",
        ]
        assert main(args + ["--out", str(tmp_path / "r1")]) == EXIT_OK
        console = capsys.readouterr().out
        assert "easy 0.000000" in console
        assert main(args + ["--out", str(tmp_path / "r2")]) == EXIT_OK
        r1 = (tmp_path / "r1" / "report.json").read_bytes()
        r2 = (tmp_path / "r2" / "report.json").read_bytes()
        assert r1 == r2
        payload = json.loads(r1)
        assert payload["group_means"] == {"easy": 0.0}

    def test_model_checkpoint_scores_known_value(self, tmp_path, capsys):
        # forced x1 vs standardized truth mul(C, x1): distance 2 of 3
        problems = make_problem_dir(tmp_path, truth="x1")
        ckpt = forced_checkpoint(tmp_path / "m.ckpt", "x1")
        code = main([
            "evaluate", "--problems", str(problems), "--checkpoint", str(ckpt),
            "--out", str(tmp_path / "r"), "--n-obs", "10", "--repeats", "3",
        ])
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "r" / "report.json").read_text())
        assert payload["group_means"]["easy"] == pytest.approx(2 / 3)

    def test_threads_do_not_change_result(self, tmp_path, capsys):
        problems = make_problem_dir(tmp_path, truth="mul C x2")
        args = [
            "evaluate", "--problems", str(problems), "--oracle",
            "--n-obs", "10", "--repeats", "3",
        ]
        assert main(args + ["--out", str(tmp_path / "t1"), "--threads", "1"]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "t2"), "--threads", "4"]) == EXIT_OK
        assert (tmp_path / "t1" / "report.json").read_bytes() == (
            tmp_path / "t2" / "report.json"
        ).read_bytes()

    def test_checkpoint_required_without_oracle(self, tmp_path, capsys):
        problems = make_problem_dir(tmp_path)
        code = main([
            "evaluate", "--problems", str(problems), "--out", str(tmp_path / "r"),
        ])
        assert code == EXIT_USAGE

    def test_missing_problem_dir(self, tmp_path):
        code = main([
            "evaluate", "--problems", str(tmp_path / "none"), "--oracle",
            "--out", str(tmp_path / "r"),
        ])
        assert code == EXIT_DATA


class TestCountParams:
    def test_default_table(self, capsys):
        assert main(["count-params"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "mlp closed 6863892 allocated 6863892" in out
        assert "att closed 7523348 allocated 7523348" in out
        assert "mix closed 9622548 allocated 9622548" in out

    def test_tiny_config(self, capsys):
        assert main(["count-params", "--d-model", "8", "--n-enc", "1",
                     "--n-dec", "1", "--heads", "2"]) == EXIT_OK
        for line in capsys.readouterr().out.strip().splitlines():
            assert "MISMATCH" not in line

    def test_indivisible_heads_is_config_error(self, capsys):
        assert main(["count-params", "--d-model", "10", "--heads", "4"]) == EXIT_USAGE


class TestTreedist:
    def test_known_distance(self, capsys):
        assert main(["treedist", "x1", "add x1 x2"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "ted 2" in out and "normalized 0.666667" in out

    def test_identical(self, capsys):
        assert main(["treedist", "mul C x3", "mul C x3"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "ted 0" in out and "normalized 0.000000" in out

    def test_bad_tokens_are_data_error(self, capsys):
        assert main(["treedist", "frob x1", "x1"]) == EXIT_DATA
