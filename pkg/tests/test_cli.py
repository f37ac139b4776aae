import subprocess
import sys

import numpy as np
import pytest

from groupenc.benchmark import BenchmarkPlan, parse_plan, run_benchmark, summary_table
from groupenc.cli import main
from groupenc.data import load_matrix, save_matrix
from groupenc.errors import ConfigError, FormatError


@pytest.fixture
def counts_csv(tmp_path):
    gen = np.random.default_rng(0)
    counts = gen.poisson(3.0, size=(80, 30)) + gen.integers(0, 3, size=(80, 30))
    p = tmp_path / "counts.csv"
    header = ",".join(f"g{i}" for i in range(30))
    p.write_text(header + "\n" + "\n".join(",".join(map(str, r)) for r in counts) + "\n")
    return p


def _run(*args):
    return main([str(a) for a in args])


class TestPreprocessCommand:
    def test_pca_output(self, tmp_path, counts_csv):
        out = tmp_path / "pre.gmtx"
        assert _run("preprocess", counts_csv, "--pca", 12, "-o", out) == 0
        assert load_matrix(out).shape == (80, 12)
        assert (tmp_path / "pre.gpca").exists()

    def test_skip_norm_log(self, tmp_path):
        gen = np.random.default_rng(1)
        scaled = tmp_path / "scaled.csv"
        save_matrix(scaled, gen.normal(size=(40, 8)), "delimited_text")
        assert _run("preprocess", scaled, "--pca", 3, "--skip-norm-log", "-o", tmp_path / "o.csv") == 0
        # without the flag, negative values hit the log1p domain check
        assert _run("preprocess", scaled, "--pca", 3, "-o", tmp_path / "o2.csv") == 1

    def test_missing_file(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        assert _run("preprocess", missing, "-o", tmp_path / "o.csv") == 2
        assert str(missing) in capsys.readouterr().err


@pytest.fixture
def prepared(tmp_path, counts_csv):
    out = tmp_path / "pre.gmtx"
    assert _run("preprocess", counts_csv, "--pca", 10, "-o", out) == 0
    return out


class TestTrainEmbedEval:
    def test_pipeline(self, tmp_path, prepared, capsys):
        ckpt = tmp_path / "m.gmdl"
        assert _run("train", prepared, "-o", ckpt, "--epochs", 3, "--batch-size", 32, "--gamma", 5) == 0
        assert "epochs=3" in capsys.readouterr().out
        log_lines = (tmp_path / "m.log.csv").read_text().splitlines()
        assert log_lines[0] == "epoch,total,primary,kl,seconds" and len(log_lines) == 4

        z = tmp_path / "z.csv"
        assert _run("embed", ckpt, prepared, "-o", z) == 0
        emb = load_matrix(z)
        assert emb.shape == (80, 2)
        z2 = tmp_path / "z2.csv"
        assert _run("embed", ckpt, prepared, "-o", z2) == 0
        assert z.read_bytes() == z2.read_bytes()

        assert _run("eval", prepared, z, "-o", tmp_path / "ev") == 0
        curve = (tmp_path / "ev.curve.csv").read_text().splitlines()
        assert len(curve) == 1 + 79

    def test_identity_eval(self, tmp_path, prepared):
        assert _run("eval", prepared, prepared, "-o", tmp_path / "id") == 0
        scores = (tmp_path / "id.scores.txt").read_text()
        assert "local_sp=1.0\n" in scores and "global_sp=1.0\n" in scores

    def test_subsample_repeatable(self, tmp_path, prepared):
        for tag in ("a", "b"):
            assert _run("eval", prepared, prepared, "--subsample", 50, "--seed", 7, "-o", tmp_path / tag) == 0
        assert (tmp_path / "a.curve.csv").read_bytes() == (tmp_path / "b.curve.csv").read_bytes()
        assert (tmp_path / "a.scores.txt").read_bytes() == (tmp_path / "b.scores.txt").read_bytes()
        assert "subsample=50" in (tmp_path / "a.scores.txt").read_text()

    def test_train_deterministic_bytes(self, tmp_path, prepared):
        for name in ("a", "b"):
            assert _run("train", prepared, "--model", "vae", "-o", tmp_path / f"{name}.gmdl",
                        "--epochs", 2, "--batch-size", 32) == 0
        assert (tmp_path / "a.gmdl").read_bytes() == (tmp_path / "b.gmdl").read_bytes()

    def test_resume(self, tmp_path, prepared):
        a, b = tmp_path / "a.gmdl", tmp_path / "b.gmdl"
        assert _run("train", prepared, "-o", a, "--epochs", 2, "--batch-size", 32) == 0
        assert _run("train", prepared, "-o", a, "--epochs", 4, "--batch-size", 32, "--resume", a) == 0
        assert _run("train", prepared, "-o", b, "--epochs", 4, "--batch-size", 32) == 0
        za, zb = tmp_path / "za.csv", tmp_path / "zb.csv"
        _run("embed", a, prepared, "-o", za)
        _run("embed", b, prepared, "-o", zb)
        assert za.read_bytes() == zb.read_bytes()

    def test_vae_gamma_usage_error(self, tmp_path, prepared, capsys):
        assert _run("train", prepared, "--model", "vae", "--gamma", 4, "-o", tmp_path / "m.gmdl") == 2
        assert "usage" in capsys.readouterr().err

    def test_embed_dim_mismatch(self, tmp_path, prepared):
        ckpt = tmp_path / "m.gmdl"
        _run("train", prepared, "-o", ckpt, "--epochs", 1, "--batch-size", 32)
        other = tmp_path / "other.csv"
        save_matrix(other, np.ones((5, 7)), "delimited_text")
        assert _run("embed", ckpt, other, "-o", tmp_path / "z.csv") == 2

    def test_paper_defaults(self):
        from groupenc.cli import build_parser

        args = build_parser().parse_args(["train", "x.csv", "-o", "m.gmdl"])
        assert (args.epochs, args.batch_size, args.lr) == (500, 512, 0.001)

    def test_entry_point_module(self):
        proc = subprocess.run([sys.executable, "-m", "groupenc.cli", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.strip()


def _tiny_plan(tmp_path, **kw):
    base = dict(dims=(2,), gammas=(4,), models=("vae", "groupenc"), seeds=(0, 1), output=str(tmp_path / "bench"),
                epochs=2, batch_size=64, synthetic_n=150, synthetic_dim=10, synthetic_clusters=3)
    base.update(kw)
    return BenchmarkPlan(**base)


class TestBenchmark:
    def test_record_count(self, tmp_path):
        records = run_benchmark(_tiny_plan(tmp_path))
        assert len(records) == 4
        assert all(r.status == "ok" and r.train_seconds > 0 for r in records)
        assert all(r.local_sp <= 1 and r.global_sp <= 1 for r in records)
        lines = (tmp_path / "bench" / "runs.csv").read_text().splitlines()
        assert lines[0] == "dataset,model,dim,gamma,seed,local_sp,global_sp,status" and len(lines) == 5
        assert (tmp_path / "bench" / "runs" / "synthetic_groupenc_g4_d2_s1.gmdl").exists()

    def test_single_seed_std_zero(self, tmp_path):
        records = run_benchmark(_tiny_plan(tmp_path, seeds=(3,)), write=False)
        table = summary_table(records, "global_sp")
        rows = table.splitlines()
        assert rows[0] == "dim,model,synthetic"
        assert all(r.endswith("+-0.000") for r in rows[1:])

    def test_failed_run_recorded(self, tmp_path):
        plan = _tiny_plan(tmp_path, datasets=(str(tmp_path / "missing.csv"),), seeds=(0,))
        records = run_benchmark(plan)
        assert len(records) == 2 and all(r.status.startswith("failed") for r in records)

    def test_plan_file(self, tmp_path):
        plan = parse_plan("# demo\ndims = 2, 5\nmodels=groupenc\ngammas=4,6\nseeds=0\nepochs=3\n", tmp_path)
        assert plan.dims == (2, 5) and plan.gammas == (4, 6) and plan.epochs == 3
        assert len(plan.runs()) == 4
        with pytest.raises(FormatError):
            parse_plan("colour=blue\n")
        with pytest.raises(ConfigError):
            parse_plan("seeds=\n")

    def test_cli_plan_and_determinism(self, tmp_path):
        plan = tmp_path / "plan.txt"
        plan.write_text("dims=2\nmodels=vae,groupenc\ngammas=4\nseeds=0\nepochs=2\nbatch_size=64\n"
                        "synthetic_n=120\nsynthetic_dim=8\nsynthetic_clusters=3\nsave_artifacts=no\n")
        for out in ("o1", "o2"):
            assert _run("benchmark", plan, "-o", tmp_path / out) == 0
        assert (tmp_path / "o1" / "runs.csv").read_bytes() == (tmp_path / "o2" / "runs.csv").read_bytes()
        assert not (tmp_path / "o1" / "runs").exists()

    def test_jobs_match_serial(self, tmp_path):
        serial = run_benchmark(_tiny_plan(tmp_path, seeds=(0,)), write=False)
        parallel = run_benchmark(_tiny_plan(tmp_path, seeds=(0,)), jobs=2, write=False)
        assert [r.row() for r in serial] == [r.row() for r in parallel]

    def test_benchmark_needs_input(self, tmp_path):
        assert _run("benchmark") == 2
