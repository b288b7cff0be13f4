import csv
import math

import numpy as np
import pytest

from gcnlab._jacobi import jacobi_eigh
from gcnlab.cli import epoch_header, fmt, main
from gcnlab.config import KEYS, ConfigError, ExperimentConfig, load_config, parse_config
from gcnlab.data import write_bundle
from gcnlab.graph import make_operator
from gcnlab.training import smoothing_scores

from conftest import sbm_dataset


def run(tmp_path, command, config, *extra, name="out"):
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(config)
    out = tmp_path / name
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def without_timing(path):
    rows = read_csv(path)
    drop = {i for i, h in enumerate(rows[0]) if h in ("ms", "seconds_mean")}
    return [[v for i, v in enumerate(r) if i not in drop] for r in rows]


@pytest.fixture(scope="module")
def sbm_bundle(tmp_path_factory):
    return write_bundle(sbm_dataset(), tmp_path_factory.mktemp("bundle") / "sbm")


class TestConfig:
    def test_defaults_documented(self):
        cfg = ExperimentConfig()
        assert cfg.lr == 0.01 and cfg.weight_decay == 5e-4 and cfg.dropout == 0.0 and cfg.hidden == 16
        assert set(KEYS) == set(ExperimentConfig.__dataclass_fields__)

    def test_parse(self):
        vals = parse_config("# comment\ndepth = 8  # trailing\n\nskip = auto\ndepths = 2, 4\neta_weight = 0.5\n")
        assert vals == {"depth": 8, "skip": None, "depths": (2, 4), "eta_weight": 0.5}

    @pytest.mark.parametrize("text", ["depthz = 3", "depth 3", "depth = x", "depth = 2\ndepth = 3", "skip = maybe"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError, match=":"):
            parse_config(text)

    def test_command_defaults_and_precedence(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("epochs = 7\n")
        cfg = load_config(p, "karate-demo", {"seeds": 3, "jobs": None})
        assert (cfg.depth, cfg.epochs, cfg.seeds, cfg.jobs) == (32, 7, 3, 1)
        assert load_config(p, "tricks").depth == 64


class TestFormatting:
    def test_nine_significant_digits(self):
        assert fmt(1 / 3) == "0.333333333"
        assert fmt(123456789012.0) == "1.23456789e+11"
        assert fmt(7) == "7" and fmt(math.nan) == "nan"

    def test_header(self):
        assert epoch_header(2) == [
            "epoch", "loss_l0", "loss_lreg", "acc_train", "acc_val", "acc_test",
            "smooth_feat_L1", "smooth_feat_L2", "smooth_node_L1", "smooth_node_L2", "ms",
        ]


class TestTrainCommand:
    def test_zero_epochs_header_only(self, tmp_path):
        code, out = run(tmp_path, "train", "epochs = 0\n")
        assert code == 0
        assert len(read_csv(out / "epochs.csv")) == 1
        assert not (out / "summary.csv").exists()

    def test_bad_dataset_path(self, tmp_path, capsys):
        code, out = run(tmp_path, "train", f"dataset = {tmp_path / 'missing'}\n")
        assert code == 2
        assert not out.exists()
        assert "missing" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        code, out = run(tmp_path, "train", "colour = red\n")
        assert code == 2 and not out.exists()

    def test_divergence_exit_code(self, tmp_path):
        with np.errstate(all="ignore"):
            code, out = run(tmp_path, "train", "depth = 6\nskip = false\noptimizer = sgd\nlr = 1e150\nepochs = 50\n")
        assert code == 1
        assert not (out / "epochs.csv").exists()

    def test_outputs_and_reproducibility(self, tmp_path, sbm_bundle):
        config = f"dataset = {sbm_bundle}\ndepth = 3\nepochs = 20\n"
        code, a = run(tmp_path, "train", config, name="a")
        assert code == 0
        code, b = run(tmp_path, "train", config, name="b")
        rows = read_csv(a / "epochs.csv")
        assert rows[0] == epoch_header(3) and len(rows) == 21
        assert without_timing(a / "epochs.csv") == without_timing(b / "epochs.csv")
        assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()
        summary = read_csv(a / "summary.csv")
        assert [r[0] for r in summary[1:]] == ["final", "best_val"]
        assert b"\r" not in (a / "epochs.csv").read_bytes()
        assert not list(a.glob(".*tmp"))

    def test_log_every(self, tmp_path):
        code, out = run(tmp_path, "train", "epochs = 10\n", "--log-every", "4")
        assert [r[0] for r in read_csv(out / "epochs.csv")[1:]] == ["0", "4", "8", "9"]


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    code, out = run(tmp_path_factory.mktemp("demo"), "karate-demo", "")
    assert code == 0
    return out


class TestKarateDemo:
    def test_epoch_rows(self, demo):
        rows = read_csv(demo / "epochs.csv")
        assert len(rows) == 501
        assert rows[0][-1] == "ms" and rows[0][6] == "smooth_feat_L1" and rows[0][-2] == "smooth_node_L32"

    def test_smoothing_files(self, demo):
        names = sorted(p.name for p in demo.glob("karate_smoothing_*.csv"))
        assert len(names) == 8

    def test_plain_smoothing_collapses(self, demo):
        rows = read_csv(demo / "karate_smoothing_k100_plain.csv")[1:]
        Y = np.array([[float(r[1]), float(r[2])] for r in rows])
        assert smoothing_scores(Y)[1] > 0.999
        assert np.abs(Y).max(axis=0).tolist() == [1.0, 1.0]

    def test_mean_sub_recovers_fiedler_signs(self, demo, karate):
        rows = read_csv(demo / "karate_smoothing_k100_meansub.csv")[1:]
        x = np.array([float(r[1]) for r in rows])
        sym = make_operator(karate.graph, "sym_renorm")
        _, vecs = jacobi_eigh(sym.matrix.to_dense())
        f = vecs[:, 1] / np.sqrt(sym.degrees_with_loops)
        agree = np.sum(np.sign(x) == np.sign(f))
        assert max(agree, 34 - agree) >= 32


class TestSweeps:
    def test_sweep_depth_shape(self, tmp_path):
        code, out = run(tmp_path, "sweep-depth", "epochs = 3\nseeds = 2\nsmoothing = false\n")
        assert code == 0
        rows = read_csv(out / "depth_sweep.csv")
        assert rows[0][:2] == ["family", "depth"]
        assert len(rows) - 1 == 5 * 2
        assert [r[1] for r in rows[1:6]] == ["2", "4", "8", "16", "32"]
        assert not (out / "runs").exists()

    def test_sweep_depth_logs_and_dnn(self, tmp_path):
        code, out = run(tmp_path, "sweep-depth", "epochs = 3\nseeds = 1\ndepths = 2,3\nfamilies = gcn,dnn\n", "--log-every", "1")
        assert code == 0
        assert len(read_csv(out / "depth_sweep.csv")) == 5
        assert len(read_csv(out / "runs" / "dnn_d3" / "epochs_seed0.csv")) == 4

    def test_jobs_match_serial(self, tmp_path, sbm_bundle):
        config = f"dataset = {sbm_bundle}\nepochs = 5\nseeds = 2\ndepths = 2,4\n"
        _, a = run(tmp_path, "sweep-depth", config, "--jobs", "1", name="serial")
        _, b = run(tmp_path, "sweep-depth", config, "--jobs", "2", name="parallel")
        assert (a / "depth_sweep.csv").read_bytes() == (b / "depth_sweep.csv").read_bytes()

    def test_sweep_eta(self, tmp_path, sbm_bundle):
        code, out = run(tmp_path, "sweep-eta", f"dataset = {sbm_bundle}\nepochs = 3\nseeds = 1\neta_depths = 2,4\n")
        assert code == 0
        rows = read_csv(out / "eta_sweep.csv")
        assert len([h for h in rows[0] if h.startswith("w=")]) == 11
        assert [r[:3] for r in rows[1:]] == [
            [d, s, st] for d in ("2", "4") for s in ("train", "test") for st in ("mean", "std")
        ]

    def test_tricks(self, tmp_path, sbm_bundle):
        code, out = run(tmp_path, "tricks", f"dataset = {sbm_bundle}\ndepth = 6\nepochs = 5\nseeds = 1\n")
        assert code == 0
        for trick in ("none", "mean_sub", "pair_norm", "batch_norm"):
            assert (out / trick / "epochs_seed0.csv").exists()
        rows = read_csv(out / "tricks_summary.csv")
        assert "seconds_mean" in rows[0] and len(rows) == 5
        assert all(float(r[rows[0].index("seconds_mean")]) > 0 for r in rows[1:])
