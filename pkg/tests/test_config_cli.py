import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from suda import cli, config, pipeline, protocol, scoring
from suda.config import RunConfig
from suda.errors import ConfigError, FormatError

from oracles import brute_force_eer

TINY = """\
# small enough to train in seconds
n_speakers = 8
n_phrases = 2
shared_hidden = 6
branch_hidden = 6
conv_channels = 6
optimizer = adam
epochs = 2
batch_size = 32
ablate_seeds = 1, 2
"""


class TestConfig:
    def test_defaults_roundtrip(self):
        cfg = RunConfig()
        assert config.parse(config.serialize(cfg)) == cfg
        assert cfg.optimizer == "sgd" and cfg.momentum == 0.9 and cfg.batch_size == 128 and cfg.seed == 2020

    @given(st.floats(1e-6, 1.0), st.floats(0.0, 1.0), st.booleans(), st.integers(1, 512),
           st.lists(st.integers(0, 10**6), min_size=1, max_size=4))
    def test_roundtrip_property(self, lr, alpha, masks, hidden, seeds):
        cfg = RunConfig(learning_rate=lr, alpha=alpha, masks_enabled=masks, shared_hidden=hidden,
                        ablate_seeds=tuple(seeds), work_dir="out dir/x")
        assert config.parse(config.serialize(cfg)) == cfg

    def test_comments_and_blank_lines(self):
        cfg = config.parse("\n# header\nepochs = 3  # short run\n\n")
        assert cfg.epochs == 3

    @pytest.mark.parametrize("text, match", [
        ("epoch = 3", "unknown key 'epoch'"),
        ("epochs = three", "epochs"),
        ("epochs = 3\nepochs = 4", "twice"),
        ("masks_enabled = yes", "masks_enabled"),
        ("alpha = 1.5", "alpha"),
        ("optimizer = rmsprop", "optimizer"),
        ("just words", "key = value"),
        ("split_ratios = 0.5, 0.5, 0.5", "split_ratios"),
    ])
    def test_errors_name_the_field(self, text, match):
        with pytest.raises(ConfigError, match=match):
            config.parse(text, "run.cfg")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="nope.cfg"):
            config.load(tmp_path / "nope.cfg")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny corpus taken through synth, extract, train (both variants) and embed."""
    root = tmp_path_factory.mktemp("cli")
    (root / "run.cfg").write_text(TINY)
    old = pytest.MonkeyPatch()
    old.chdir(root)
    for argv in (["synth"], ["extract"], ["train"], ["train", "--no-masks"], ["embed"]):
        assert cli.main(["--config", "run.cfg"] + argv) == 0, argv
    yield root
    old.undo()


class TestCommands:
    def test_artifacts(self, workspace):
        work = workspace / "work"
        for name in ("suda.ckpt", "modsuv.ckpt", "suda.trainlog.tsv", "modsuv.trainlog.tsv", "suda.emb"):
            assert (work / name).is_file(), name
        assert len(list((work / "feat").glob("*.feat"))) == 8 * 2 * 9

    def test_trainlog_header_and_identity(self, workspace):
        text = (workspace / "work" / "suda.trainlog.tsv").read_text()
        assert "# optimizer=adam" in text and "# masks_enabled=True" in text
        from suda.training import TrainLog
        log = TrainLog.from_tsv(text)
        for row in log.steps:
            assert row["L_total"] == ((row["L_Tspk"] + row["L_Tutt"]) + row["L_spk"]) + row["L_utt"]

    def test_checkpoint_records_variant(self, workspace):
        assert pipeline.load_model(workspace / "work" / "modsuv.ckpt").config_.masks_enabled is False

    def test_trials_score_eval(self, workspace, capsys):
        base = ["--config", "run.cfg"]
        assert cli.main(base + ["trials", "--condition", "IW"]) == 0
        trials = workspace / "work" / "trials_evaluation_IW.tsv"
        assert cli.main(base + ["score", "--trials", str(trials), "--embeddings", "work/suda.emb",
                                "--alpha", "0.5", "--out", "work/a.tsv"]) == 0
        assert cli.main(base + ["score", "--trials", str(trials), "--checkpoint", "work/suda.ckpt",
                                "--alpha", "0.5", "--out", "work/b.tsv"]) == 0
        a = (workspace / "work" / "a.tsv").read_bytes()
        assert a == (workspace / "work" / "b.tsv").read_bytes()
        records = scoring.parse_scores(a.decode())
        assert all(r.fused == pytest.approx(0.5 * r.s_spk + 0.5 * r.s_utt, abs=2e-6) for r in records)
        capsys.readouterr()
        assert cli.main(base + ["eval", "work/a.tsv"]) == 0
        report = capsys.readouterr().out
        tar = [r.fused for r in records if r.category == "TC"]
        non = [r.fused for r in records if r.category == "IW"]
        assert f"eer_percent={brute_force_eer(tar, non)[0]:.6f}" in report

    def test_eval_matches_oracle_on_fixture(self, workspace, capsys):
        path = workspace / "fixture.tsv"
        path.write_text("m_a\tu1\tTC\t0\t0\t0.800000\nm_a\tu2\tTC\t0\t0\t0.200000\n"
                        "m_a\tu3\tTW\t0\t0\t0.700000\nm_a\tu4\tTW\t0\t0\t0.100000\n")
        capsys.readouterr()
        assert cli.main(["eval", str(path)]) == 0
        assert "condition=TW\neer_percent=50.000000\n" in capsys.readouterr().out

    def test_train_is_repeatable(self, workspace):
        first = (workspace / "work" / "suda.ckpt").read_bytes()
        assert cli.main(["--config", "run.cfg", "train", "--out", "work/again.ckpt"]) == 0
        assert (workspace / "work" / "again.ckpt").read_bytes() == first

    def test_seed_flag_changes_training(self, workspace):
        assert cli.main(["--config", "run.cfg", "--seed", "99", "train", "--out", "work/s99.ckpt"]) == 0
        assert (workspace / "work" / "s99.ckpt").read_bytes() != (workspace / "work" / "suda.ckpt").read_bytes()

    def test_ablate(self, workspace, capsys):
        capsys.readouterr()
        assert cli.main(["--config", "run.cfg", "ablate"]) == 0
        out = capsys.readouterr().out
        assert "IC\tmean\t" in out and (workspace / "work" / "ablation.txt").read_text() == out

    @pytest.mark.parametrize("argv, match", [
        (["score", "--trials", "missing.tsv"], "missing.tsv"),
        (["embed", "--checkpoint", "work/none.ckpt"], "none.ckpt"),
        (["score", "--trials", "run.cfg", "--alpha", "1.5"], "alpha"),
        (["eval", "run.cfg"], "run.cfg"),
    ])
    def test_failures_exit_nonzero(self, workspace, capsys, argv, match):
        assert cli.main(["--config", "run.cfg"] + argv) != 0
        assert match in capsys.readouterr().err

    def test_bad_config_key(self, workspace, capsys):
        (workspace / "bad.cfg").write_text("epochz = 2\n")
        assert cli.main(["--config", "bad.cfg", "synth"]) == 1
        assert "epochz" in capsys.readouterr().err


class TestEmbeddingFile:
    def test_roundtrip(self):
        embs = {"b": (np.arange(3.0), -np.arange(3.0)), "a": (np.ones(3), np.zeros(3))}
        blob = pipeline.embeddings_to_bytes(embs)
        back = pipeline.embeddings_from_bytes(blob)
        assert list(back) == ["a", "b"]
        assert all(np.array_equal(back[k][i], embs[k][i]) for k in embs for i in (0, 1))
        with pytest.raises(FormatError):
            pipeline.embeddings_from_bytes(blob[:-1])
