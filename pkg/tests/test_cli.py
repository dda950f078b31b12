"""Command-line interface: every subcommand, exit codes, output artifacts."""

import numpy as np

from rfcnn import cli
from rfcnn.audio import AudioClip, write_wav
from rfcnn.fileio import load_dataset, load_norm_stats


def run(argv):
    return cli.main(argv)


def synth_dataset(tmp_path, name, seed, n=8, classes=2):
    out = tmp_path / name
    code = run([
        "synth", "--task", "pattern-only", "--classes", str(classes),
        "--n", str(n), "--out", str(out), "--mel-bins", "32", "--frames", "16",
        "--pattern-size", "4", "--margin", "8", "--seed", str(seed),
    ])
    assert code == 0
    return out


class TestArch:
    def test_show(self, capsys):
        assert run(["arch", "show", "--rho", "5", "--variant", "plain"]) == 0
        out = capsys.readouterr().out
        assert "RB 2" in out and "max RF  87x87" in out

    def test_save_and_reload(self, tmp_path, capsys):
        spec_file = tmp_path / "net.spec"
        assert run(["arch", "save", "--rho", "3", "--variant", "freqaware",
                    "--out", str(spec_file)]) == 0
        text = spec_file.read_text()
        assert text.startswith("rfcnn-arch v1")
        assert "variant freqaware" in text

    def test_save_without_out_is_usage_error(self):
        assert run(["arch", "save", "--rho", "3"]) == 1

    def test_rho_out_of_range_is_usage_error(self):
        assert run(["arch", "show", "--rho", "25"]) == 1


class TestRf:
    def test_single_rho(self, capsys):
        assert run(["rf", "--rho", "5"]) == 0
        assert "max_rf=87x87" in capsys.readouterr().out

    def test_table_has_22_rows(self, capsys):
        assert run(["rf", "--table"]) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("rho=")]
        assert len(lines) == 22
        assert lines[0].startswith("rho=0 ") and "23x23" in lines[0]
        assert "583x583" in lines[21]

    def test_check_table_passes(self, capsys):
        assert run(["rf", "--check-table"]) == 0
        out = capsys.readouterr().out
        assert out.count("rho=") == 22
        assert "all 22 entries match" in out

    def test_check_table_mismatch_exits_3(self, monkeypatch, capsys):
        monkeypatch.setattr(
            cli, "verify_reference_table",
            lambda *a, **k: ["rho=0: computed 21x21, expected 23x23"],
        )
        assert run(["rf", "--check-table"]) == 3
        assert "rho=0" in capsys.readouterr().err

    def test_no_arguments_is_usage_error(self):
        assert run(["rf"]) == 1


class TestSynth:
    def test_writes_dataset_and_config(self, tmp_path):
        out = synth_dataset(tmp_path, "ds", seed=3)
        clips = load_dataset(out)
        assert len(clips) == 8
        assert (out / "config.txt").exists()
        config = (out / "config.txt").read_text()
        assert "version = " in config and "task.kind = pattern-only" in config

    def test_deterministic(self, tmp_path):
        a = synth_dataset(tmp_path, "a", seed=5)
        b = synth_dataset(tmp_path, "b", seed=5)
        for clip_a, clip_b in zip(load_dataset(a), load_dataset(b)):
            assert np.array_equal(clip_a.values, clip_b.values)

    def test_impossible_geometry_is_usage_error(self, tmp_path):
        code = run(["synth", "--task", "freq-position", "--classes", "4",
                    "--n", "8", "--out", str(tmp_path / "x"),
                    "--mel-bins", "16", "--margin", "8"])
        assert code == 1


class TestPreprocess:
    def _write_wavs(self, directory, n=3):
        directory.mkdir()
        rng = np.random.default_rng(0)
        for i in range(n):
            tone = 0.3 * np.sin(2 * np.pi * 440.0 * np.arange(6000) / 22050)
            noise = 0.05 * rng.standard_normal(6000)
            write_wav(directory / f"clip{i}.wav",
                      AudioClip((tone + noise).reshape(1, -1), 22050))

    def test_pipeline_to_dataset(self, tmp_path):
        wav_dir = tmp_path / "wavs"
        self._write_wavs(wav_dir)
        labels = tmp_path / "labels.csv"
        labels.write_text("clip0.wav,0\nclip1.wav,1\nclip2.wav,0\n")
        out = tmp_path / "features"
        code = run(["preprocess", "--in", str(wav_dir), "--out", str(out),
                    "--mels", "32", "--labels", str(labels), "--fit-norm"])
        assert code == 0
        clips = load_dataset(out)
        assert len(clips) == 3
        assert clips[0].values.shape[:2] == (2, 32)
        assert [c.label for c in clips] == [0, 1, 0]
        stats = load_norm_stats(out)
        assert stats.mean.shape == (2, 32)
        assert (out / "config.txt").exists()

    def test_missing_wavs_is_data_error(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert run(["preprocess", "--in", str(empty),
                    "--out", str(tmp_path / "o")]) == 2

    def test_norm_application(self, tmp_path):
        wav_dir = tmp_path / "wavs"
        self._write_wavs(wav_dir)
        first = tmp_path / "first"
        assert run(["preprocess", "--in", str(wav_dir), "--out", str(first),
                    "--mels", "32", "--fit-norm"]) == 0
        second = tmp_path / "second"
        assert run(["preprocess", "--in", str(wav_dir), "--out", str(second),
                    "--mels", "32", "--norm", str(first)]) == 0
        normalized = load_dataset(second)
        pooled = np.concatenate([c.values for c in normalized], axis=2)
        assert abs(float(pooled.mean())) < 1e-3


class TestTrainEvalGrid:
    def _train(self, tmp_path, out_name="run", extra=()):
        train_dir = synth_dataset(tmp_path, "train", seed=0, n=12)
        test_dir = synth_dataset(tmp_path, "test", seed=1, n=6)
        out = tmp_path / out_name
        code = run([
            "train", "--data", str(train_dir), "--test-data", str(test_dir),
            "--rho", "0", "--epochs", "2", "--seed", "1", "--out", str(out),
            "--base-width", "2", "--batch-size", "4", *extra,
        ])
        return code, out

    def test_train_outputs(self, tmp_path, capsys):
        code, out = self._train(tmp_path)
        assert code == 0
        assert (out / "model.ckpt").exists()
        assert (out / "config.txt").exists()
        report = (out / "report.txt").read_text()
        assert report.count("epoch=") == 2
        summary = (out / "summary.txt").read_text()
        assert "test_accuracy_mean" in summary
        assert "final test_acc=" in capsys.readouterr().out

    def test_train_deterministic(self, tmp_path):
        _, out_a = self._train(tmp_path, "a")
        _, out_b = self._train(tmp_path, "b")
        assert (out_a / "report.txt").read_text() == (out_b / "report.txt").read_text()

    def test_train_snapshot_ring(self, tmp_path):
        code, out = self._train(tmp_path, "ring", extra=("--snapshots", "1"))
        assert code == 0
        snapshots = sorted(out.glob("snapshot_*.ckpt"))
        assert [p.name for p in snapshots] == ["snapshot_0002.ckpt"]

    def test_train_spec_file(self, tmp_path):
        spec_file = tmp_path / "net.spec"
        assert run(["arch", "save", "--rho", "0", "--base-width", "2",
                    "--classes", "2", "--out", str(spec_file)]) == 0
        train_dir = synth_dataset(tmp_path, "train", seed=0, n=8)
        test_dir = synth_dataset(tmp_path, "test", seed=1, n=4)
        code = run(["train", "--data", str(train_dir), "--test-data",
                    str(test_dir), "--spec", str(spec_file), "--epochs", "1",
                    "--out", str(tmp_path / "out"), "--batch-size", "4"])
        assert code == 0

    def test_train_missing_data_is_data_error(self, tmp_path):
        assert run(["train", "--data", str(tmp_path / "nope"),
                    "--test-data", str(tmp_path / "nope"),
                    "--rho", "0", "--epochs", "1",
                    "--out", str(tmp_path / "o")]) == 2

    def test_train_without_rho_or_spec_is_usage_error(self, tmp_path):
        train_dir = synth_dataset(tmp_path, "train", seed=0, n=8)
        assert run(["train", "--data", str(train_dir), "--test-data",
                    str(train_dir), "--epochs", "1",
                    "--out", str(tmp_path / "o")]) == 1

    def test_eval_and_average(self, tmp_path, capsys):
        code, out = self._train(tmp_path, "run", extra=("--snapshots", "2"))
        assert code == 0
        test_dir = tmp_path / "test"
        capsys.readouterr()
        code = run(["eval", "--checkpoints", str(out / "snapshot_*.ckpt"),
                    "--data", str(test_dir), "--average"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert sum(1 for l in lines if l.startswith("checkpoint=")) == 2
        assert any(l.startswith("averaged_over=2") for l in lines)

    def test_eval_no_match_is_data_error(self, tmp_path):
        ds = synth_dataset(tmp_path, "d", seed=0)
        assert run(["eval", "--checkpoints", str(tmp_path / "*.nope"),
                    "--data", str(ds)]) == 2

    def test_grid(self, tmp_path, capsys):
        train_dir = synth_dataset(tmp_path, "train", seed=0, n=12)
        test_dir = synth_dataset(tmp_path, "test", seed=1, n=6)
        out = tmp_path / "grid"
        code = run([
            "grid", "--rhos", "0,1", "--variants", "plain,freqaware",
            "--runs", "2", "--data", str(train_dir), "--test-data",
            str(test_dir), "--out", str(out), "--epochs", "1",
            "--base-width", "2", "--batch-size", "4", "--last-k", "1",
        ])
        assert code == 0
        table = (out / "grid.tsv").read_text().splitlines()
        body = [l for l in table if l and not l.startswith(("rho\t", "# "))]
        assert len(body) == 4  # 2 rhos x 2 variants
        for line in body:
            assert len(line.split("\t")) == 7
        best = [l for l in table if l.startswith("# best")]
        assert len(best) == 1
        # best marker equals argmax of the mean column
        means = {tuple(l.split("\t")[:2]): float(l.split("\t")[2]) for l in body}
        marked = tuple(best[0].split("\t")[1:3])
        assert means[marked] == max(means.values())

    def test_grid_cell_determinism(self, tmp_path):
        train_dir = synth_dataset(tmp_path, "train", seed=0, n=12)
        test_dir = synth_dataset(tmp_path, "test", seed=1, n=6)
        outputs = []
        for name in ("g1", "g2"):
            out = tmp_path / name
            assert run([
                "grid", "--rhos", "0", "--variants", "plain", "--runs", "1",
                "--data", str(train_dir), "--test-data", str(test_dir),
                "--out", str(out), "--epochs", "1", "--base-width", "2",
                "--batch-size", "4", "--last-k", "1",
            ]) == 0
            outputs.append((out / "grid.tsv").read_text())
        assert outputs[0] == outputs[1]

    def test_grid_bad_rhos_is_usage_error(self, tmp_path):
        ds = synth_dataset(tmp_path, "d", seed=0)
        assert run(["grid", "--rhos", "0,x", "--variants", "plain",
                    "--data", str(ds), "--test-data", str(ds),
                    "--out", str(tmp_path / "g")]) == 1


class TestConfigHandling:
    def test_config_file_applies(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("batch_size = 4\nmixup.enabled = true\nmixup.alpha = 0.4\n")
        train_dir = synth_dataset(tmp_path, "train", seed=0, n=12)
        test_dir = synth_dataset(tmp_path, "test", seed=1, n=6)
        out = tmp_path / "out"
        code = run(["train", "--data", str(train_dir), "--test-data",
                    str(test_dir), "--rho", "0", "--epochs", "1",
                    "--base-width", "2", "--out", str(out),
                    "--config", str(cfg)])
        assert code == 0
        effective = (out / "config.txt").read_text()
        assert "mixup.alpha = 0.4" in effective
        assert "mixup.enabled = True" in effective

    def test_unknown_key_is_usage_error(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("dropout = 0.5\n")
        ds = synth_dataset(tmp_path, "d", seed=0)
        code = run(["train", "--data", str(ds), "--test-data", str(ds),
                    "--rho", "0", "--epochs", "1", "--out",
                    str(tmp_path / "o"), "--config", str(cfg)])
        assert code == 1
        assert "dropout" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self):
        assert run(["rf", "--frobnicate"]) == 1

    def test_unknown_command_is_usage_error(self):
        assert run(["explode"]) == 1
