import json

import numpy as np
import pytest

from holocell import cli
from holocell.checkpoint import save_checkpoint
from holocell.cells import build_model


def run(argv):
    return cli.main(argv)


class TestParseRange:
    def test_single(self):
        assert cli.parse_range("5") == [5]

    def test_span(self):
        assert cli.parse_range("1..4") == [1, 2, 3, 4]

    def test_bad(self):
        with pytest.raises(cli.UsageError):
            cli.parse_range("4..1")
        with pytest.raises(cli.UsageError):
            cli.parse_range("a..b")


class TestCapacity:
    def test_writes_manifest_and_csv(self, tmp_path):
        out = tmp_path / "sweep"
        rc = run(["capacity", "--items", "1..3", "--copies", "1", "--nh", "16",
                  "--trials", "2", "--seed", "5", "--out", str(out)])
        assert rc == 0
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["command"] == "capacity"
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 4  # header + 3 rows

    def test_deterministic_bytes(self, tmp_path):
        argv = ["capacity", "--items", "2..4", "--copies", "1..2", "--nh", "16",
                "--trials", "1", "--seed", "9"]
        run(argv + ["--out", str(tmp_path / "a")])
        run(argv + ["--out", str(tmp_path / "b")])
        assert (tmp_path / "a/sweep.csv").read_bytes() == \
               (tmp_path / "b/sweep.csv").read_bytes()

    def test_paired_mode(self, tmp_path):
        out = tmp_path / "p"
        rc = run(["capacity", "--items", "1..3", "--copies", "1..3", "--nh",
                  "16", "--paired", "--out", str(out)])
        assert rc == 0
        assert len((out / "sweep.csv").read_text().strip().splitlines()) == 4

    def test_paired_length_mismatch_is_usage_error(self, tmp_path):
        rc = run(["capacity", "--items", "1..3", "--copies", "1..2", "--nh",
                  "16", "--paired", "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_roundtrip_artifacts(self, tmp_path):
        out = tmp_path / "rt"
        rc = run(["capacity", "--items", "1", "--copies", "1", "--nh", "64",
                  "--roundtrip-items", "5", "--roundtrip-copies", "3",
                  "--out", str(out)])
        assert rc == 0
        doc = json.loads((out / "roundtrip.json").read_text())
        assert doc["n_items"] == 5 and doc["n_copies"] == 3
        est = np.fromfile(out / "reconstruction.bin", dtype="<f8")
        assert est.shape == (64,)

    def test_image_roundtrip(self, tmp_path):
        img = tmp_path / "img.raw"
        img.write_bytes(bytes(range(24)))
        out = tmp_path / "img_out"
        rc = run(["capacity", "--items", "1", "--copies", "1", "--nh", "16",
                  "--image", str(img), "--width", "2", "--height", "2",
                  "--channels", "6", "--roundtrip-items", "1",
                  "--out", str(out)])
        assert rc == 0
        assert json.loads((out / "roundtrip.json").read_text())[
            "mse_per_element"] < 1e-15

    def test_odd_nh_is_usage_error(self, tmp_path):
        rc = run(["capacity", "--items", "1", "--copies", "1", "--nh", "15",
                  "--out", str(tmp_path / "x")])
        assert rc == 2


TRAIN_BASE = ["train", "--task", "copy", "--model", "lstm", "--nh", "8",
              "--minibatch", "2", "--steps", "2", "--eval-every", "1",
              "--eval-episodes", "2", "--alphabet", "4"]


class TestTrain:
    def test_artifacts(self, tmp_path, capsys):
        out = tmp_path / "run"
        rc = run(TRAIN_BASE + ["--seed", "1", "--out", str(out)])
        assert rc == 0
        for name in ("manifest.json", "run.json", "curve.csv",
                     "ckpt_latest.json", "ckpt_latest.bin",
                     "ckpt_final.json", "ckpt_final.bin"):
            assert (out / name).exists(), name
        assert "step 1" in capsys.readouterr().out

    def test_deterministic_curve(self, tmp_path):
        run(TRAIN_BASE + ["--seed", "2", "--out", str(tmp_path / "a")])
        run(TRAIN_BASE + ["--seed", "2", "--out", str(tmp_path / "b")])

        def strip_wall(p):
            rows = [r.rsplit(",", 1)[0] for r in
                    (p / "curve.csv").read_text().splitlines()]
            return "\n".join(rows)

        assert strip_wall(tmp_path / "a") == strip_wall(tmp_path / "b")
        assert (tmp_path / "a/ckpt_final.bin").read_bytes() == \
               (tmp_path / "b/ckpt_final.bin").read_bytes()

    def test_optimizer_flags_recorded(self, tmp_path):
        out = tmp_path / "opt"
        rc = run(TRAIN_BASE + ["--seed", "3", "--lr", "2e-3", "--beta1",
                               "0.8", "--beta2", "0.95", "--adam-eps", "1e-6",
                               "--out", str(out)])
        assert rc == 0
        doc = json.loads((out / "run.json").read_text())["run_config"]
        assert doc["learning_rate"] == 2e-3
        assert doc["adam_beta1"] == 0.8
        assert doc["adam_beta2"] == 0.95
        assert doc["adam_eps"] == 1e-6

    def test_copies_on_lstm_is_usage_error(self, tmp_path):
        rc = run(["train", "--task", "copy", "--model", "lstm", "--copies",
                  "4", "--steps", "1", "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_unknown_task_is_usage_error(self, tmp_path):
        rc = run(["train", "--task", "sort", "--model", "lstm",
                  "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_bytes_without_path_is_io_error(self, tmp_path):
        rc = run(["train", "--task", "bytes", "--model", "lstm", "--nh", "8",
                  "--steps", "1", "--out", str(tmp_path / "x")])
        assert rc == 3

    def test_seed_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HOLOCELL_SEED", "123")
        out = tmp_path / "env"
        rc = run(TRAIN_BASE + ["--out", str(out)])
        assert rc == 0
        doc = json.loads((out / "run.json").read_text())
        assert doc["seed"] == 123


class TestEval:
    def test_eval_prints_metrics(self, tmp_path, capsys):
        ckpt = tmp_path / "m.json"
        save_checkpoint(build_model("lstm", 6, 4, 8, seed=0), ckpt)
        rc = run(["eval", "--task", "copy", "--model", "lstm", "--nh", "8",
                  "--alphabet", "4", "-n", "3", "--ckpt", str(ckpt)])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["n"] == 3
        assert 0.0 <= doc["masked_accuracy"] <= 1.0

    def test_dim_mismatch_is_io_error(self, tmp_path, capsys):
        ckpt = tmp_path / "m.json"
        save_checkpoint(build_model("lstm", 5, 5, 8, seed=0), ckpt)
        rc = run(["eval", "--task", "copy", "--model", "lstm", "--nh", "8",
                  "--alphabet", "4", "--ckpt", str(ckpt)])
        assert rc == 3
        assert capsys.readouterr().out == ""  # no partial JSON on stdout

    def test_corrupt_checkpoint_is_io_error(self, tmp_path, capsys):
        ckpt = tmp_path / "m.json"
        save_checkpoint(build_model("lstm", 6, 4, 8, seed=0), ckpt)
        raw = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "m.bin").write_bytes(raw[:-4])
        rc = run(["eval", "--task", "copy", "--model", "lstm", "--nh", "8",
                  "--alphabet", "4", "--ckpt", str(ckpt)])
        assert rc == 3
        assert capsys.readouterr().out == ""

    def test_missing_checkpoint_is_io_error(self, tmp_path):
        rc = run(["eval", "--task", "copy", "--model", "lstm", "--nh", "8",
                  "--alphabet", "4", "--ckpt", str(tmp_path / "nope.json")])
        assert rc == 3


class TestDump:
    def test_copy_sample_round_trips(self, capsys):
        rc = run(["dump", "--task", "copy", "-n", "2", "--seed", "3"])
        assert rc == 0
        out = capsys.readouterr().out
        blocks = out.strip("\n").split("\n")
        assert len(blocks) == 4  # 2 episodes x (text, marks)
        text, marks = blocks[0], blocks[1]
        assert len(text) == 10 + 100 + 1 + 10
        assert marks.count("^") == 10
        # marked positions sit on the trailing answer steps
        assert marks.rstrip().endswith("^" * 10)

    def test_stream_dump_deterministic(self, capsys):
        run(["dump", "--task", "arith", "-n", "3", "--seed", "7"])
        a = capsys.readouterr().out
        run(["dump", "--task", "arith", "-n", "3", "--seed", "7"])
        assert a == capsys.readouterr().out
        assert "=" in a and "]" in a

    def test_xml_dump_marks_forced_chars(self, capsys):
        run(["dump", "--task", "xml", "-n", "1", "--seed", "1",
             "--window", "60"])
        out = capsys.readouterr().out.splitlines()
        text, marks = out[0], out[1]
        for i, ch in enumerate(text[1:], start=1):
            if ch == "<" and i < len(marks):
                assert marks[i] == "^"

    def test_zero_n_empty_output(self, capsys):
        rc = run(["dump", "--task", "copy", "-n", "0"])
        assert rc == 0
        assert capsys.readouterr().out == ""

    def test_negative_n_usage_error(self):
        assert run(["dump", "--task", "copy", "-n", "-1"]) == 2

    def test_bytes_unsupported(self):
        assert run(["dump", "--task", "bytes"]) == 2
