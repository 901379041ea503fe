import json

import numpy as np
import pytest

from boxzoom.cli import main
from boxzoom.data import SceneSpec, generate, write_dataset
from boxzoom.env import Transition
from boxzoom.pnm import read_pnm, write_pnm
from boxzoom.trainer import TrainConfig, build_agent, save_agent

SMALL = ["--hidden", "8", "--grid", "4", "--lr", "1e-3", "--batch-size", "8"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    write_dataset(generate(SceneSpec(width=32, height=32, seed=5), 6), out)
    return out


def exit_code(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


def checkpoint(path, variant="1-stage"):
    cfg = TrainConfig(variant=variant, hidden=(8,), grid=4)
    save_agent(build_agent(cfg), path, cfg, 0)
    return str(path)


class TestGenData:
    def test_writes_count_and_is_reproducible(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert main(["gen-data", "--out", str(tmp_path / name), "--count", "5", "--seed", "3", "--size", "40x30"]) == 0
        manifest = (tmp_path / "a" / "manifest.csv").read_text()
        assert len([l for l in manifest.splitlines() if not l.startswith("#")]) == 5
        assert manifest == (tmp_path / "b" / "manifest.csv").read_text()
        assert read_pnm(tmp_path / "a" / "s3-00000.ppm").shape == (30, 40, 3)
        assert json.loads((tmp_path / "a" / "spec.json").read_text())["count"] == 5

    @pytest.mark.parametrize("args", [["--size", "0x0"], ["--size", "big"], ["--count", "0"]])
    def test_usage_errors(self, tmp_path, args, capsys):
        assert exit_code(["gen-data", "--out", str(tmp_path), *args]) == 1

    def test_unknown_command(self, capsys):
        assert exit_code(["fly"]) == 1


class TestTrain:
    def test_missing_dataset(self, tmp_path, capsys):
        assert main(["train", "--train-data", str(tmp_path / "nope.csv"), "--epochs", "1"]) != 0
        assert "not found" in capsys.readouterr().err

    def test_runs_and_writes_curves(self, tmp_path, dataset_dir, capsys):
        manifest = str(dataset_dir / "manifest.csv")
        args = ["train", "--train-data", manifest, "--test-data", manifest, "--epochs", "2", "--eval-every", "1",
                "--out-dir", str(tmp_path), *SMALL]
        assert main(args) == 0
        out = capsys.readouterr().out
        assert out.startswith("# boxzoom ") and "seed=0" in out
        assert (tmp_path / "curves.csv").read_text().splitlines()[0] == "epoch,tp,fp,fn"
        assert (tmp_path / "final.bzq").is_file()

    def test_config_precedence(self, tmp_path, dataset_dir, monkeypatch, capsys):
        manifest = str(dataset_dir / "manifest.csv")
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"epochs": 1, "seed": 7, "train_data": manifest, "hidden": [8], "grid": 4}))
        monkeypatch.setenv("BOXZOOM_CONFIG", str(cfg))
        assert main(["train", "--seed", "9", "--out-dir", str(tmp_path / "o")]) == 0
        meta = json.loads((tmp_path / "o" / "report.meta.json").read_text())
        assert meta["seed"] == 9 and meta["config"]["epochs"] == 1 and meta["config"]["hidden"] == [8]

    @pytest.mark.parametrize("text", ["{not json", "[1, 2]", '{"bogus": 1}'])
    def test_bad_config(self, tmp_path, text, capsys):
        (tmp_path / "c.json").write_text(text)
        assert main(["train", "--config", str(tmp_path / "c.json")]) == 1

    def test_typed_optional_flags(self, capsys):
        from boxzoom.cli import build_parser, load_config

        args = build_parser().parse_args(["train", "--start-epoch", "7", "--hidden", "32x16", "--no-train-refine"])
        cfg = load_config(args)
        assert (cfg.start_epoch, cfg.hidden, cfg.train_refine) == (7, (32, 16), False)

    def test_invalid_flag_value(self, capsys):
        assert main(["train", "--epochs", "0"]) == 1


class TestEval:
    def test_output_format(self, tmp_path, dataset_dir, capsys):
        ckpt = checkpoint(tmp_path / "c.bzq")
        args = ["eval", "--checkpoint", ckpt, "--data", str(dataset_dir / "manifest.csv"),
                "--out", str(tmp_path / "e.csv"), "--log", str(tmp_path / "log.jsonl")]
        assert main(args) == 0
        first = capsys.readouterr().out.splitlines()[0]
        _, tp, _, fp, _, fn = first.split()
        assert first.startswith("TP ") and int(tp) + int(fp) + int(fn) == 6
        assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 6

    def test_variant_mismatch(self, tmp_path, dataset_dir, capsys):
        ckpt = checkpoint(tmp_path / "c.bzq")
        args = ["eval", "--checkpoint", ckpt, "--data", str(dataset_dir / "manifest.csv"), "--variant", "1-stage-ar"]
        assert main(args) == 2
        assert "incompatible" in capsys.readouterr().err

    def test_empty_manifest(self, tmp_path, capsys):
        (tmp_path / "m.csv").write_text("# nothing\n")
        assert main(["eval", "--checkpoint", checkpoint(tmp_path / "c.bzq"), "--data", str(tmp_path / "m.csv")]) == 2

    def test_not_a_checkpoint(self, tmp_path, dataset_dir, capsys):
        (tmp_path / "c.bzq").write_bytes(b"junk")
        assert main(["eval", "--checkpoint", str(tmp_path / "c.bzq"), "--data", str(dataset_dir / "manifest.csv")]) == 2


class TestDemo:
    def test_with_ground_truth(self, tmp_path, dataset_dir, capsys):
        ckpt = checkpoint(tmp_path / "c.bzq", "2-stage")
        args = ["demo", "--checkpoint", ckpt, "--image", str(dataset_dir / "s5-00000.ppm"), "--gt", "2,2,20,20",
                "--trajectory", str(tmp_path / "t.txt"), "--annotated", str(tmp_path / "a.ppm")]
        assert main(args) == 0
        lines = capsys.readouterr().out.splitlines()[1:]
        assert lines and all(len(l.split()) == 6 for l in lines)
        assert all(0.0 <= float(l.split()[3]) <= 1.0 for l in lines)
        logged = [Transition.parse(l) for l in (tmp_path / "t.txt").read_text().splitlines() if not l.startswith("#")]
        assert len(logged) == len(lines)
        assert read_pnm(tmp_path / "a.ppm").shape == (32, 32, 3)

    def test_without_ground_truth(self, tmp_path, dataset_dir, capsys):
        ckpt = checkpoint(tmp_path / "c.bzq")
        assert main(["demo", "--checkpoint", ckpt, "--image", str(dataset_dir / "s5-00001.ppm")]) == 0
        assert all(l.endswith("- - -") for l in capsys.readouterr().out.splitlines()[1:])

    def test_unreadable_image(self, tmp_path, capsys):
        (tmp_path / "x.ppm").write_bytes(b"P9\n")
        assert main(["demo", "--checkpoint", checkpoint(tmp_path / "c.bzq"), "--image", str(tmp_path / "x.ppm")]) == 2
        assert "unsupported" in capsys.readouterr().err

    def test_gt_outside_image(self, tmp_path, capsys):
        write_pnm(tmp_path / "g.pgm", np.zeros((10, 10)))
        args = ["demo", "--checkpoint", checkpoint(tmp_path / "c.bzq"), "--image", str(tmp_path / "g.pgm"),
                "--gt", "0,0,20,20"]
        assert main(args) == 1
