"""End-to-end tests for the command-line interface.

Each test drives ``ctxpaste.cli.main`` with an argv list and inspects
exit codes, the JSON summary line on stdout, and the files written to
disk. One test runs the module through a real subprocess to cover the
interpreter entry point.
"""

import json
import os
import subprocess
import sys

import pytest

from ctxpaste import formats
from ctxpaste.cli import main
from ctxpaste.core import Sample

SMALL_YAML = """\
seed: 11
rounds: 1
train_size: 24
eval_size: 10
synth:
  image_size: 48
  objects_per_scene: [1, 1]
harvest:
  eps1: 0.01
  eps2: 0.99
model:
  epochs: 4
"""


def _write_config(tmp_path, text=SMALL_YAML, name="small.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _summary(capsys):
    """Parse the last JSON line the command printed to stdout."""
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.strip()]
    assert lines, "command printed no summary"
    return json.loads(lines[-1])


def _stderr_json(capsys):
    err = [ln for ln in capsys.readouterr().err.splitlines() if ln.strip()]
    assert err, "command printed no error line"
    return json.loads(err[-1])


def _tree_bytes(root):
    """Map every file under root (relative path) to its raw bytes."""
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, root)
            with open(full, "rb") as fh:
                out[rel] = fh.read()
    return out


def _synth(tmp_path, name, cfg, n=24, seed=None, capsys=None):
    out = str(tmp_path / name)
    argv = ["synth", "--config", cfg, "--out", out, "--n", str(n)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    rc = main(argv)
    if capsys is not None:
        capsys.readouterr()
    assert rc == 0
    return out


class TestSynthCommand:
    def test_writes_manifest_and_summary(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        out = str(tmp_path / "corpus")
        assert main(["synth", "--config", cfg, "--out", out, "--n", "5"]) == 0
        summary = _summary(capsys)
        assert summary["command"] == "synth"
        assert summary["count"] == 5
        assert summary["seed"] == 11
        manifest = os.path.join(out, summary["manifest"])
        assert os.path.isfile(manifest)
        samples, ids, names = formats.load_corpus(manifest)
        assert len(samples) == 5
        assert ids == [f"scene_{i:05d}" for i in range(5)]
        assert names[0] == "background" and len(names) == 5

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        a = _synth(tmp_path, "a", cfg, n=8, seed=3, capsys=capsys)
        b = _synth(tmp_path, "b", cfg, n=8, seed=3, capsys=capsys)
        ta, tb = _tree_bytes(a), _tree_bytes(b)
        assert ta.keys() == tb.keys()
        assert all(ta[k] == tb[k] for k in ta)

    def test_seed_changes_output(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        a = _synth(tmp_path, "a", cfg, n=8, seed=3, capsys=capsys)
        b = _synth(tmp_path, "b", cfg, n=8, seed=4, capsys=capsys)
        ta, tb = _tree_bytes(a), _tree_bytes(b)
        assert ta.keys() == tb.keys()
        assert any(ta[k] != tb[k] for k in ta)


class TestChainSmoke:
    """synth -> train -> harvest -> augment -> train -> eval -> dump-cam."""

    def test_full_chain(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        data = _synth(tmp_path, "corpus", cfg, n=24, capsys=capsys)
        manifest = os.path.join(data, "manifest.json")

        run0 = str(tmp_path / "run0")
        assert main(["train", "--config", cfg, "--data", manifest,
                     "--out", run0]) == 0
        summary = _summary(capsys)
        assert summary["command"] == "train"
        assert summary["epochs"] == 4
        model0 = os.path.join(run0, "model.json")
        assert os.path.isfile(model0)
        report = json.loads(
            open(os.path.join(run0, "train_report.json")).read())
        assert len(report["epoch_losses"]) == 4

        bank_dir = str(tmp_path / "bank")
        assert main(["harvest", "--config", cfg, "--data", manifest,
                     "--model", model0, "--out", bank_dir]) == 0
        summary = _summary(capsys)
        assert summary["command"] == "harvest"
        assert summary["accepted"] >= 1
        assert summary["accepted"] == len(formats.load_bank(bank_dir))

        aug_dir = str(tmp_path / "aug")
        assert main(["augment", "--config", cfg, "--data", manifest,
                     "--bank", bank_dir, "--out", aug_dir, "--n", "4"]) == 0
        summary = _summary(capsys)
        assert summary["command"] == "augment"
        assert summary["entries"] == 8  # pairwise doubles the selection
        placements = json.loads(
            open(os.path.join(aug_dir, "placements.json")).read())
        assert placements["pairwise"] is True
        assert len(placements["entries"]) == 8
        assert placements["entries"][0]["id"] == "entry_00000_orig"
        assert placements["entries"][1]["id"] == "entry_00000_aug"
        aug_samples, _, _ = formats.load_corpus(
            os.path.join(aug_dir, "manifest.json"))
        assert len(aug_samples) == 8

        run1 = str(tmp_path / "run1")
        assert main(["train", "--config", cfg, "--data", manifest,
                     "--bank", bank_dir, "--out", run1]) == 0
        summary = _summary(capsys)
        assert summary["skips"] >= 0
        model1 = os.path.join(run1, "model.json")
        assert os.path.isfile(model1)

        eval_dir = str(tmp_path / "eval")
        assert main(["eval", "--config", cfg, "--data", manifest,
                     "--model", model1, "--out", eval_dir,
                     "--dump-masks"]) == 0
        summary = _summary(capsys)
        assert summary["command"] == "eval"
        assert 0.0 <= summary["mean_iou"] <= 1.0
        report = json.loads(
            open(os.path.join(eval_dir, "eval_report.json")).read())
        assert report["tau"] == 0.5
        assert report["metrics"]["mean_iou"] == summary["mean_iou"]
        masks = formats.load_masks(os.path.join(eval_dir, "masks"),
                                   ["scene_00000"])
        assert masks[0].data.shape == (48, 48, 1)

        cam_dir = str(tmp_path / "cams")
        assert main(["dump-cam", "--config", cfg, "--data", manifest,
                     "--model", model1, "--out", cam_dir,
                     "--ids", "scene_00000,scene_00003"]) == 0
        summary = _summary(capsys)
        assert summary["scenes"] == 2
        for sid in ("scene_00000", "scene_00003"):
            for suffix in ("image", "gt", "pred"):
                assert os.path.isfile(
                    os.path.join(cam_dir, f"{sid}_{suffix}.png"))
        cams = [f for f in os.listdir(cam_dir) if "_cam_" in f]
        assert cams, "no per-class heatmaps written"

    def test_harvest_from_mask_directory(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        data = _synth(tmp_path, "corpus", cfg, n=12, capsys=capsys)
        manifest = os.path.join(data, "manifest.json")
        samples, ids, _ = formats.load_corpus(manifest)
        mask_dir = str(tmp_path / "gt_masks")
        formats.save_masks(mask_dir, ids, [s.gt_mask for s in samples])

        bank_dir = str(tmp_path / "bank")
        assert main(["harvest", "--config", cfg, "--data", manifest,
                     "--masks", mask_dir, "--out", bank_dir]) == 0
        summary = _summary(capsys)
        # Ground-truth masks of single-object scenes all qualify under
        # the wide-open area window.
        assert summary["accepted"] == 12
        assert summary["rejections"] == {}


class TestErrorExitCodes:
    def test_empty_harvest_exits_1(self, tmp_path, capsys):
        narrow = SMALL_YAML.replace("eps1: 0.01", "eps1: 0.9989").replace(
            "eps2: 0.99", "eps2: 0.999")
        cfg = _write_config(tmp_path, narrow, name="narrow.yaml")
        data = _synth(tmp_path, "corpus", cfg, n=6, capsys=capsys)
        manifest = os.path.join(data, "manifest.json")
        samples, ids, _ = formats.load_corpus(manifest)
        mask_dir = str(tmp_path / "gt_masks")
        formats.save_masks(mask_dir, ids, [s.gt_mask for s in samples])

        rc = main(["harvest", "--config", cfg, "--data", manifest,
                   "--masks", mask_dir, "--out", str(tmp_path / "bank")])
        assert rc == 1
        err = _stderr_json(capsys)
        assert "message" in err and "error" in err

    def test_harvest_without_mask_source_exits_2(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        data = _synth(tmp_path, "corpus", cfg, n=4, capsys=capsys)
        rc = main(["harvest", "--config", cfg,
                   "--data", os.path.join(data, "manifest.json"),
                   "--out", str(tmp_path / "bank")])
        assert rc == 2
        err = _stderr_json(capsys)
        assert "--model" in err["message"] or "--masks" in err["message"]

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, "modle:\n  epochs: 2\n", "typo.yaml")
        rc = main(["synth", "--config", cfg,
                   "--out", str(tmp_path / "corpus")])
        assert rc == 2
        assert "modle" in _stderr_json(capsys)["message"]

    def test_malformed_yaml_exits_2(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, "seed: [unclosed\n", "broken.yaml")
        rc = main(["synth", "--config", cfg,
                   "--out", str(tmp_path / "corpus")])
        assert rc == 2
        _stderr_json(capsys)

    def test_missing_required_flag_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["synth"])  # --out missing
        assert exc.value.code == 2

    def test_eval_without_gt_exits_2(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        data = _synth(tmp_path, "corpus", cfg, n=4, capsys=capsys)
        manifest = os.path.join(data, "manifest.json")
        samples, ids, names = formats.load_corpus(manifest)
        stripped = [Sample(image=s.image, labels=s.labels, gt_mask=None)
                    for s in samples]
        bare = str(tmp_path / "bare")
        formats.save_corpus(bare, stripped, names, ids=ids)

        run0 = str(tmp_path / "run0")
        assert main(["train", "--config", cfg, "--data", manifest,
                     "--out", run0]) == 0
        capsys.readouterr()
        rc = main(["eval", "--config", cfg,
                   "--data", os.path.join(bare, "manifest.json"),
                   "--model", os.path.join(run0, "model.json"),
                   "--out", str(tmp_path / "eval")])
        assert rc == 2
        assert "gt" in _stderr_json(capsys)["message"]

    def test_dump_cam_unknown_id_exits_2(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        data = _synth(tmp_path, "corpus", cfg, n=4, capsys=capsys)
        manifest = os.path.join(data, "manifest.json")
        run0 = str(tmp_path / "run0")
        assert main(["train", "--config", cfg, "--data", manifest,
                     "--out", run0]) == 0
        capsys.readouterr()
        rc = main(["dump-cam", "--config", cfg, "--data", manifest,
                   "--model", os.path.join(run0, "model.json"),
                   "--out", str(tmp_path / "cams"),
                   "--ids", "scene_00000,no_such_scene"])
        assert rc == 2
        assert "ids" in _stderr_json(capsys)["message"]


class TestExperimentCommand:
    def test_small_experiment_writes_artifacts(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        out = str(tmp_path / "exp")
        assert main(["experiment", "--config", cfg, "--out", out,
                     "--dump-count", "2"]) == 0
        summary = _summary(capsys)
        assert summary["command"] == "experiment"
        assert summary["miou_gain"] == pytest.approx(
            summary["final_miou"] - summary["baseline_miou"])

        report = json.loads(open(os.path.join(out, "report.json")).read())
        assert report["seed"] == 11
        assert len(report["rounds"]) == 2
        assert report["config"]["model"]["epochs"] == 4
        assert os.path.isfile(os.path.join(out, "model_round0.json"))
        assert os.path.isfile(os.path.join(out, "model_round1.json"))
        assert os.path.isdir(os.path.join(out, "bank_round1"))
        dumps = os.listdir(os.path.join(out, "dumps"))
        assert any(f.startswith("eval_00000") for f in dumps)
        assert any(f.startswith("eval_00001") for f in dumps)

    def test_rerun_and_jobs_are_byte_identical(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        trees = []
        for name, jobs in (("e1", "1"), ("e2", "1"), ("e3", "4")):
            out = str(tmp_path / name)
            assert main(["experiment", "--config", cfg, "--out", out,
                         "--jobs", jobs]) == 0
            capsys.readouterr()
            trees.append(_tree_bytes(out))
        assert trees[0].keys() == trees[1].keys() == trees[2].keys()
        for key in trees[0]:
            assert trees[0][key] == trees[1][key] == trees[2][key], key

    def test_sweep_writes_per_point_reports_and_table(self, tmp_path,
                                                      capsys):
        sweep_yaml = SMALL_YAML + (
            "sweep:\n"
            "  - name: one_obj\n"
            "    set: {augment.objects_per_image: 1}\n"
            "  - name: two_obj\n"
            "    set: {augment.objects_per_image: 2}\n"
        )
        cfg = _write_config(tmp_path, sweep_yaml, name="sweep.yaml")
        out = str(tmp_path / "sweep")
        assert main(["experiment", "--config", cfg, "--out", out]) == 0
        summary = _summary(capsys)
        assert summary["sweep_points"] == 2
        assert os.path.isfile(os.path.join(out, "report_one_obj.json"))
        assert os.path.isfile(os.path.join(out, "report_two_obj.json"))
        table = open(os.path.join(out, "sweep.csv")).read().splitlines()
        assert len(table) == 3  # header plus one row per point
        assert table[1].startswith("one_obj")
        assert table[2].startswith("two_obj")


class TestSubprocessEntryPoint:
    def test_module_invocation(self, tmp_path):
        out = str(tmp_path / "corpus")
        cfg = _write_config(tmp_path)
        proc = subprocess.run(
            [sys.executable, "-m", "ctxpaste.cli", "synth", "--config", cfg,
             "--out", out, "--n", "2"],
            capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0, proc.stderr
        summary = json.loads(proc.stdout.strip().splitlines()[-1])
        assert summary["count"] == 2
        assert os.path.isfile(os.path.join(out, "manifest.json"))

    def test_error_goes_to_stderr_with_exit_2(self, tmp_path):
        cfg = _write_config(tmp_path, "modle: {}\n", name="typo.yaml")
        proc = subprocess.run(
            [sys.executable, "-m", "ctxpaste.cli", "synth", "--config", cfg,
             "--out", str(tmp_path / "corpus")],
            capture_output=True, text=True, timeout=120)
        assert proc.returncode == 2
        assert json.loads(proc.stderr.strip().splitlines()[-1])
