"""Command wiring: each subcommand end-to-end on a tiny corpus, config
validation before compute, idempotence, and clean failure modes."""
import json
from pathlib import Path

import numpy as np
import pytest

from fewshot_audio.cli import default_config, main
from fewshot_audio.evaluation import load_report
from fewshot_audio.splits import load_split

TINY_TRAIN_OVERRIDES = [
    "--set", "training.steps=6",
    "--set", "training.meta_batch=1",
    "--set", "training.epochs=2",
    "--set", "training.finetune_steps=3",
    "--set", "training.val_every=5",
    "--set", "training.val_tasks=4",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny prepared workspace: 6-class corpus, cache, split, config."""
    ws = tmp_path_factory.mktemp("cli_ws")
    assert main([
        "synth", "--preset", "synth-fixed", "--out", str(ws / "corpus"), "--seed", "3",
    ]) == 0
    manifest = ws / "corpus" / "manifest.csv"
    assert main([
        "prepare", "--manifest", str(manifest), "--dataset-id", "synth",
        "--cache-dir", str(ws / "cache"), "--workspace", str(ws),
    ]) == 0
    assert main([
        "split", "--manifest", str(manifest), "--dataset-id", "synth",
        "--seed", "1", "--out", str(ws / "split.txt"),
    ]) == 0
    config = {
        "datasets": [
            {"dataset_id": "synth", "cache_dir": str(ws / "cache"),
             "split_file": str(ws / "split.txt")}
        ],
        "run_dir": str(ws / "run"),
    }
    (ws / "config.json").write_text(json.dumps(config), encoding="utf-8")
    return ws


class TestSynthAndPrepare:
    def test_cache_contents(self, workspace):
        files = list((workspace / "cache").glob("*.npy"))
        assert len(files) == 600
        arr = np.load(files[0])
        assert arr.shape == (32, 155)

    def test_prepare_rerun_idempotent(self, workspace):
        mtimes = {p.name: p.stat().st_mtime_ns for p in (workspace / "cache").glob("*.npy")}
        assert main([
            "prepare", "--manifest", str(workspace / "corpus" / "manifest.csv"),
            "--dataset-id", "synth", "--cache-dir", str(workspace / "cache"),
            "--workspace", str(workspace),
        ]) == 0
        after = {p.name: p.stat().st_mtime_ns for p in (workspace / "cache").glob("*.npy")}
        assert after == mtimes

    def test_split_rerun_identical_bytes(self, workspace, tmp_path):
        out = tmp_path / "again.txt"
        assert main([
            "split", "--manifest", str(workspace / "corpus" / "manifest.csv"),
            "--dataset-id", "synth", "--seed", "1", "--out", str(out),
        ]) == 0
        assert out.read_bytes() == (workspace / "split.txt").read_bytes()

    def test_prune_flags(self, workspace, tmp_path, capsys):
        assert main([
            "prepare", "--manifest", str(workspace / "corpus" / "manifest.csv"),
            "--dataset-id", "synth", "--cache-dir", str(tmp_path / "cache2"),
            "--max-duration", "10", "--min-class-count", "1",
            "--workspace", str(workspace),
        ]) == 0
        assert "600 sub-clips" in capsys.readouterr().out


class TestTrainEvaluate:
    def test_train_then_evaluate_wiring(self, workspace, capsys):
        rc = main([
            "train", "--config", str(workspace / "config.json"), "--algo", "protonet",
            "--run-dir", str(workspace / "run"), "--workspace", str(workspace),
            *TINY_TRAIN_OVERRIDES,
        ])
        assert rc == 0
        run = workspace / "run"
        assert (run / "checkpoint.pt").exists()
        assert (run / "config.resolved.json").exists()
        assert (run / "stats.json").exists()
        log_lines = (run / "train_log.ndjson").read_text().strip().splitlines()
        assert len(log_lines) == 6

        rc = main([
            "evaluate", "--checkpoint", str(run / "checkpoint.pt"),
            "--dataset", "synth", str(workspace / "cache"), str(workspace / "split.txt"),
            "--partition", "all", "--n-tasks", "12", "--seed", "5",
            "--workspace", str(workspace),
        ])
        assert rc == 0
        report = load_report(run / "eval_synth_all_protonet.json")
        assert report.n_tasks == 12
        assert report.seed == 5

    def test_stats_provenance_train_only(self, workspace):
        # Normalization statistics must come from train-partition sub-clips
        # exclusively.
        stats = json.loads((workspace / "run" / "stats.json").read_text())
        split = load_split(workspace / "split.txt")
        train_classes = set(split.train)
        source_ids = stats["source_ids"]
        assert source_ids, "stats must log provenance"
        manifest_rows = (workspace / "cache" / "cache_manifest.csv").read_text().splitlines()[1:]
        label_of = {}
        for row in manifest_rows:
            if row.startswith("#") or not row:
                continue
            subclip_id, _, label, _, _ = row.split(",")
            label_of[subclip_id] = label
        assert all(label_of[sid] in train_classes for sid in source_ids)

    def test_evaluate_missing_checkpoint_clean_error(self, workspace, tmp_path, capsys):
        rc = main([
            "evaluate", "--checkpoint", str(tmp_path / "never_trained.pt"),
            "--dataset", "synth", str(workspace / "cache"), str(workspace / "split.txt"),
            "--n-tasks", "5", "--out-dir", str(tmp_path / "out"),
        ])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "FileNotFoundError"
        assert not (tmp_path / "out").exists() or not list((tmp_path / "out").glob("*.json"))

    def test_config_validated_before_compute(self, workspace, capsys):
        rc = main([
            "train", "--config", str(workspace / "config.json"),
            "--algo", "protonet", "--set", "sampler.mode=joint_free",
            "--workspace", str(workspace),
        ])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "ConfigError"
        assert "joint_free" in err["detail"]

    def test_unknown_algorithm_rejected(self, workspace, capsys):
        rc = main([
            "train", "--config", str(workspace / "config.json"),
            "--set", "algorithm=zero_shot", "--workspace", str(workspace),
        ])
        assert rc == 1

    def test_train_rerun_reproduces_checkpoint_metrics(self, workspace, tmp_path):
        # Re-running from the resolved snapshot reproduces evaluation bytes.
        resolved = workspace / "run" / "config.resolved.json"
        rc = main([
            "train", "--config", str(resolved),
            "--run-dir", str(tmp_path / "rerun"), "--workspace", str(workspace),
        ])
        assert rc == 0
        for run_dir, out in ((workspace / "run", tmp_path / "o1"), (tmp_path / "rerun", tmp_path / "o2")):
            assert main([
                "evaluate", "--checkpoint", str(run_dir / "checkpoint.pt"),
                "--stats", str(run_dir / "stats.json"),
                "--dataset", "synth", str(workspace / "cache"), str(workspace / "split.txt"),
                "--partition", "all", "--n-tasks", "8", "--seed", "2",
                "--out-dir", str(out), "--workspace", str(workspace),
            ]) == 0
        a = (tmp_path / "o1" / "eval_synth_all_protonet.json").read_bytes()
        b = (tmp_path / "o2" / "eval_synth_all_protonet.json").read_bytes()
        assert a == b


class TestSweepAndReport:
    def test_shot_sweep_command(self, workspace):
        run = workspace / "run"
        rc = main([
            "sweep", "--checkpoint", str(run / "checkpoint.pt"),
            "--dataset", "synth", str(workspace / "cache"), str(workspace / "split.txt"),
            "--partition", "all", "--shots", "1:2", "--n-tasks", "6",
            "--workspace", str(workspace),
        ])
        assert rc == 0
        grid = json.loads((run / "sweep_shots_synth_protonet.json").read_text())
        assert [e["param"] for e in grid] == [1, 2]
        csv_lines = (run / "sweep_shots_synth_protonet.csv").read_text().strip().splitlines()
        assert len(csv_lines) == 3

    def test_way_sweep_unavailable_entries(self, workspace):
        run = workspace / "run"
        rc = main([
            "sweep", "--checkpoint", str(run / "checkpoint.pt"),
            "--dataset", "synth", str(workspace / "cache"), str(workspace / "split.txt"),
            "--partition", "all", "--ways", "5,10,11", "--n-tasks", "4",
            "--workspace", str(workspace),
        ])
        assert rc == 0
        grid = json.loads((run / "sweep_ways_synth_protonet.json").read_text())
        assert [e["available"] for e in grid] == [True, True, False]

    def test_sweep_requires_exactly_one_axis(self, workspace, capsys):
        run = workspace / "run"
        rc = main([
            "sweep", "--checkpoint", str(run / "checkpoint.pt"),
            "--dataset", "synth", str(workspace / "cache"), str(workspace / "split.txt"),
            "--shots", "1:2", "--ways", "5:6",
        ])
        assert rc == 1

    def test_report_renders_tables(self, workspace, capsys):
        rc = main(["report", "--run-dir", str(workspace / "run")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "protonet" in out
        assert (workspace / "run" / "table.txt").exists()
        assert (workspace / "run" / "table.csv").exists()

    def test_report_empty_dir_errors(self, tmp_path, capsys):
        assert main(["report", "--run-dir", str(tmp_path)]) == 1


class TestDefaultConfig:
    def test_desk_and_full_scales(self):
        desk = default_config("desk")
        full = default_config("full")
        assert desk["backbone"]["conv_channels"] == [8, 8, 8, 8]
        assert full["backbone"]["conv_channels"] == [64, 64, 64, 64]
        assert full["spectrogram"]["sample_rate_hz"] == 16000
        assert desk["eval"]["n_tasks"] == 10000

    def test_unknown_scale_rejected(self):
        with pytest.raises(Exception):
            default_config("galactic")
