"""CLI pipeline: each command as a thin deterministic wrapper."""
import json

import pytest
from click.testing import CliRunner

from trafficlab.cli import main
from trafficlab.dataio import preprocess, save, synth
from trafficlab.experts import ExpertConfig, ExpertModel, ExpertRegistry
from trafficlab.scene import AgentType
from trafficlab.training import TrainConfig, train_stage1, train_stage2

TINY = ExpertConfig(
    t_f=60, t_h=11, d_model=16, embed_dim=64, n_mcg_blocks=2, trunk_hidden=32,
    denoise_hidden=32, step_dim=8, max_agents=8, max_lanes=8, max_lane_segments=6,
)


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw.ndjson"
    save(raw, synth(seed=51, count=12))
    return root, raw


@pytest.fixture(scope="module")
def windows(runner, corpus):
    root, raw = corpus
    out = root / "windows"
    r = runner.invoke(main, ["preprocess", "--in", str(raw), "--out-dir", str(out)])
    assert r.exit_code == 0, r.output
    return out


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("ck")
    scenarios = preprocess(synth(seed=52, count=10)).datasets[AgentType.VEHICLE]
    expert = ExpertModel.create(AgentType.VEHICLE, TINY, seed=0)
    train_stage1(expert, scenarios, TrainConfig(stage="denoiser_pretrain", epochs=2, batch_size=8))
    train_stage2(expert, scenarios, TrainConfig(stage="initializer_finetune", epochs=2, batch_size=8))
    path = root / "vehicle.npz"
    expert.save(path)
    registry = ExpertRegistry({t: ExpertModel.create(t, TINY, seed=1) for t in AgentType})
    registry.register(ExpertModel.load(path))
    ck_dir = root / "registry"
    registry.save_dir(ck_dir)
    return root, path, ck_dir, scenarios


class TestSynthPreprocessSplit:
    def test_synth_writes_corpus(self, runner, corpus, tmp_path):
        out = tmp_path / "x.ndjson"
        r = runner.invoke(main, ["synth", "--seed", "3", "--count", "4", "--out", str(out)])
        assert r.exit_code == 0, r.output
        assert "wrote 4 recordings" in r.output
        assert out.exists()

    def test_synth_reports_bad_mix(self, runner, tmp_path):
        r = runner.invoke(main, ["synth", "--mix", '{"warp": 1.0}', "--out", str(tmp_path / "x")])
        assert r.exit_code != 0
        assert "unknown behaviors" in r.output

    def test_preprocess_writes_datasets_and_drops(self, runner, windows):
        assert (windows / "vehicle.ndjson").exists()
        assert (windows / "pedestrian.ndjson").exists()
        assert (windows / "drops.jsonl").exists()

    def test_split_outputs(self, runner, corpus, windows, tmp_path):
        outs = [str(tmp_path / f"{n}.ndjson") for n in ("train", "val", "test")]
        r = runner.invoke(main, [
            "split", "--in", str(windows / "vehicle.ndjson"),
            "--train-out", outs[0], "--val-out", outs[1], "--test-out", outs[2],
            "--seed", "5",
        ])
        assert r.exit_code == 0, r.output

    def test_inspect(self, runner, windows):
        r = runner.invoke(main, ["inspect", "--in", str(windows / "vehicle.ndjson"), "--index", "0"])
        assert r.exit_code == 0, r.output
        assert "scenario" in r.output and "ego" in r.output


class TestTrainEvaluate:
    def test_stage2_without_checkpoint_errors(self, runner, windows, tmp_path):
        r = runner.invoke(main, [
            "train", "--stage", "2", "--data", str(windows / "vehicle.ndjson"),
            "--checkpoint-out", str(tmp_path / "out.npz"),
        ])
        assert r.exit_code != 0
        assert "stage-1 checkpoint" in r.output or "checkpoint-in" in r.output

    def test_evaluate_deterministic_golden(self, runner, tiny_checkpoint, tmp_path):
        root, ck, _, scenarios = tiny_checkpoint
        data = tmp_path / "eval.ndjson"
        save(data, scenarios[:4])
        reports = []
        for i in range(2):
            out = tmp_path / f"report{i}.json"
            r = runner.invoke(main, [
                "evaluate", "--checkpoint", str(ck), "--data", str(data),
                "--allow-train-overlap", "--out", str(out),
            ])
            assert r.exit_code == 0, r.output
            reports.append(out.read_bytes())
        assert reports[0] == reports[1]
        payload = json.loads(reports[0])
        assert payload["dataset"] == "vehicle"
        assert "refined" in payload["models"]


class TestGenerate:
    def test_generate_seeded_twice_identical(self, runner, tiny_checkpoint, tmp_path):
        root, _, ck_dir, scenarios = tiny_checkpoint
        data = tmp_path / "scenes.ndjson"
        save(data, scenarios[:2])
        outs = []
        for i in range(2):
            out = tmp_path / f"roll{i}.jsonl"
            r = runner.invoke(main, [
                "generate", "--checkpoint-dir", str(ck_dir), "--scenarios", str(data),
                "--seed", "7", "--out", str(out),
            ])
            assert r.exit_code == 0, r.output
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_generate_with_conditions_file(self, runner, tiny_checkpoint, tmp_path):
        root, _, ck_dir, scenarios = tiny_checkpoint
        data = tmp_path / "scenes.ndjson"
        save(data, scenarios[:1])
        conds = tmp_path / "conds.json"
        conds.write_text(json.dumps({
            scenarios[0].scenario_id: {"ego": {"target_x": 30.0, "target_y": 0.0, "target_speed": 5.0}}
        }))
        out = tmp_path / "roll.jsonl"
        r = runner.invoke(main, [
            "generate", "--checkpoint-dir", str(ck_dir), "--scenarios", str(data),
            "--conditions", str(conds), "--seed", "1", "--out", str(out),
        ])
        assert r.exit_code == 0, r.output
        rollout = json.loads(out.read_text().splitlines()[0])
        ego = next(a for a in rollout["agents"] if a["id"] == "ego")
        assert ego["condition"]["target"] == [30.0, 0.0]

    def test_closed_loop_report_table(self, runner, tiny_checkpoint, tmp_path):
        root, _, ck_dir, scenarios = tiny_checkpoint
        data = tmp_path / "scenes.ndjson"
        save(data, scenarios[:1])
        out = tmp_path / "scr.json"
        r = runner.invoke(main, [
            "closed-loop-report", "--checkpoint-dir", str(ck_dir), "--scenarios", str(data),
            "--intervals", "30,60,90", "--horizon", "180", "--out", str(out),
        ])
        assert r.exit_code == 0, r.output
        table = json.loads(out.read_text())
        assert [row["rollout_interval_steps"] for row in table["rows"]] == [30, 60, 90]


class TestConfigPrecedence:
    def test_flags_beat_config_file(self, runner, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("synth:\n  count: 2\n  seed: 9\n")
        out = tmp_path / "c.ndjson"
        r = runner.invoke(main, ["--config", str(cfg), "synth", "--count", "3", "--out", str(out)])
        assert r.exit_code == 0, r.output
        assert "wrote 3 recordings" in r.output
        assert '"seed": 9' in r.output  # file value used where no flag given

    def test_resolved_config_logged(self, runner, tmp_path):
        out = tmp_path / "c.ndjson"
        r = runner.invoke(main, ["synth", "--count", "2", "--out", str(out)])
        assert "[config] synth:" in r.output
