"""Command-line entry points for the full pipeline.

Every command resolves its configuration as flags > config file (--config,
YAML) > built-in defaults, and logs the resolved values to stderr for
reproducibility.  Exit code 0 on success; schema/usage failures exit
nonzero with a structured message.
"""
from __future__ import annotations

import json
from pathlib import Path

import click
import yaml

from . import dataio
from .experts import ExpertConfig, ExpertModel, ExpertRegistry
from .scene import AgentType, ConditionContext
from .training import (
    TrainConfig,
    TrainingError,
    closed_loop_report,
    evaluate as run_evaluate,
    train_baseline,
    train_stage1,
    train_stage2,
)

CONFIG_VERSION = 1


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    version = cfg.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise click.ClickException(f"unsupported config_version {version}")
    return cfg


def _resolve(command: str, file_cfg: dict, flag_values: dict, defaults: dict) -> dict:
    """flags > config file (top level and per-command section) > defaults."""
    cfg = dict(defaults)
    cfg.update({k: v for k, v in file_cfg.items() if k in defaults and not isinstance(v, dict)})
    cfg.update({k: v for k, v in file_cfg.get(command, {}).items() if k in defaults})
    cfg.update({k: v for k, v in flag_values.items() if v is not None})
    click.echo(f"[config] {command}: {json.dumps(cfg, sort_keys=True, default=str)}", err=True)
    return cfg


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML config file; flags override it.")
@click.pass_context
def main(ctx, config_path):
    """Traffic scene generation pipeline: data, training, evaluation, serving."""
    ctx.obj = _load_config(config_path)


@main.command()
@click.option("--seed", type=int, default=None)
@click.option("--count", type=int, default=None)
@click.option("--mix", "mix_json", type=str, default=None,
              help='JSON behavior mix, e.g. \'{"straight": 1.0}\'.')
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def synth(ctx, seed, count, mix_json, out_path):
    """Generate a synthetic corpus of raw recordings."""
    cfg = _resolve("synth", ctx.obj, {"seed": seed, "count": count, "mix": mix_json},
                   {"seed": 0, "count": 100, "mix": None})
    mix = json.loads(cfg["mix"]) if isinstance(cfg["mix"], str) else cfg["mix"]
    try:
        recs = dataio.synth(cfg["seed"], cfg["count"], mix)
    except ValueError as e:
        raise click.ClickException(str(e)) from None
    n = dataio.save(out_path, recs)
    click.echo(f"wrote {n} recordings to {out_path}")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
def preprocess(ctx, in_path, out_dir):
    """Window, filter, crop, and classify recordings into per-type datasets."""
    _resolve("preprocess", ctx.obj, {}, {})
    try:
        result = dataio.preprocess(dataio.load(in_path))
    except dataio.SchemaError as e:
        raise click.ClickException(str(e)) from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for agent_type, scenarios in result.datasets.items():
        n = dataio.save(out / f"{agent_type.value}.ndjson", scenarios)
        click.echo(f"{agent_type.value}: {n} windows")
    with (out / "drops.jsonl").open("w") as fh:
        for d in result.drops:
            fh.write(json.dumps({"source_id": d.source_id, "window": d.window_index,
                                 "reason": d.reason}) + "\n")
    click.echo(f"kept {result.kept} windows, dropped {len(result.drops)} (see drops.jsonl)")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--train-out", type=click.Path(), required=True)
@click.option("--val-out", type=click.Path(), required=True)
@click.option("--test-out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--ratios", type=str, default=None, help="e.g. 0.8,0.1,0.1")
@click.pass_context
def split(ctx, in_path, train_out, val_out, test_out, seed, ratios):
    """Split windows into train/val/test, disjoint by source recording."""
    cfg = _resolve("split", ctx.obj, {"seed": seed, "ratios": ratios},
                   {"seed": 0, "ratios": "0.8,0.1,0.1"})
    parts = tuple(float(x) for x in str(cfg["ratios"]).split(","))
    scenarios = list(dataio.load(in_path))
    try:
        train, val, test = dataio.split(scenarios, parts, cfg["seed"])
    except ValueError as e:
        raise click.ClickException(str(e)) from None
    for path, chunk in ((train_out, train), (val_out, val), (test_out, test)):
        dataio.save(path, chunk)
        click.echo(f"{path}: {len(chunk)} windows")


_STAGE_ALIASES = {"1": "denoiser_pretrain", "2": "initializer_finetune", "baseline": "baseline_regression"}


@main.command()
@click.option("--stage", type=click.Choice(["1", "2", "baseline"]), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--expert-type", type=click.Choice([t.value for t in AgentType]), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--lr-start", type=float, default=None)
@click.option("--lr-end", type=float, default=None)
@click.option("--condition-dropout", type=float, default=None)
@click.option("--checkpoint-in", type=click.Path(exists=True), default=None,
              help="Required for stage 2 (the stage-1 checkpoint).")
@click.option("--checkpoint-out", type=click.Path(), required=True)
@click.pass_context
def train(ctx, stage, data_path, expert_type, epochs, batch_size, seed, lr_start, lr_end,
          condition_dropout, checkpoint_in, checkpoint_out):
    """Train one expert: stage 1 (denoiser), stage 2 (initializer), or baseline."""
    cfg = _resolve(
        "train", ctx.obj,
        {"expert_type": expert_type, "epochs": epochs, "batch_size": batch_size, "seed": seed,
         "lr_start": lr_start, "lr_end": lr_end, "condition_dropout": condition_dropout},
        {"expert_type": "vehicle", "epochs": None, "batch_size": 64, "seed": 0,
         "lr_start": 3e-4, "lr_end": 3e-5, "condition_dropout": 0.5},
    )
    stage_name = _STAGE_ALIASES[stage]
    if stage == "2" and checkpoint_in is None:
        raise click.ClickException("--stage 2 requires --checkpoint-in (the stage-1 checkpoint)")
    agent_type = AgentType(cfg["expert_type"])
    if checkpoint_in is not None:
        expert = ExpertModel.load(checkpoint_in)
        if expert.agent_type != agent_type:
            raise click.ClickException(
                f"checkpoint is a {expert.agent_type.value} expert, not {agent_type.value}")
    else:
        expert = ExpertModel.create(agent_type, ExpertConfig(), seed=cfg["seed"])
    scenarios = [s for s in dataio.load(data_path)]
    train_config = TrainConfig(
        stage=stage_name, epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"],
        lr_start=cfg["lr_start"], lr_end=cfg["lr_end"], condition_dropout=cfg["condition_dropout"],
    )
    runner = {"1": train_stage1, "2": train_stage2, "baseline": train_baseline}[stage]
    try:
        result = runner(expert, scenarios, train_config)
    except TrainingError as e:
        raise click.ClickException(str(e)) from None
    expert.save(checkpoint_out)
    click.echo(f"stage {stage} done: loss {result.epoch_losses[0]:.4f} -> "
               f"{result.epoch_losses[-1]:.4f}; checkpoint at {checkpoint_out}")


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--conditions-policy", type=click.Choice(["none", "from_gt_endpoint"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--allow-train-overlap", is_flag=True, default=False)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.pass_context
def evaluate(ctx, checkpoint, data_path, conditions_policy, seed, allow_train_overlap, out_path):
    """Metric report (minADE_6, minFDE_6, heading/speed error) on a split."""
    cfg = _resolve("evaluate", ctx.obj, {"conditions_policy": conditions_policy, "seed": seed},
                   {"conditions_policy": "from_gt_endpoint", "seed": 0})
    expert = ExpertModel.load(checkpoint)
    scenarios = list(dataio.load(data_path))
    try:
        report = run_evaluate(expert, scenarios, cfg["conditions_policy"], cfg["seed"],
                              allow_train_overlap=allow_train_overlap)
    except TrainingError as e:
        raise click.ClickException(str(e)) from None
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(payload + "\n")
        click.echo(f"report written to {out_path}")
    else:
        click.echo(payload)
    for dataset, model, metric, value in report.rows():
        click.echo(f"{dataset:10s} {model:18s} {metric:15s} {value:10.4f}", err=True)


def _load_conditions(path: str | None) -> dict[str, dict[str, ConditionContext]]:
    if path is None:
        return {}
    with open(path) as fh:
        raw = json.load(fh)
    out = {}
    for scenario_id, agents in raw.items():
        out[scenario_id] = {
            aid: ConditionContext(
                (c["target_x"], c["target_y"]),
                c.get("target_speed", 0.0),
                c.get("target_heading", 0.0),
                c.get("length", 4.6),
                c.get("width", 2.0),
                True,
            )
            for aid, c in agents.items()
        }
    return out


@main.command()
@click.option("--checkpoint-dir", type=click.Path(exists=True), required=True)
@click.option("--scenarios", "scenarios_path", type=click.Path(exists=True), required=True)
@click.option("--conditions", "conditions_path", type=click.Path(exists=True), default=None,
              help="JSON {scenario_id: {agent_id: {target_x, target_y, ...}}}.")
@click.option("--seed", type=int, default=None)
@click.option("--replan-interval", type=int, default=None, help="steps; closed loop if set")
@click.option("--horizon", "horizon_steps", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.pass_context
def generate(ctx, checkpoint_dir, scenarios_path, conditions_path, seed, replan_interval,
             horizon_steps, out_path):
    """Batch generation: one rollout JSON line per input scenario."""
    cfg = _resolve("generate", ctx.obj, {"seed": seed}, {"seed": 0})
    registry = ExpertRegistry.load_dir(checkpoint_dir)
    conditions = _load_conditions(conditions_path)
    n = 0
    with open(out_path, "w") as fh:
        for scenario in dataio.load(scenarios_path):
            conds = conditions.get(scenario.scenario_id, {})
            if replan_interval:
                rollout = registry.rollout_closed_loop(
                    scenario, conds, horizon_steps or replan_interval, replan_interval, cfg["seed"])
            else:
                rollout = registry.generate(scenario, conds, cfg["seed"])
            fh.write(json.dumps(rollout.to_dict(), sort_keys=True) + "\n")
            n += 1
    click.echo(f"wrote {n} rollouts to {out_path}")


@main.command("closed-loop-report")
@click.option("--checkpoint-dir", type=click.Path(exists=True), required=True)
@click.option("--scenarios", "scenarios_path", type=click.Path(exists=True), required=True)
@click.option("--intervals", type=str, default="30,60,90")
@click.option("--horizon", "horizon_steps", type=int, default=180)
@click.option("--seed", type=int, default=0)
@click.option("--iou-threshold", type=float, default=0.1)
@click.option("--out", "out_path", type=click.Path(), required=True)
def closed_loop(checkpoint_dir, scenarios_path, intervals, horizon_steps, seed, iou_threshold, out_path):
    """SCR-per-replanning-interval report over a scenario set."""
    registry = ExpertRegistry.load_dir(checkpoint_dir)
    scenarios = list(dataio.load(scenarios_path))
    report = closed_loop_report(
        registry, scenarios, tuple(int(x) for x in intervals.split(",")),
        horizon_steps, seed, iou_threshold)
    Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for row in report["rows"]:
        click.echo(f"interval {row['rollout_interval_seconds']:.0f}s: SCR {row['scr_percent']:.2f}%")


@main.command()
@click.option("--checkpoint-dir", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8008)
@click.option("--ui-dir", type=click.Path(exists=True), default=None,
              help="Static directory with the built frontend.")
def serve(checkpoint_dir, host, port, ui_dir):
    """Run the interactive editing service."""
    import uvicorn

    from .service import create_app

    registry = ExpertRegistry.load_dir(checkpoint_dir)
    click.echo(f"serving {len(registry.experts)} experts on http://{host}:{port}", err=True)
    uvicorn.run(create_app(registry, ui_dir), host=host, port=port, log_level="info")


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--index", type=int, default=None, help="Only this record.")
def inspect(in_path, index):
    """Pretty-print scenario records."""
    from .scene import Scenario

    for i, record in enumerate(dataio.load(in_path)):
        if index is not None and i != index:
            continue
        if isinstance(record, Scenario):
            ego = record.agent(record.ego_id)
            n_future = len(ego.future) if ego.future else 0
            click.echo(
                f"[{i}] scenario {record.scenario_id} (source {record.source_id}): "
                f"{len(record.agents)} agents, {len(record.roadmap.lanes)} lanes, "
                f"history {len(ego.history)} + future {n_future} @ dt={record.dt}"
            )
            by_type = {}
            for a in record.agents:
                by_type[a.agent_type.value] = by_type.get(a.agent_type.value, 0) + 1
            click.echo(f"    ego {record.ego_id} ({ego.agent_type.value}), types: {by_type}")
            cur = ego.current
            click.echo(
                f"    ego pose ({cur.position[0]:.1f}, {cur.position[1]:.1f}) "
                f"heading {cur.heading:.2f} speed {cur.speed:.1f} m/s"
            )
        else:
            click.echo(
                f"[{i}] recording {record.scenario_id}: {len(record.agents)} agents, "
                f"{record.num_frames} frames, {len(record.roadmap.lanes)} lanes"
            )


if __name__ == "__main__":
    main()
