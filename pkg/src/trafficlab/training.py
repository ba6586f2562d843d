"""Two-stage training over per-type datasets, plus the evaluation harness.

Stage 1 pretrains the context encoder and noise estimator on the noise
estimation loss.  Stage 2 freezes the denoiser group and trains the encoder
and initializer on closest-mode MSE + score NLL computed on the *refined*
trajectories, so the leapfrog objective targets final quality.  A
regression-only baseline stage trains without any diffusion refinement.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .diffusion import noise_estimation_loss, refine
from .encoder import SceneBatch
from .experts import ExpertModel, ExpertRegistry
from .initializer import TrajectoryBatch, regression_loss
from .metrics import (
    heading_error,
    min_ade_k,
    min_fde_k,
    scenario_collision_rate,
    speed_error,
)
from .nn import Adam, Graph, Tensor, linear_lr
from .scene import Agent, ConditionContext, Scenario, to_agent_frame

log = logging.getLogger(__name__)

STAGES = ("denoiser_pretrain", "initializer_finetune", "baseline_regression")
DEFAULT_EPOCHS = {"denoiser_pretrain": 100, "initializer_finetune": 40, "baseline_regression": 150}
CONDITION_POLICIES = ("none", "from_gt_endpoint")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    epochs: int | None = None  # None picks the stage default (100 / 40 / 150)
    batch_size: int = 64
    lr_start: float = 3e-4
    lr_end: float = 3e-5
    seed: int = 0
    condition_dropout: float = 0.5  # fraction of samples trained unconditioned

    def __post_init__(self):
        if self.stage not in STAGES:
            raise TrainingError(f"stage must be one of {STAGES}, got {self.stage!r}")

    @property
    def resolved_epochs(self) -> int:
        return self.epochs if self.epochs is not None else DEFAULT_EPOCHS[self.stage]


@dataclass
class EncodedDataset:
    """Vectorized agent-centric training tensors for one per-type dataset."""

    batch: SceneBatch
    gt: np.ndarray  # (N, t_F, 2) ego future positions, agent frame
    cond_from_gt: np.ndarray  # (N, 8) condition vectors from the gt final frame
    current_speeds: np.ndarray  # (N,) ego speed at the current frame
    scenario_ids: list[str]
    source_ids: list[str]
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.gt)


def encode_dataset(scenarios: list[Scenario], expert: ExpertModel) -> EncodedDataset:
    """Transform + vectorize each record around its center agent.

    Records whose center agent lacks a complete valid future are skipped
    (training needs full ground truth).  Non-center futures are dropped
    before the frame transform: only histories feed the encoder.
    """
    cfg = expert.config
    scenes, gts, conds, speeds, sids, srcs = [], [], [], [], [], []
    skipped = 0
    for sc in scenarios:
        ego = sc.agent(sc.ego_id)
        if ego.future is None or len(ego.future) != cfg.t_f or not ego.future.valid.all():
            skipped += 1
            continue
        slim_agents = tuple(
            a if a.id == sc.ego_id else Agent(a.id, a.history, None) for a in sc.agents
        )
        local, frame = to_agent_frame(sc.with_agents(slim_agents), sc.ego_id, cfg.crop_size)
        scenes.append(expert.scene_tensors(local, sc.ego_id))
        ego_local = local.agent(sc.ego_id)
        gts.append(ego_local.future.positions)
        conds.append(ConditionContext.from_state(ego.future.states[-1]).as_vector(frame))
        speeds.append(ego.current.speed)
        sids.append(sc.scenario_id)
        srcs.append(sc.source_id)
    if not scenes:
        raise TrainingError("no usable records in dataset (missing/incomplete ground truth)")
    return EncodedDataset(
        SceneBatch.stack(scenes, np.stack(conds)),
        np.stack(gts),
        np.stack(conds),
        np.array(speeds),
        sids,
        srcs,
        skipped,
    )


def _dropout_conditions(data: EncodedDataset, idx: np.ndarray, rng, dropout: float) -> np.ndarray:
    conds = data.cond_from_gt[idx].copy()
    drop = rng.random(len(idx)) < dropout
    conds[drop] = 0.0
    return conds


@dataclass
class TrainResult:
    expert: ExpertModel
    epoch_losses: list[float]
    config: TrainConfig


def train_stage1(expert: ExpertModel, scenarios: list[Scenario], config: TrainConfig,
                 data: EncodedDataset | None = None) -> TrainResult:
    """Pretrain encoder + noise estimator on the noise-estimation loss."""
    if config.stage != "denoiser_pretrain":
        raise TrainingError(f"train_stage1 requires stage 'denoiser_pretrain', got {config.stage!r}")
    if not scenarios and data is None:
        raise TrainingError("empty dataset")
    data = data or encode_dataset(scenarios, expert)
    for group in ("encoder", "denoiser", "initializer"):
        expert.store.thaw(group)
    rng = np.random.default_rng(config.seed)
    opt = Adam(expert.store)
    epochs = config.resolved_epochs
    n_batches = max(len(data) // config.batch_size, 1)
    total_steps = epochs * n_batches
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        epoch_loss = []
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            if len(idx) == 0:
                continue
            conds = _dropout_conditions(data, idx, rng, config.condition_dropout)
            sub = data.batch.select(idx)
            sub = SceneBatch(sub.agent_features, sub.agent_mask, sub.agent_step_mask,
                             sub.lane_features, sub.lane_mask, sub.lane_seg_mask, conds)
            expert.store.zero_grad()
            with Graph() as g:
                emb = expert.encoder.encode(sub)
                loss = noise_estimation_loss(
                    expert.schedule, expert.estimator, data.gt[idx] / expert.config.traj_scale, emb, rng
                )
            g.backward(loss)
            opt.step(linear_lr(opt.t, total_steps, config.lr_start, config.lr_end))
            epoch_loss.append(loss.item())
        losses.append(float(np.mean(epoch_loss)))
        log.info("stage1 epoch %d/%d: L_NE %.4f", epoch + 1, epochs, losses[-1])
    expert.meta.update({"stage": 1, "train_source_ids": sorted(set(data.source_ids)),
                        "stage1_epochs": epochs, "seed": config.seed})
    return TrainResult(expert, losses, config)


def _finetune(expert: ExpertModel, scenarios, config: TrainConfig, refined: bool,
              data: EncodedDataset | None = None) -> TrainResult:
    if not scenarios and data is None:
        raise TrainingError("empty dataset")
    data = data or encode_dataset(scenarios, expert)
    rng = np.random.default_rng(config.seed)
    opt = Adam(expert.store)
    epochs = config.resolved_epochs
    n_batches = max(len(data) // config.batch_size, 1)
    total_steps = epochs * n_batches
    k, t_f = expert.config.k_modes, expert.config.t_f
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        epoch_loss = []
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            if len(idx) == 0:
                continue
            conds = _dropout_conditions(data, idx, rng, config.condition_dropout)
            sub = data.batch.select(idx)
            sub = SceneBatch(sub.agent_features, sub.agent_mask, sub.agent_step_mask,
                             sub.lane_features, sub.lane_mask, sub.lane_seg_mask, conds)
            expert.store.zero_grad()
            with Graph() as g:
                from . import nn

                emb = expert.encoder.encode(sub)
                positions, scores = expert.initializer.forward(emb)
                if refined:
                    scale = expert.config.traj_scale
                    flat = nn.mul(nn.reshape(positions, (len(idx) * k, t_f, 2)), 1.0 / scale)
                    emb_rep = nn.repeat(emb, k, axis=0)
                    out = refine(expert.schedule, expert.estimator, flat, emb_rep, rng=None)
                    positions = nn.mul(nn.reshape(out, (len(idx), k, t_f, 2)), scale)
                loss, _ = regression_loss(positions, scores, data.gt[idx])
            g.backward(loss)
            opt.step(linear_lr(opt.t, total_steps, config.lr_start, config.lr_end))
            epoch_loss.append(loss.item())
        losses.append(float(np.mean(epoch_loss)))
        log.info("%s epoch %d/%d: loss %.4f", config.stage, epoch + 1, epochs, losses[-1])
    return TrainResult(expert, losses, config)


def train_stage2(expert: ExpertModel, scenarios: list[Scenario], config: TrainConfig,
                 data: EncodedDataset | None = None) -> TrainResult:
    """Train encoder + initializer through frozen refinement steps.

    Requires a stage-1 checkpoint; the denoiser parameter group is frozen
    and verified bit-identical by checksum before/after.
    """
    if config.stage != "initializer_finetune":
        raise TrainingError(f"train_stage2 requires stage 'initializer_finetune', got {config.stage!r}")
    if expert.meta.get("stage") not in (1, 2):
        raise TrainingError("stage-2 training requires a stage-1 checkpoint (expert.meta['stage'] == 1)")
    if not scenarios and data is None:
        raise TrainingError("empty dataset")
    data = data or encode_dataset(scenarios, expert)
    before = expert.store.group_checksum("denoiser")
    expert.store.thaw("encoder")
    expert.store.thaw("initializer")
    expert.store.freeze("denoiser")
    result = _finetune(expert, scenarios, config, refined=True, data=data)
    after = expert.store.group_checksum("denoiser")
    if before != after:
        raise TrainingError("denoiser parameters changed during stage 2 (freeze contract violated)")
    ids = set(expert.meta.get("train_source_ids", [])) | set(data.source_ids)
    expert.meta.update({"stage": 2, "stage2_epochs": config.resolved_epochs,
                        "train_source_ids": sorted(ids)})
    return result


def train_baseline(expert: ExpertModel, scenarios: list[Scenario], config: TrainConfig,
                   data: EncodedDataset | None = None) -> TrainResult:
    """Regression-only baseline: no diffusion refinement anywhere."""
    if config.stage != "baseline_regression":
        raise TrainingError(f"train_baseline requires stage 'baseline_regression', got {config.stage!r}")
    if not scenarios and data is None:
        raise TrainingError("empty dataset")
    data = data or encode_dataset(scenarios, expert)
    result = _finetune(expert, scenarios, config, refined=False, data=data)
    expert.meta.update({"stage": "baseline", "train_source_ids": sorted(set(data.source_ids)),
                        "seed": config.seed})
    return result


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    """Machine-readable metric table keyed by (dataset, model, metric)."""

    dataset: str
    conditions_policy: str
    seed: int
    count: int
    models: dict[str, dict[str, float]] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str, str, float]]:
        return [
            (self.dataset, model, metric, value)
            for model, metrics in sorted(self.models.items())
            for metric, value in sorted(metrics.items())
        ]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "conditions_policy": self.conditions_policy,
            "seed": self.seed,
            "count": self.count,
            "models": self.models,
        }

    def value(self, model: str, metric: str) -> float:
        return self.models[model][metric]


def _predict_dataset(expert: ExpertModel, data: EncodedDataset, conditions: np.ndarray,
                     batch_size: int = 256) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw and refined mode stacks plus scores for every record (z = 0)."""
    k, t_f = expert.config.k_modes, expert.config.t_f
    n = len(data)
    raw = np.zeros((n, k, t_f, 2))
    refined_out = np.zeros((n, k, t_f, 2))
    scores = np.zeros((n, k))
    for b0 in range(0, n, batch_size):
        idx = np.arange(b0, min(b0 + batch_size, n))
        sub = data.batch.select(idx)
        sub = SceneBatch(sub.agent_features, sub.agent_mask, sub.agent_step_mask,
                         sub.lane_features, sub.lane_mask, sub.lane_seg_mask, conditions[idx])
        emb = expert.encoder.encode(sub)
        positions, sc = expert.initializer.forward(emb)
        raw[idx] = positions.data
        scores[idx] = sc.data
        scale = expert.config.traj_scale
        flat = positions.data.reshape(len(idx) * k, t_f, 2) / scale
        emb_rep = Tensor(np.repeat(emb.data, k, axis=0))
        out = refine(expert.schedule, expert.estimator, Tensor(flat), emb_rep, rng=None)
        refined_out[idx] = out.data.reshape(len(idx), k, t_f, 2) * scale
    return raw, refined_out, scores


def _metric_block(modes: np.ndarray, scores: np.ndarray, data: EncodedDataset) -> dict[str, float]:
    ades, fdes, hes, ses, endpoint = [], [], [], [], []
    for i in range(len(data)):
        batch = TrajectoryBatch(modes[i], scores[i])
        gt = data.gt[i]
        ades.append(min_ade_k(batch, gt))
        fdes.append(min_fde_k(batch, gt))
        hes.append(heading_error(batch.positions[int(np.argmax(scores[i]))], gt))
        ses.append(speed_error(batch.positions[int(np.argmax(scores[i]))], gt))
        chosen = int(np.argmax(scores[i]))
        endpoint.append(float(np.linalg.norm(batch.positions[chosen, -1] - gt[-1])))
    return {
        "min_ade_6": float(np.mean(ades)),
        "min_fde_6": float(np.mean(fdes)),
        "heading_error": float(np.nanmean(hes)),
        "speed_error": float(np.mean(ses)),
        "endpoint_error": float(np.mean(endpoint)),
    }


def evaluate(
    expert: ExpertModel,
    scenarios: list[Scenario],
    conditions_policy: str = "from_gt_endpoint",
    seed: int = 0,
    allow_train_overlap: bool = False,
    data: EncodedDataset | None = None,
) -> EvalReport:
    """Metric report on a held-out split; deterministic given the seed.

    ``conditions_policy`` is "from_gt_endpoint" (populate each agent's
    condition from its ground-truth state at the final future frame, the
    90th-frame protocol) or "none".  Train/test source-id overlap is a hard
    error unless ``allow_train_overlap`` (memorization smoke tests).
    """
    if conditions_policy not in CONDITION_POLICIES:
        raise TrainingError(f"conditions_policy must be one of {CONDITION_POLICIES}")
    if not scenarios and data is None:
        raise TrainingError("empty evaluation split")
    data = data or encode_dataset(scenarios, expert)
    train_ids = set(expert.meta.get("train_source_ids", []))
    overlap = train_ids & set(data.source_ids)
    if overlap and not allow_train_overlap:
        raise TrainingError(f"split leakage: {len(overlap)} source ids appear in train and eval")

    conds = data.cond_from_gt if conditions_policy == "from_gt_endpoint" else np.zeros_like(data.cond_from_gt)
    raw, refined_out, scores = _predict_dataset(expert, data, conds)

    cv_modes = np.zeros_like(raw[:, :1])
    t = np.arange(1, expert.config.t_f + 1)[None, :, None] * expert.config.dt
    # agent frame: current position is the origin, velocity along +x
    cv_modes[:, 0] = t * np.stack([data.current_speeds, np.zeros_like(data.current_speeds)], axis=-1)[:, None, :]

    report = EvalReport(expert.agent_type.value, conditions_policy, seed, len(data))
    report.models["refined"] = _metric_block(refined_out, scores, data)
    report.models["initializer"] = _metric_block(raw, scores, data)
    report.models["constant_velocity"] = _metric_block(cv_modes, np.zeros((len(data), 1)), data)
    return report


def closed_loop_report(
    registry: ExpertRegistry,
    scenarios: list[Scenario],
    intervals: tuple[int, ...] = (30, 60, 90),
    horizon_steps: int = 180,
    seed: int = 0,
    iou_threshold: float = 0.1,
) -> dict:
    """Interaction harness: SCR per replanning interval (Table-II shape)."""
    rows = []
    for interval in intervals:
        rollouts = [
            registry.rollout_closed_loop(sc, None, horizon_steps, interval, seed)
            for sc in scenarios
        ]
        rows.append(
            {
                "rollout_interval_steps": interval,
                "rollout_interval_seconds": interval * 0.1,
                "model": "expert_moe",
                "scr_percent": scenario_collision_rate(rollouts, iou_threshold),
            }
        )
    return {"horizon_steps": horizon_steps, "seed": seed, "iou_threshold": iou_threshold, "rows": rows}
