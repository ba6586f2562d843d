"""Mixture-of-experts: one expert model per agent type, a deterministic
type-routing gate, scene generation, and the closed-loop replanning harness.

Within one generation pass every agent is predicted from the same frozen
scene snapshot with a per-agent RNG derived from (seed, agent id), so agent
iteration order cannot change any agent's trajectory and generation is a
pure function of (scenario, conditions, seed, checkpoints).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import DiffusionSchedule, NoiseEstimator, make_schedule, refine
from .encoder import SceneBatch, SceneEncoder
from .initializer import Initializer, TrajectoryBatch
from .metrics import derive_headings
from .nn import ParamStore, Tensor
from .scene import (
    Agent,
    AgentState,
    AgentType,
    ConditionContext,
    Scenario,
    SceneTensors,
    Trajectory,
    from_agent_frame,
    to_agent_frame,
    vectorize,
)

REPLAN_INTERVALS = (30, 60, 90)  # steps: 3 s / 6 s / 9 s


class RoutingError(KeyError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExpertConfig:
    t_f: int = 60
    t_h: int = 11
    dt: float = 0.1
    d_model: int = 128
    embed_dim: int = 1024
    n_mcg_blocks: int = 3
    k_modes: int = 6
    trunk_hidden: int = 256
    denoise_hidden: int = 64
    step_dim: int = 32
    total_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    refine_depth: int = 5
    traj_scale: float = 25.0  # meters per unit in diffusion space
    max_agents: int = 32
    max_lanes: int = 32
    max_lane_segments: int = 12
    crop_size: float = 120.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertConfig":
        return cls(**d)


class ExpertModel:
    """Encoder + initializer + denoiser parameter groups for one agent type."""

    def __init__(self, agent_type: AgentType, config: ExpertConfig, store: ParamStore,
                 schedule: DiffusionSchedule, meta: dict | None = None):
        self.agent_type = agent_type
        self.config = config
        self.store = store
        self.schedule = schedule
        self.meta = dict(meta or {})
        self.encoder = SceneEncoder(
            store, config.t_h, config.d_model, config.embed_dim, config.n_mcg_blocks, rng=None
        )
        self.initializer = Initializer(
            store, config.embed_dim, config.t_f, config.k_modes, config.trunk_hidden, rng=None
        )
        self.estimator = NoiseEstimator(
            store, schedule, config.embed_dim, config.t_f, config.denoise_hidden, config.step_dim, rng=None
        )

    @classmethod
    def create(cls, agent_type: AgentType, config: ExpertConfig = ExpertConfig(), seed: int = 0) -> "ExpertModel":
        store = ParamStore()
        schedule = make_schedule(config.total_steps, config.beta_start, config.beta_end, config.refine_depth)
        rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_hash(agent_type.value)]))
        SceneEncoder(store, config.t_h, config.d_model, config.embed_dim, config.n_mcg_blocks, rng=rng)
        Initializer(store, config.embed_dim, config.t_f, config.k_modes, config.trunk_hidden, rng=rng)
        NoiseEstimator(store, schedule, config.embed_dim, config.t_f, config.denoise_hidden, config.step_dim, rng=rng)
        return cls(agent_type, config, store, schedule)

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = dict(self.meta)
        meta.update(extra_meta or {})
        meta["agent_type"] = self.agent_type.value
        meta["config"] = self.config.to_dict()
        meta["schedule"] = self.schedule.to_dict()
        self.store.save(path, meta)

    @classmethod
    def load(cls, path) -> "ExpertModel":
        store, meta = ParamStore.load(path)
        config = ExpertConfig.from_dict(meta["config"])
        schedule = DiffusionSchedule.from_dict(meta["schedule"])
        return cls(AgentType(meta["agent_type"]), config, store, schedule, meta)

    # ------------------------------------------------------------------
    # inference

    def scene_tensors(self, local: Scenario, target_id: str) -> SceneTensors:
        c = self.config
        return vectorize(local, target_id, c.max_agents, c.max_lanes, c.max_lane_segments, c.t_h)

    def embed(self, batch: SceneBatch) -> Tensor:
        return self.encoder.encode(batch)

    def predict(
        self,
        scene: SceneTensors,
        condition_vector: np.ndarray,
        rng: np.random.Generator | None = None,
        refined: bool = True,
        on_step=None,
    ) -> tuple[TrajectoryBatch, TrajectoryBatch]:
        """Agent-frame prediction: (initializer batch, refined batch).

        Diffusion runs on trajectories normalized by ``traj_scale`` so the
        unit-variance noise of the forward process matches the data scale.
        """
        batch = SceneBatch.stack([scene], np.asarray(condition_vector)[None, :])
        emb = self.embed(batch)
        positions, scores = self.initializer.forward(emb)
        raw = TrajectoryBatch(positions.data[0], scores.data[0])
        if not refined:
            return raw, raw
        k, scale = self.config.k_modes, self.config.traj_scale
        emb_rep = Tensor(np.repeat(emb.data, k, axis=0))
        scaled = Tensor(positions.data.reshape(k, self.config.t_f, 2) / scale)
        out = refine(self.schedule, self.estimator, scaled, emb_rep, rng, on_step=on_step)
        data = (out.data if isinstance(out, Tensor) else out) * scale
        return raw, TrajectoryBatch(data, raw.scores)


def _stable_hash(text: str) -> int:
    return zlib.crc32(text.encode())


@dataclass(frozen=True)
class AgentRollout:
    agent_id: str
    expert: str
    trajectory: Trajectory  # chosen mode, global frame
    batch: TrajectoryBatch  # all modes, global frame
    condition: ConditionContext | None
    chosen_index: int


@dataclass(frozen=True)
class SceneRollout:
    """Generated futures for one scene plus routing/seed provenance."""

    scenario_id: str
    seed: int
    agents: tuple[AgentRollout, ...]
    conditions_policy: str = "explicit"
    replan_interval: int | None = None

    @property
    def routing(self) -> dict[str, str]:
        return {a.agent_id: a.expert for a in self.agents}

    def agent(self, agent_id: str) -> AgentRollout:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)

    def collision_boxes(self) -> list[tuple[np.ndarray, np.ndarray, float, float]]:
        out = []
        for a in self.agents:
            traj = a.trajectory
            headings, valid = derive_headings(traj.positions, initial_heading=traj.states[0].heading)
            out.append((traj.positions, headings, traj.states[0].length, traj.states[0].width))
        return out

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "scene_rollout",
            "scenario_id": self.scenario_id,
            "seed": self.seed,
            "conditions_policy": self.conditions_policy,
            "replan_interval": self.replan_interval,
            "agents": [
                {
                    "id": a.agent_id,
                    "expert": a.expert,
                    "chosen_index": a.chosen_index,
                    "condition": None
                    if a.condition is None
                    else {
                        "target": a.condition.target_position.tolist(),
                        "speed": a.condition.target_speed,
                        "heading": a.condition.target_heading,
                        "length": a.condition.length,
                        "width": a.condition.width,
                        "valid": a.condition.valid,
                    },
                    "trajectory": a.trajectory.positions.tolist(),
                    "headings": a.trajectory.headings.tolist(),
                    "modes": a.batch.positions.tolist(),
                    "scores": a.batch.scores.tolist(),
                }
                for a in self.agents
            ],
        }


class ExpertRegistry:
    """The MoE gate: deterministic dispatch from agent type to expert."""

    def __init__(self, experts: dict[AgentType, ExpertModel] | None = None):
        self.experts: dict[AgentType, ExpertModel] = dict(experts or {})

    def register(self, expert: ExpertModel) -> None:
        self.experts[expert.agent_type] = expert

    def expert_id(self, agent_type: AgentType) -> str:
        return f"{agent_type.value}_expert"

    def route(self, agent_type: AgentType) -> str:
        """Map an agent type to its expert id; unregistered types raise."""
        if agent_type not in self.experts:
            raise RoutingError(f"no expert registered for agent type {agent_type.value!r}")
        return self.expert_id(agent_type)

    def expert_for(self, agent_type: AgentType) -> ExpertModel:
        self.route(agent_type)
        return self.experts[agent_type]

    @classmethod
    def create(cls, config: ExpertConfig = ExpertConfig(), seed: int = 0) -> "ExpertRegistry":
        return cls({t: ExpertModel.create(t, config, seed) for t in AgentType})

    @classmethod
    def load_dir(cls, directory) -> "ExpertRegistry":
        from pathlib import Path

        registry = cls()
        for path in sorted(Path(directory).glob("*.npz")):
            registry.register(ExpertModel.load(path))
        if not registry.experts:
            raise FileNotFoundError(f"no expert checkpoints (*.npz) in {directory}")
        return registry

    def save_dir(self, directory) -> None:
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for agent_type, expert in self.experts.items():
            expert.save(directory / f"{agent_type.value}.npz")

    # ------------------------------------------------------------------

    def generate(
        self,
        scenario: Scenario,
        conditions: dict[str, ConditionContext] | None = None,
        seed: int = 0,
        stochastic_refine: bool = True,
        conditions_policy: str = "explicit",
        progress=None,
    ) -> SceneRollout:
        """Generate futures for every agent with a valid current state.

        Per agent: agent-frame transform -> encode (condition valid iff
        provided) -> initializer -> 5-step refinement -> highest-score mode
        -> back-transform.  Deterministic given the seed.
        """
        conditions = conditions or {}
        # per-agent frame transforms only consume the recent history and the
        # map; drop futures and stale history once instead of per agent
        t_h = max(e.config.t_h for e in self.experts.values()) if self.experts else 11
        slim = scenario.with_agents(
            tuple(Agent(a.id, a.history[-t_h:], None) for a in scenario.agents)
        )
        rollouts = []
        for agent in scenario.agents:
            if not agent.current.valid:
                continue
            try:
                expert_id = self.route(agent.agent_type)
                expert = self.experts[agent.agent_type]
                local, frame = to_agent_frame(slim, agent.id, expert.config.crop_size)
                scene = expert.scene_tensors(local, agent.id)
                condition = conditions.get(agent.id)
                cond_vec = condition.as_vector(frame) if condition is not None else np.zeros(ConditionContext.DIM)
                rng = None
                if stochastic_refine:
                    rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_hash(agent.id)]))
                on_step = None
                if progress is not None:
                    on_step = lambda i, total, _aid=agent.id: progress(_aid, i, total)
                raw, refined_batch = expert.predict(scene, cond_vec, rng, on_step=on_step)
            except Exception as e:
                raise GenerationError(f"agent {agent.id!r}: {e}") from e
            chosen = int(refined_batch.scores.argmax())
            local_current = local.agent(agent.id).current
            traj_local = Trajectory.from_positions(
                refined_batch.positions[chosen], local_current, scenario.dt, initial_heading=local_current.heading
            )
            traj_global = from_agent_frame(traj_local, frame)
            global_modes = np.stack([frame.to_global(m) for m in refined_batch.positions])
            rollouts.append(
                AgentRollout(
                    agent.id,
                    expert_id,
                    traj_global,
                    TrajectoryBatch(global_modes, refined_batch.scores),
                    condition,
                    chosen,
                )
            )
        return SceneRollout(scenario.scenario_id, seed, tuple(rollouts), conditions_policy)

    def rollout_closed_loop(
        self,
        scenario: Scenario,
        conditions: dict[str, ConditionContext] | None = None,
        horizon_steps: int = 180,
        replan_interval: int = 60,
        seed: int = 0,
        stochastic_refine: bool = True,
    ) -> SceneRollout:
        """Closed-loop rollout: generate, execute ``replan_interval`` steps,
        append to histories, regenerate; concatenated executed trajectories
        are returned.

        Intervals beyond the planning horizon (90 steps vs 60-step futures)
        execute the full plan and extend it by constant-velocity steps before
        replanning.
        """
        if replan_interval not in REPLAN_INTERVALS:
            raise ValueError(f"replan_interval must be one of {REPLAN_INTERVALS}, got {replan_interval}")
        if horizon_steps <= 0 or horizon_steps % replan_interval != 0:
            raise ValueError(f"horizon {horizon_steps} is not a positive multiple of {replan_interval}")
        rounds = horizon_steps // replan_interval
        executed: dict[str, list[AgentState]] = {a.id: [] for a in scenario.agents}
        current = scenario
        last: SceneRollout | None = None
        for r in range(rounds):
            round_seed = int(np.random.SeedSequence([seed, r]).generate_state(1)[0])
            last = self.generate(current, conditions, round_seed, stochastic_refine)
            step_states: dict[str, list[AgentState]] = {}
            for agent in current.agents:
                if agent.id in last.routing:
                    plan = list(last.agent(agent.id).trajectory.states)
                    if len(plan) < replan_interval:
                        plan = plan + _constant_velocity_extension(plan[-1], replan_interval - len(plan), current.dt)
                    step_states[agent.id] = plan[:replan_interval]
                else:
                    step_states[agent.id] = [agent.current] * replan_interval
                executed[agent.id].extend(step_states[agent.id])
            new_agents = tuple(
                Agent(a.id, a.history + tuple(step_states[a.id]), a.future) for a in current.agents
            )
            current = current.with_agents(new_agents)
        agents = tuple(
            replace(a, trajectory=Trajectory(tuple(executed[a.agent_id]), scenario.dt))
            for a in last.agents
        )
        return SceneRollout(
            scenario.scenario_id, seed, agents, last.conditions_policy, replan_interval
        )


def _constant_velocity_extension(state: AgentState, steps: int, dt: float) -> list[AgentState]:
    out = []
    pos = state.position.copy()
    for _ in range(steps):
        pos = pos + state.velocity * dt
        out.append(AgentState(pos.copy(), state.velocity, state.heading, state.length, state.width,
                              state.agent_type, state.valid))
    return out
