"""Multi-context-gating scene encoder.

Sets of agent-history and lane embeddings are gated by a shared running
context and condensed by masked max pooling, which keeps the encoder
permutation-invariant bit-for-bit in 64-bit single-threaded mode.  The
condition descriptor gets its own dense stack; its embedding is concatenated
with the state-encoder and lane-encoder outputs and projected to the final
context embedding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ParamStore, Tensor
from .scene import (
    AGENT_FEATURE_DIM,
    LANE_FEATURE_DIM,
    ConditionContext,
    SceneTensors,
)

EMBED_DIM = 1024  # length of the context embedding


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class SceneBatch:
    """Stacked SceneTensors plus per-scene condition vectors."""

    agent_features: np.ndarray  # (B, A, T_h, F_a)
    agent_mask: np.ndarray  # (B, A)
    agent_step_mask: np.ndarray  # (B, A, T_h)
    lane_features: np.ndarray  # (B, L, S, F_l)
    lane_mask: np.ndarray  # (B, L)
    lane_seg_mask: np.ndarray  # (B, L, S)
    conditions: np.ndarray  # (B, 8)

    @classmethod
    def stack(cls, scenes: list[SceneTensors], conditions: np.ndarray) -> "SceneBatch":
        conditions = np.asarray(conditions, dtype=np.float64)
        if conditions.ndim == 1:
            conditions = conditions[None, :]
        if len(scenes) != len(conditions):
            raise EncoderError(f"{len(scenes)} scenes but {len(conditions)} condition rows")
        return cls(
            np.stack([s.agent_features for s in scenes]),
            np.stack([s.agent_mask for s in scenes]),
            np.stack([s.agent_step_mask for s in scenes]),
            np.stack([s.lane_features for s in scenes]),
            np.stack([s.lane_mask for s in scenes]),
            np.stack([s.lane_seg_mask for s in scenes]),
            conditions,
        )

    def __len__(self) -> int:
        return len(self.agent_features)

    def select(self, idx: np.ndarray) -> "SceneBatch":
        return SceneBatch(
            self.agent_features[idx],
            self.agent_mask[idx],
            self.agent_step_mask[idx],
            self.lane_features[idx],
            self.lane_mask[idx],
            self.lane_seg_mask[idx],
            self.conditions[idx],
        )


class MCGBlock:
    """One multi-context-gating block.

    Elements are gated elementwise by the encoded running context; the gated
    set is pooled (masked max) into the context update.  Condensing the set
    into a single context vector this way approximates cross-attention at a
    fraction of the cost.
    """

    def __init__(self, store: ParamStore, prefix: str, dim: int, group: str, rng: np.random.Generator | None):
        self.store = store
        self.prefix = prefix
        if rng is not None:
            scale = np.sqrt(2.0 / dim)
            store.add(f"{prefix}_elem_w", rng.standard_normal((dim, dim)) * scale, group)
            store.add(f"{prefix}_elem_b", np.zeros(dim), group)
            store.add(f"{prefix}_ctx_w", rng.standard_normal((dim, dim)) * scale, group)
            store.add(f"{prefix}_ctx_b", np.zeros(dim), group)

    def __call__(self, elements: Tensor, context: Tensor, mask: np.ndarray):
        """Gate ``elements`` (B, S, d) by ``context`` (B, d); returns
        (gated elements, running context + pooled update)."""
        if not np.asarray(mask, dtype=bool).any():
            raise EncoderError("all elements masked")
        s = self.store
        e = nn.relu(nn.dense(elements, s[f"{self.prefix}_elem_w"], s[f"{self.prefix}_elem_b"]))
        g = nn.relu(nn.dense(context, s[f"{self.prefix}_ctx_w"], s[f"{self.prefix}_ctx_b"]))
        gated = nn.layernorm(nn.mul(e, nn.reshape(g, (g.shape[0], 1, g.shape[1]))))
        pooled = nn.max_pool_over_set(gated, mask, axis=1)
        return gated, nn.add(context, pooled)


def mcg_forward(block: MCGBlock, elements, context, mask):
    """Functional wrapper over one MCG block (set in, gated set + context out)."""
    elements = elements if isinstance(elements, Tensor) else Tensor(elements)
    context = context if isinstance(context, Tensor) else Tensor(context)
    return block(elements, context, mask)


class SceneEncoder:
    """MCG-based context encoder producing the conditioning embedding."""

    GROUP = "encoder"

    def __init__(
        self,
        store: ParamStore,
        t_history: int,
        d_model: int = 128,
        embed_dim: int = EMBED_DIM,
        n_blocks: int = 3,
        rng: np.random.Generator | None = None,
    ):
        self.store = store
        self.t_history = t_history
        self.d_model = d_model
        self.embed_dim = embed_dim
        self.n_blocks = n_blocks
        d = d_model
        if rng is not None:
            def he(fan_in, shape):
                return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

            agent_in = t_history * AGENT_FEATURE_DIM
            store.add("enc_agent_w1", he(agent_in, (agent_in, d)), self.GROUP)
            store.add("enc_agent_b1", np.zeros(d), self.GROUP)
            store.add("enc_agent_w2", he(d, (d, d)), self.GROUP)
            store.add("enc_agent_b2", np.zeros(d), self.GROUP)
            store.add("enc_lane_w1", he(LANE_FEATURE_DIM, (LANE_FEATURE_DIM, d)), self.GROUP)
            store.add("enc_lane_b1", np.zeros(d), self.GROUP)
            store.add("enc_lane_w2", he(d, (d, d)), self.GROUP)
            store.add("enc_lane_b2", np.zeros(d), self.GROUP)
            store.add("enc_cond_w1", he(ConditionContext.DIM, (ConditionContext.DIM, d)), self.GROUP)
            store.add("enc_cond_b1", np.zeros(d), self.GROUP)
            store.add("enc_cond_w2", he(d, (d, d)), self.GROUP)
            store.add("enc_cond_b2", np.zeros(d), self.GROUP)
            store.add("enc_ctx0_agent_w", he(2 * d, (2 * d, d)), self.GROUP)
            store.add("enc_ctx0_agent_b", np.zeros(d), self.GROUP)
            store.add("enc_ctx0_lane_w", he(2 * d, (2 * d, d)), self.GROUP)
            store.add("enc_ctx0_lane_b", np.zeros(d), self.GROUP)
            store.add("enc_out_w", he(4 * d, (4 * d, embed_dim)), self.GROUP)
            store.add("enc_out_b", np.zeros(embed_dim), self.GROUP)
        self.agent_blocks = [
            MCGBlock(store, f"enc_agent_mcg{i}", d, self.GROUP, rng) for i in range(n_blocks)
        ]
        self.lane_blocks = [
            MCGBlock(store, f"enc_lane_mcg{i}", d, self.GROUP, rng) for i in range(n_blocks)
        ]

    def _agent_embed(self, feats: np.ndarray, step_mask: np.ndarray) -> Tensor:
        b, a = feats.shape[:2]
        flat = (feats * step_mask[..., None]).reshape(b, a, self.t_history * AGENT_FEATURE_DIM)
        s = self.store
        h = nn.relu(nn.dense(Tensor(flat), s["enc_agent_w1"], s["enc_agent_b1"]))
        return nn.relu(nn.dense(h, s["enc_agent_w2"], s["enc_agent_b2"]))

    def encode(self, batch: SceneBatch) -> Tensor:
        """Contexts in, embedding out: (B, embed_dim)."""
        if batch.conditions.shape[1] != ConditionContext.DIM:
            raise EncoderError(
                f"condition dimension {batch.conditions.shape[1]} != {ConditionContext.DIM}"
            )
        if not batch.agent_mask.any(axis=1).all():
            raise EncoderError("a scene in the batch has zero valid agents")
        s = self.store
        agent_emb = self._agent_embed(batch.agent_features, batch.agent_step_mask)
        target_emb = nn.take(agent_emb, 0, axis=1)  # vectorize puts the target first

        cond = nn.relu(nn.dense(Tensor(batch.conditions), s["enc_cond_w1"], s["enc_cond_b1"]))
        cond = nn.relu(nn.dense(cond, s["enc_cond_w2"], s["enc_cond_b2"]))

        anchor = nn.concat([target_emb, cond], axis=1)
        ctx_a = nn.relu(nn.dense(anchor, s["enc_ctx0_agent_w"], s["enc_ctx0_agent_b"]))
        elems = agent_emb
        for block in self.agent_blocks:
            elems, ctx_a = block(elems, ctx_a, batch.agent_mask)

        b, lanes, segs, _ = batch.lane_features.shape
        lane_in = nn.relu(nn.dense(Tensor(batch.lane_features), s["enc_lane_w1"], s["enc_lane_b1"]))
        lane_pooled = nn.max_pool_over_set(
            nn.reshape(lane_in, (b * lanes, segs, self.d_model)),
            batch.lane_seg_mask.reshape(b * lanes, segs),
            axis=1,
        )
        lane_emb = nn.relu(
            nn.dense(nn.reshape(lane_pooled, (b, lanes, self.d_model)), s["enc_lane_w2"], s["enc_lane_b2"])
        )
        ctx_l = nn.relu(nn.dense(anchor, s["enc_ctx0_lane_w"], s["enc_ctx0_lane_b"]))
        if batch.lane_mask.any():
            lane_elems = lane_emb
            for block in self.lane_blocks:
                lane_elems, ctx_l = block(lane_elems, ctx_l, batch.lane_mask)

        joined = nn.concat([ctx_a, ctx_l, cond, target_emb], axis=1)
        return nn.dense(joined, s["enc_out_w"], s["enc_out_b"])


def encode_context(encoder: SceneEncoder, scene: SceneTensors, condition_vector: np.ndarray) -> Tensor:
    """Encode a single vectorized scene + 8-dim condition into the embedding."""
    condition_vector = np.asarray(condition_vector, dtype=np.float64).reshape(-1)
    if condition_vector.shape[0] != ConditionContext.DIM:
        raise EncoderError(f"condition dimension {condition_vector.shape[0]} != {ConditionContext.DIM}")
    batch = SceneBatch.stack([scene], condition_vector[None, :])
    return encoder.encode(batch)
