"""Regression initializer: K trajectory modes + scores from the context
embedding.  Modes are emitted as per-step offsets and integrated (cumulative
sum) from the agent's current position, which is the origin in the agent
frame.  The final layers are zero-initialized, so an untrained model
produces all-zero trajectories and uniform scores.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ParamStore, Tensor
from .scene import Trajectory

K_MODES = 6


class InitializerError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryBatch:
    """K candidate futures for one agent: positions (K, t_F, 2) + raw scores (K,)."""

    positions: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 2:
            raise InitializerError(f"positions must be (K, t_F, 2), got {pos.shape}")
        if scores.shape != (pos.shape[0],):
            raise InitializerError(f"scores shape {scores.shape} does not match K={pos.shape[0]}")
        if not np.isfinite(scores).all():
            raise InitializerError("scores must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "scores", scores)

    @property
    def k(self) -> int:
        return self.positions.shape[0]

    @property
    def probabilities(self) -> np.ndarray:
        e = np.exp(self.scores - self.scores.max())
        return e / e.sum()


class Initializer:
    """Dense trunk + K zero-initialized offset heads + score head."""

    GROUP = "initializer"

    def __init__(
        self,
        store: ParamStore,
        embed_dim: int,
        t_f: int,
        k: int = K_MODES,
        hidden: int = 256,
        rng: np.random.Generator | None = None,
    ):
        self.store = store
        self.t_f = t_f
        self.k = k
        if rng is not None:
            def he(fan_in, shape):
                return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

            store.add("init_w1", he(embed_dim, (embed_dim, hidden)), self.GROUP)
            store.add("init_b1", np.zeros(hidden), self.GROUP)
            store.add("init_w2", he(hidden, (hidden, hidden)), self.GROUP)
            store.add("init_b2", np.zeros(hidden), self.GROUP)
            store.add("init_head_w", np.zeros((hidden, k * t_f * 2)), self.GROUP)
            store.add("init_head_b", np.zeros(k * t_f * 2), self.GROUP)
            store.add("init_score_w", np.zeros((hidden, k)), self.GROUP)
            store.add("init_score_b", np.zeros(k), self.GROUP)

    def forward(self, emb) -> tuple[Tensor, Tensor]:
        """Batched modes: embedding (B, E) -> positions (B, K, t_F, 2), scores (B, K)."""
        emb = emb if isinstance(emb, Tensor) else Tensor(emb)
        s = self.store
        h = nn.relu(nn.dense(emb, s["init_w1"], s["init_b1"]))
        h = nn.relu(nn.dense(h, s["init_w2"], s["init_b2"]))
        offsets = nn.dense(h, s["init_head_w"], s["init_head_b"])
        offsets = nn.reshape(offsets, (emb.shape[0], self.k, self.t_f, 2))
        positions = nn.cumsum(offsets, axis=2)  # integrate from the current position
        scores = nn.dense(h, s["init_score_w"], s["init_score_b"])
        return positions, scores


def predict_modes(initializer: Initializer, emb) -> TrajectoryBatch:
    """Single-scene convenience wrapper over :meth:`Initializer.forward`."""
    data = emb.data if isinstance(emb, Tensor) else np.asarray(emb, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    if data.shape[0] != 1:
        raise InitializerError("predict_modes expects a single embedding")
    positions, scores = initializer.forward(Tensor(data))
    return TrajectoryBatch(positions.data[0], scores.data[0])


# ---------------------------------------------------------------------------
# losses


def _gt_positions(gt, t_f: int) -> np.ndarray:
    pos = gt.positions if isinstance(gt, Trajectory) else np.asarray(gt, dtype=np.float64)
    if pos.shape != (t_f, 2):
        raise InitializerError(f"ground truth must be ({t_f}, 2), got {pos.shape}")
    return pos


def closest_mode_indices(positions: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Argmin-ADE mode per batch row; ties resolve to the lowest index."""
    dists = np.linalg.norm(positions - gt[:, None], axis=-1)  # (B, K, T)
    return dists.mean(axis=-1).argmin(axis=1)


def closest_mode_mse(batch: TrajectoryBatch, gt) -> tuple[float, int]:
    """Mean squared positional error of the argmin-ADE mode, plus its index."""
    gt_pos = _gt_positions(gt, batch.positions.shape[1])
    idx = int(closest_mode_indices(batch.positions[None], gt_pos[None])[0])
    err = batch.positions[idx] - gt_pos
    return float((err * err).sum(axis=-1).mean()), idx


def score_nll(batch: TrajectoryBatch, closest_index: int) -> float:
    """-log softmax(scores)[closest_index]."""
    if not (0 <= closest_index < batch.k):
        raise InitializerError(f"closest_index {closest_index} out of range 0..{batch.k - 1}")
    shifted = batch.scores - batch.scores.max()
    log_z = np.log(np.exp(shifted).sum())
    return float(log_z - shifted[closest_index])


def regression_loss(positions: Tensor, scores: Tensor, gt: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Batched closest-mode MSE + score NLL on the tape.

    Mode selection (argmin ADE) happens outside the graph; the returned loss
    is the batch mean of the two terms.  Also returns the selected indices
    for logging.
    """
    gt = np.asarray(gt, dtype=np.float64)
    idx = closest_mode_indices(positions.data, gt)
    chosen = nn.select_index(positions, idx, axis=1)  # (B, T, 2)
    err = nn.sub(chosen, gt)
    mse = nn.mean(nn.sum_(nn.square(err), axis=2), axis=1)  # (B,) mean over steps of squared distance
    logp = nn.select_index(nn.log_softmax(scores, axis=1), idx, axis=1)  # (B,)
    loss = nn.add(nn.mean(mse), nn.mean(nn.mul(logp, -1.0)))
    return loss, idx
