"""Conditional diffusion machinery: schedule, forward process, reverse step,
noise estimator, and the 5-step refinement of initializer modes.

Level convention: ``q_sample(tau0, g, eps) = sqrt(abar_g) tau0 +
sqrt(1-abar_g) eps`` is the level-g sample, and ``denoise_step(tau, g)``
consumes a level-g sample and emits level g-1 using alpha_g / abar_g.  One
step from level 1 with the true noise recovers the clean trajectory exactly.
Refinement treats each initializer mode as a level-5 sample and walks levels
5..1 down to 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Tensor


class DiffusionError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    """Variance schedule: beta/alpha/alpha-bar tables plus the refine levels."""

    betas: np.ndarray  # (T,), betas[g-1] is beta_g
    refine_levels: tuple[int, ...] = (5, 4, 3, 2, 1)
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)  # (T+1,), index by level; alpha_bars[0] == 1

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise DiffusionError("betas must be a non-empty 1-D array")
        if (betas < 0).any() or (betas >= 1).any():
            raise DiffusionError("betas must lie in [0, 1)")
        if len(self.refine_levels) > len(betas):
            raise DiffusionError(
                f"refinement depth {len(self.refine_levels)} exceeds schedule length {len(betas)}"
            )
        alphas = 1.0 - betas
        alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
        if (betas > 0).any() and not (np.diff(alpha_bars) < 0).all():
            raise DiffusionError("alpha-bar must be strictly decreasing for a noisy schedule")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def total_steps(self) -> int:
        return len(self.betas)

    def alpha(self, level) -> np.ndarray:
        return self.alphas[np.asarray(level) - 1]

    def alpha_bar(self, level) -> np.ndarray:
        return self.alpha_bars[np.asarray(level)]

    def to_dict(self) -> dict:
        return {"betas": self.betas.tolist(), "refine_levels": list(self.refine_levels)}

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionSchedule":
        return cls(np.asarray(d["betas"], dtype=np.float64), tuple(d["refine_levels"]))


def make_schedule(
    total_steps: int = 100,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    refine_depth: int = 5,
) -> DiffusionSchedule:
    """Linear beta schedule; refinement spans the ``refine_depth`` lowest levels."""
    if total_steps < refine_depth:
        raise DiffusionError(f"total_steps {total_steps} below refinement depth {refine_depth}")
    if not (0 < beta_start <= beta_end < 1):
        raise DiffusionError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, total_steps)
    return DiffusionSchedule(betas, tuple(range(refine_depth, 0, -1)))


def q_sample(schedule: DiffusionSchedule, tau0: np.ndarray, gamma, eps: np.ndarray) -> np.ndarray:
    """Closed-form forward process: the level-gamma noisy trajectory.

    ``gamma`` may be a scalar level or a per-sample array matching the
    leading axis of ``tau0``.
    """
    tau0 = np.asarray(tau0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != tau0.shape:
        raise DiffusionError(f"noise shape {eps.shape} does not match trajectory {tau0.shape}")
    gamma = np.asarray(gamma)
    if (gamma < 1).any() or (gamma > schedule.total_steps).any():
        raise DiffusionError(f"level {gamma} outside schedule 1..{schedule.total_steps}")
    abar = schedule.alpha_bar(gamma)
    shape = abar.shape + (1,) * (tau0.ndim - abar.ndim)
    abar = abar.reshape(shape)
    out = np.sqrt(abar) * tau0 + np.sqrt(1.0 - abar) * eps
    if (abar == 1.0).any():
        # zero-noise levels are a bit-exact identity (0 * eps may flip -0.0)
        out = np.where(np.broadcast_to(abar == 1.0, out.shape), tau0, out)
    return out


def sinusoidal_embedding(level, dim: int) -> np.ndarray:
    """Transformer-style sin/cos embedding of the diffusion level."""
    level = np.atleast_1d(np.asarray(level, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = level[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class NoiseEstimator:
    """Dense noise-estimation network conditioned on the context embedding.

    Takes (noisy trajectory, embedding, level) and returns the predicted
    noise with the trajectory's shape.  The level enters through a
    sinusoidal embedding.
    """

    GROUP = "denoiser"

    def __init__(self, store, schedule: DiffusionSchedule, embed_dim: int, t_f: int,
                 hidden: int = 256, step_dim: int = 32, rng: np.random.Generator | None = None):
        self.schedule = schedule
        self.t_f = t_f
        self.step_dim = step_dim
        if rng is not None:
            in_dim = t_f * 2 + embed_dim + step_dim
            def he(fan_in, shape):
                return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            store.add("fe_w1", he(in_dim, (in_dim, hidden)), self.GROUP)
            store.add("fe_b1", np.zeros(hidden), self.GROUP)
            store.add("fe_w2", he(hidden, (hidden, hidden)), self.GROUP)
            store.add("fe_b2", np.zeros(hidden), self.GROUP)
            # small (not zero) head init so encoder gradients flow from batch one
            store.add("fe_w3", rng.standard_normal((hidden, t_f * 2)) * 1e-2, self.GROUP)
            store.add("fe_b3", np.zeros(t_f * 2), self.GROUP)
        self.store = store

    def __call__(self, tau, emb, level) -> Tensor:
        tau = tau if isinstance(tau, Tensor) else Tensor(tau)
        emb = emb if isinstance(emb, Tensor) else Tensor(emb)
        b = tau.shape[0]
        level = np.broadcast_to(np.atleast_1d(level), (b,))
        step = sinusoidal_embedding(level, self.step_dim)
        flat = nn.reshape(tau, (b, self.t_f * 2))
        h = nn.concat([flat, emb, Tensor(step)], axis=1)
        s = self.store
        h = nn.relu(nn.dense(h, s["fe_w1"], s["fe_b1"]))
        h = nn.relu(nn.dense(h, s["fe_w2"], s["fe_b2"]))
        out = nn.dense(h, s["fe_w3"], s["fe_b3"])
        return nn.reshape(out, (b, self.t_f, 2))


class ImpliedNoiseOracle:
    """Cheating estimator: returns the noise exactly implied by its input.

    Given the clean trajectory it inverts the closed-form forward process at
    the queried level, so iterated denoising telescopes back onto tau0.  For
    an input fresh from q_sample this equals the drawn noise.
    """

    def __init__(self, schedule: DiffusionSchedule, tau0: np.ndarray):
        self.schedule = schedule
        self.tau0 = np.asarray(tau0, dtype=np.float64)

    def __call__(self, tau, emb, level):
        data = tau.data if isinstance(tau, Tensor) else np.asarray(tau, dtype=np.float64)
        b = data.shape[0]
        level_arr = np.broadcast_to(np.atleast_1d(level), (b,))
        abar = self.schedule.alpha_bar(level_arr).reshape(b, 1, 1)
        denom = np.sqrt(1.0 - abar)
        if (denom == 0).any():
            raise DiffusionError("noise estimate undefined at a zero-noise level")
        tau0 = np.broadcast_to(self.tau0, data.shape)
        return Tensor((data - np.sqrt(abar) * tau0) / denom)


def denoise_step(schedule: DiffusionSchedule, estimator, tau, emb, level: int, z: np.ndarray | None = None):
    """One reverse step: level ``level`` sample in, level ``level - 1`` out.

    Applies tau' = (tau - (1-alpha)/sqrt(1-abar) * eps_hat) / sqrt(alpha)
    + sqrt(1-alpha) z.  When beta at this level is exactly zero the
    estimator term vanishes and the step is a bit-exact identity; the
    estimator is not called.  ``z=None`` means deterministic (z = 0).
    Works on Tensors (training tape) and plain arrays alike.
    """
    if not (1 <= level <= schedule.total_steps):
        raise DiffusionError(f"level {level} outside schedule 1..{schedule.total_steps}")
    alpha = float(schedule.alpha(level))
    abar = float(schedule.alpha_bar(level))
    one_minus_alpha = 1.0 - alpha
    coef = one_minus_alpha / np.sqrt(1.0 - abar) if one_minus_alpha > 0.0 else 0.0
    is_tensor = isinstance(tau, Tensor)
    if coef != 0.0:
        eps_hat = estimator(tau, emb, level)
        if is_tensor or isinstance(eps_hat, Tensor):
            tau = tau if is_tensor else Tensor(tau)
            out = nn.mul(nn.sub(tau, nn.mul(eps_hat, coef)), 1.0 / np.sqrt(alpha))
        else:
            out = (np.asarray(tau) - coef * np.asarray(eps_hat)) / np.sqrt(alpha)
    else:
        out = nn.mul(tau, 1.0 / np.sqrt(alpha)) if is_tensor else np.asarray(tau) * (1.0 / np.sqrt(alpha))
    if z is not None:
        sigma = np.sqrt(one_minus_alpha)
        if sigma > 0.0:
            out = nn.add(out, sigma * z) if isinstance(out, Tensor) else out + sigma * z
    return out


def refine(schedule: DiffusionSchedule, estimator, positions, emb,
           rng: np.random.Generator | None = None, on_step=None):
    """Leapfrog refinement: run the refine levels down to 0.

    ``positions`` is the stack of initializer samples (B, t_F, 2), each
    treated as a sample at the highest refine level.  ``rng=None`` runs
    deterministically (z = 0); otherwise independent noise is drawn per step
    and per sample.  Scores are not touched by refinement; callers carry
    them through unchanged.  ``on_step(i, total)`` is invoked after each
    completed denoise step (progress reporting).
    """
    tau = positions
    shape = tau.shape if isinstance(tau, Tensor) else np.asarray(tau).shape
    total = len(schedule.refine_levels)
    for i, level in enumerate(schedule.refine_levels):
        z = rng.standard_normal(shape) if rng is not None else None
        tau = denoise_step(schedule, estimator, tau, emb, level, z)
        if on_step is not None:
            on_step(i + 1, total)
    return tau


def noise_estimation_loss(
    schedule: DiffusionSchedule,
    estimator,
    tau0: np.ndarray,
    emb,
    rng: np.random.Generator,
) -> Tensor:
    """L_NE: per-sample L2 norm of (eps - eps_hat), averaged over the batch.

    Levels are drawn uniformly over the whole schedule and the noisy input
    comes from the closed-form forward process.  Gradients flow into both
    the estimator and (through ``emb``) the context encoder.
    """
    tau0 = np.asarray(tau0, dtype=np.float64)
    if tau0.ndim != 3:
        raise DiffusionError(f"expected (B, t_F, 2) trajectories, got {tau0.shape}")
    b = tau0.shape[0]
    gamma = rng.integers(1, schedule.total_steps + 1, size=b)
    eps = rng.standard_normal(tau0.shape)
    noisy = q_sample(schedule, tau0, gamma, eps)
    eps_hat = estimator(Tensor(noisy), emb, gamma)
    diff = nn.sub(Tensor(eps), eps_hat)
    per_sample = nn.sqrt(nn.sum_(nn.square(diff), axis=(1, 2)))
    return nn.mean(per_sample)
