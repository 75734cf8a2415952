"""Batch normalization and batch renormalization layer operations.

Stateless functions over a NormState. Training forwards normalize with
minibatch statistics; renormalization additionally applies the clipped
per-feature corrections r = sigma_B/sigma and d = (mu_B - mu)/sigma, which
are treated as constants during backpropagation (stop-gradient). Moving
statistics are updated after the corrections are computed, so r and d always
see the pre-update averages.

Shape conventions: inputs are rank 2 (batch, features) or rank 4
(batch, channels, height, width); `axes` lists every dim except the
feature/channel dim, and per-feature state vectors have the remaining
(feature,) shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Axes,
    ShapeError,
    expand_over_axes,
    reduce_biased_var,
    reduce_mean,
    reduced_shape,
    validate_axes,
)


class DegenerateBatchError(ValueError):
    """Fewer than 2 elements per feature: minibatch variance is meaningless."""


@dataclass
class NormState:
    """Per-feature moving statistics plus the learnable affine parameters.

    sigma stays positive: it starts at 1 and every update blends in a
    sigma_B >= sqrt(eps) with rate alpha in (0, 1].
    """

    mu: np.ndarray
    sigma: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    learn_gamma: bool = False
    epsilon: float = 1e-3
    alpha: float = 0.01
    step: int = 0

    @classmethod
    def create(
        cls,
        num_features: int,
        epsilon: float = 1e-3,
        alpha: float = 0.01,
        learn_gamma: bool = False,
    ) -> "NormState":
        if epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        return cls(
            mu=np.zeros(num_features),
            sigma=np.ones(num_features),
            beta=np.zeros(num_features),
            gamma=np.ones(num_features),
            learn_gamma=learn_gamma,
            epsilon=float(epsilon),
            alpha=float(alpha),
        )

    @property
    def num_features(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class CorrectionSchedule:
    """Step-indexed bounds (r_max(t), d_max(t)) on the allowed correction.

    Both bounds are pinned (r_max=1, d_max=0) for the warmup, then ramp
    piecewise-linearly to their final values at their respective ramp ends,
    and stay constant afterwards.
    """

    warmup_steps: int
    r_ramp_end: int
    d_ramp_end: int
    r_max_final: float = 3.0
    d_max_final: float = 5.0

    def __post_init__(self):
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.r_ramp_end < self.warmup_steps or self.d_ramp_end < self.warmup_steps:
            raise ValueError("ramp ends must be >= warmup_steps")
        if self.r_max_final < 1:
            raise ValueError("r_max_final must be >= 1")
        if self.d_max_final < 0:
            raise ValueError("d_max_final must be >= 0")

    @classmethod
    def fixed(cls, r_max: float, d_max: float) -> "CorrectionSchedule":
        """Constant bounds from step 0 (no warmup, no ramp)."""
        return cls(0, 0, 0, r_max_final=r_max, d_max_final=d_max)

    @classmethod
    def unclipped(cls) -> "CorrectionSchedule":
        """No effective bounds: r in (0, inf), d in (-inf, inf)."""
        return cls(0, 0, 0, r_max_final=math.inf, d_max_final=math.inf)


def _ramp(step: int, start: int, end: int, lo: float, hi: float) -> float:
    if step < start:
        return lo
    if step >= end:
        return hi
    return lo + (hi - lo) * (step - start) / (end - start)


def schedule_bounds(sched: CorrectionSchedule, step: int) -> tuple[float, float]:
    """Allowed (r_max, d_max) at training step `step`."""
    if step < 0:
        raise ValueError("step must be >= 0")
    r_max = _ramp(step, sched.warmup_steps, sched.r_ramp_end, 1.0, sched.r_max_final)
    d_max = _ramp(step, sched.warmup_steps, sched.d_ramp_end, 0.0, sched.d_max_final)
    return r_max, d_max


@dataclass
class ForwardCache:
    """Per-step quantities the backward pass needs.

    r and d are the clipped corrections actually applied (constants of the
    step); x_hat is the corrected normalized activation, x_centered is
    x - mu_B; m counts the elements reduced per feature.
    """

    mu_B: np.ndarray
    sigma_B: np.ndarray
    r: np.ndarray
    d: np.ndarray
    x_hat: np.ndarray
    x_centered: np.ndarray
    m: int
    axes: Axes
    r_clip_frac: float = 0.0
    d_clip_frac: float = 0.0


@dataclass
class NormGradients:
    d_x: np.ndarray
    d_beta: np.ndarray
    d_gamma: np.ndarray | None = None


def _check_norm_input(x: np.ndarray, state: NormState, axes) -> tuple[Axes, int]:
    if x.ndim not in (2, 4):
        raise ShapeError(f"normalization input must be rank 2 or 4, got rank {x.ndim}")
    axes = validate_axes(x, axes)
    feat_shape = reduced_shape(x.shape, axes)
    if feat_shape != state.mu.shape:
        raise ShapeError(
            f"state has {state.mu.shape} features but reduction leaves {feat_shape}"
        )
    m = 1
    for a in axes:
        m *= x.shape[a]
    return axes, m


def default_axes(rank: int) -> Axes:
    """Reduce over everything but the feature/channel dim (dim 1)."""
    if rank == 2:
        return (0,)
    if rank == 4:
        return (0, 2, 3)
    raise ShapeError(f"no default reduction axes for rank {rank}")


def _batch_stats(x: np.ndarray, axes: Axes, epsilon: float):
    # Hot path: axes pre-validated by callers, so use numpy directly.
    mu_B = x.mean(axis=axes)
    diff = x - expand_over_axes(mu_B, axes)
    var_B = (diff * diff).mean(axis=axes)
    sigma_B = np.sqrt(epsilon + var_B)
    return mu_B, sigma_B, diff


def _normalize_train(
    x: np.ndarray, state: NormState, axes: Axes, m: int, r_max: float, d_max: float
) -> tuple[np.ndarray, ForwardCache]:
    """Shared training forward; r_max=1, d_max=0 pins r=1, d=0 (plain batchnorm)."""
    mu_B, sigma_B, x_centered = _batch_stats(x, axes, state.epsilon)

    r_raw = sigma_B / state.sigma
    d_raw = (mu_B - state.mu) / state.sigma
    r = np.clip(r_raw, 1.0 / r_max, r_max)
    d = np.clip(d_raw, -d_max, d_max)
    r_clip_frac = float(np.mean((r_raw < 1.0 / r_max) | (r_raw > r_max)))
    d_clip_frac = float(np.mean(np.abs(d_raw) > d_max))

    x_hat = x_centered / expand_over_axes(sigma_B, axes) * expand_over_axes(r, axes)
    x_hat = x_hat + expand_over_axes(d, axes)
    y = expand_over_axes(state.gamma, axes) * x_hat + expand_over_axes(state.beta, axes)

    cache = ForwardCache(
        mu_B=mu_B,
        sigma_B=sigma_B,
        r=r,
        d=d,
        x_hat=x_hat,
        x_centered=x_centered,
        m=m,
        axes=axes,
        r_clip_frac=r_clip_frac,
        d_clip_frac=d_clip_frac,
    )
    return y, cache


def bn_forward_train(
    x: np.ndarray, state: NormState, axes
) -> tuple[np.ndarray, ForwardCache]:
    """Batchnorm training forward; updates the moving statistics."""
    axes, m = _check_norm_input(x, state, axes)
    if m < 2:
        raise DegenerateBatchError(f"need >= 2 elements per feature, got m={m}")
    y, cache = _normalize_train(x, state, axes, m, r_max=1.0, d_max=0.0)
    update_moving_stats(state, cache.mu_B, cache.sigma_B)
    return y, cache


def brn_forward_train(
    x: np.ndarray,
    state: NormState,
    axes,
    sched: CorrectionSchedule,
    step: int | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Batch renormalization training forward.

    Corrections are bounded by the schedule at `step` (state.step when not
    given) and computed from the pre-update moving statistics; the moving
    statistics are updated afterwards and state.step is incremented.
    """
    axes, m = _check_norm_input(x, state, axes)
    if m < 2:
        raise DegenerateBatchError(f"need >= 2 elements per feature, got m={m}")
    r_max, d_max = schedule_bounds(sched, state.step if step is None else step)
    y, cache = _normalize_train(x, state, axes, m, r_max=r_max, d_max=d_max)
    update_moving_stats(state, cache.mu_B, cache.sigma_B)
    state.step += 1
    return y, cache


def update_moving_stats(state: NormState, mu_B: np.ndarray, sigma_B: np.ndarray) -> None:
    """Exponential update: mu += alpha*(mu_B - mu), sigma += alpha*(sigma_B - sigma).

    Averages the standard deviation directly, not the variance.
    """
    state.mu = state.mu + state.alpha * (mu_B - state.mu)
    state.sigma = state.sigma + state.alpha * (sigma_B - state.sigma)


def brn_backward(d_y: np.ndarray, cache: ForwardCache, state: NormState) -> NormGradients:
    """Gradients through the training forward, with r and d held constant.

    d_x combines the direct path through x_hat with the paths through the
    minibatch mean and standard deviation; per feature the result sums to
    zero over the batch.
    """
    if d_y.shape != cache.x_hat.shape:
        raise ShapeError(
            f"d_y shape {d_y.shape} != forward output shape {cache.x_hat.shape}"
        )
    axes = cache.axes
    m = cache.m
    gamma = expand_over_axes(state.gamma, axes)
    sigma_B = expand_over_axes(cache.sigma_B, axes)
    r = expand_over_axes(cache.r, axes)

    d_xhat = d_y * gamma
    d_sigma_B = np.sum(d_xhat * cache.x_centered * (-r / sigma_B**2), axis=axes)
    d_mu_B = np.sum(d_xhat * (-r / sigma_B), axis=axes)
    d_x = (
        d_xhat * (r / sigma_B)
        + expand_over_axes(d_sigma_B, axes) * cache.x_centered / (m * sigma_B)
        + expand_over_axes(d_mu_B, axes) / m
    )
    d_beta = np.sum(d_y, axis=axes)
    d_gamma = np.sum(d_y * cache.x_hat, axis=axes) if state.learn_gamma else None
    return NormGradients(d_x=d_x, d_beta=d_beta, d_gamma=d_gamma)


# Batchnorm backward is the r=1, d=0 specialization of the same equations,
# and bn_forward_train caches exactly those values.
bn_backward = brn_backward


def norm_forward_inference(x: np.ndarray, state: NormState) -> np.ndarray:
    """Per-example inference: y = gamma*(x - mu)/sigma + beta, no state change."""
    axes = default_axes(x.ndim)
    if reduced_shape(x.shape, axes) != state.mu.shape:
        raise ShapeError(
            f"state has {state.mu.shape} features, input feature dim is "
            f"{reduced_shape(x.shape, axes)}"
        )
    mu = expand_over_axes(state.mu, axes)
    sigma = expand_over_axes(state.sigma, axes)
    gamma = expand_over_axes(state.gamma, axes)
    beta = expand_over_axes(state.beta, axes)
    return gamma * (x - mu) / sigma + beta


def norm_forward_trainmode_eval(x: np.ndarray, state: NormState, axes) -> np.ndarray:
    """Batchnorm-style normalization with minibatch statistics, side-effect free.

    Diagnostic evaluation mode only: no moving-stats update, no cache.
    """
    axes, m = _check_norm_input(x, state, axes)
    if m < 2:
        raise DegenerateBatchError(f"need >= 2 elements per feature, got m={m}")
    _, sigma_B, x_centered = _batch_stats(x, axes, state.epsilon)
    x_hat = x_centered / expand_over_axes(sigma_B, axes)
    return expand_over_axes(state.gamma, axes) * x_hat + expand_over_axes(
        state.beta, axes
    )


def normalize_with_frozen_correction(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    epsilon: float,
    axes,
    r: np.ndarray,
    d: np.ndarray,
) -> np.ndarray:
    """Recompute the training forward with r, d held at given values.

    This is the function the backward pass differentiates (stop-gradient on
    r and d); finite-difference checks must perturb through it.
    """
    axes = validate_axes(np.asarray(x), axes)
    _, sigma_B, x_centered = _batch_stats(x, axes, epsilon)
    x_hat = x_centered / expand_over_axes(sigma_B, axes)
    x_hat = x_hat * expand_over_axes(r, axes) + expand_over_axes(d, axes)
    return expand_over_axes(gamma, axes) * x_hat + expand_over_axes(beta, axes)
