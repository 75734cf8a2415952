"""Finite-difference oracle for every hand-written backward pass.

Central differences of a scalar loss, compared coordinate-by-coordinate
against the analytic gradients. The loss used for normalization layers is
<d_y, forward(x)> where the forward recomputes minibatch statistics from the
perturbed input but holds the corrections r, d at their cached values, which
is exactly the function the analytic backward differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import norm
from .tensor import Rng

# Relative error |a-f| / max(|a|,|f|, 1e-8); coordinates where both sides are
# below TINY are compared absolutely instead.
TINY = 1e-8
DEFAULT_H = 1e-4
NORM_THRESHOLD = 1e-6
END_TO_END_THRESHOLD = 1e-5

MODES = ("bn", "brn-unclipped", "brn-clipped")


def fd_gradient(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central differences (f(x+h*e_i) - f(x-h*e_i)) / 2h per coordinate."""
    if h <= 0:
        raise ValueError("h must be > 0")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"nonfinite loss at coordinate {i}")
        out[i] = (hi - lo) / (2.0 * h)
    return grad


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    max_abs_err: float
    passed: bool


@dataclass
class FdReport:
    """Per-parameter comparison of analytic vs finite-difference gradients."""

    label: str
    h: float
    threshold: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)


def compare_grads(
    name: str, analytic: np.ndarray, numeric: np.ndarray, threshold: float
) -> ParamCheck:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    f = np.asarray(numeric, dtype=np.float64).reshape(-1)
    abs_err = np.abs(a - f)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), TINY)
    rel_err = abs_err / denom
    # Coordinates below TINY magnitude fall back to an absolute comparison.
    negligible = np.maximum(np.abs(a), np.abs(f)) < TINY
    ok = (rel_err <= threshold) | negligible
    return ParamCheck(
        name=name,
        max_rel_err=float(rel_err.max(initial=0.0)),
        max_abs_err=float(abs_err.max(initial=0.0)),
        passed=bool(ok.all()),
    )


def _mode_state(mode: str, features: int, rng: Rng, epsilon: float = 1e-3):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    state = norm.NormState.create(features, epsilon=epsilon, learn_gamma=True)
    state.mu = rng.normal((features,), 0.0, 1.0)
    state.sigma = np.exp(rng.normal((features,), 0.0, 0.3))
    state.beta = rng.normal((features,), 0.0, 1.0)
    state.gamma = rng.normal((features,), 1.0, 0.3)
    if mode == "bn":
        sched = norm.CorrectionSchedule.fixed(1.0, 0.0)
    elif mode == "brn-unclipped":
        sched = norm.CorrectionSchedule.unclipped()
    else:
        # Tight enough that clipping actually binds for typical draws.
        sched = norm.CorrectionSchedule.fixed(1.05, 0.1)
    return state, sched


def check_norm_backward(
    shape: tuple[int, ...],
    mode: str = "bn",
    seed: int = 0,
    h: float = DEFAULT_H,
    threshold: float = NORM_THRESHOLD,
) -> FdReport:
    """FD-check d_x, d_beta, d_gamma of the normalization backward.

    The perturbed forward recomputes mu_B and sigma_B but keeps r, d frozen
    at the values cached by the unperturbed forward (stop-gradient
    semantics).
    """
    rng = Rng(seed)
    axes = norm.default_axes(len(shape))
    features = [n for i, n in enumerate(shape) if i not in axes][0]
    state, sched = _mode_state(mode, features, rng)
    x = rng.normal(shape, 0.0, 1.5)
    d_y = rng.normal(shape, 0.0, 1.0)

    snapshot = norm.NormState(
        mu=state.mu.copy(),
        sigma=state.sigma.copy(),
        beta=state.beta.copy(),
        gamma=state.gamma.copy(),
        learn_gamma=state.learn_gamma,
        epsilon=state.epsilon,
        alpha=state.alpha,
    )
    _, cache = norm.brn_forward_train(x, state, axes, sched)
    grads = norm.brn_backward(d_y, cache, snapshot)

    def loss_x(xp):
        y = norm.normalize_with_frozen_correction(
            xp, snapshot.gamma, snapshot.beta, snapshot.epsilon, axes, cache.r, cache.d
        )
        return float(np.sum(d_y * y))

    def loss_beta(beta):
        y = norm.normalize_with_frozen_correction(
            x, snapshot.gamma, beta, snapshot.epsilon, axes, cache.r, cache.d
        )
        return float(np.sum(d_y * y))

    def loss_gamma(gamma):
        y = norm.normalize_with_frozen_correction(
            x, gamma, snapshot.beta, snapshot.epsilon, axes, cache.r, cache.d
        )
        return float(np.sum(d_y * y))

    report = FdReport(label=f"{mode} {'x'.join(map(str, shape))} seed={seed}", h=h,
                      threshold=threshold)
    report.params.append(
        compare_grads("d_x", grads.d_x, fd_gradient(loss_x, x, h), threshold)
    )
    report.params.append(
        compare_grads("d_beta", grads.d_beta, fd_gradient(loss_beta, snapshot.beta, h),
                      threshold)
    )
    report.params.append(
        compare_grads("d_gamma", grads.d_gamma,
                      fd_gradient(loss_gamma, snapshot.gamma, h), threshold)
    )
    return report


DEFAULT_SHAPES = ((8, 3), (4, 3, 2, 2))
DEFAULT_SEEDS = (0, 1, 2)


def default_suite(
    modes=MODES, shapes=DEFAULT_SHAPES, seeds=DEFAULT_SEEDS, h: float = DEFAULT_H
) -> list[FdReport]:
    return [
        check_norm_backward(shape, mode=mode, seed=seed, h=h)
        for mode in modes
        for shape in shapes
        for seed in seeds
    ]


def format_report_text(reports: list[FdReport]) -> str:
    rows = [("check", "param", "max_rel_err", "max_abs_err", "status")]
    for rep in reports:
        for p in rep.params:
            rows.append(
                (rep.label, p.name, f"{p.max_rel_err:.3e}", f"{p.max_abs_err:.3e}",
                 "pass" if p.passed else "FAIL")
            )
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    return "\n".join(
        "  ".join(col.ljust(w) for col, w in zip(row, widths)) for row in rows
    )


def report_json_lines(reports: list[FdReport]) -> list[str]:
    import json

    lines = []
    for rep in reports:
        for p in rep.params:
            lines.append(
                json.dumps(
                    {
                        "check": rep.label,
                        "param": p.name,
                        "max_rel_err": p.max_rel_err,
                        "max_abs_err": p.max_abs_err,
                        "h": rep.h,
                        "threshold": rep.threshold,
                        "pass": p.passed,
                    },
                    sort_keys=True,
                )
            )
    return lines
