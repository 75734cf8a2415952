"""Experiment runner: training loop, evaluation modes, metrics CSV.

One run = one (arm, seed) pair: sample batch, split into normalization
microbatches, forward/backward per microbatch against the shared layer
state, aggregate gradients, optimizer step, EMA update. Eval rows are
appended at step 0, every eval_every steps, and at the final step. Runs are
deterministic per seed; the wall-clock column is the only nondeterministic
output.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .data import (
    Dataset,
    SamplerSpec,
    load_idx,
    make_gaussian_mixture,
    sample_batch,
    split_microbatches,
    split_train_val,
)
from .net import EmaTracker, Network, aggregate_gradients, grad_norms, make_optimizer, softmax_xent
from .tensor import Rng

METRICS_COLUMNS = (
    "step",
    "train_loss",
    "acc_moving_avg",
    "acc_train_mode",
    "acc_ema_weights",
    "clip_frac_r",
    "clip_frac_d",
    "wall_ms",
)

# Offsets keeping the per-run random streams independent of each other.
SAMPLER_SEED_OFFSET = 1_000_003
EVAL_SEED_OFFSET = 2_000_003


class NonFiniteLossError(RuntimeError):
    """Training produced a nonfinite loss or gradient; run aborted."""

    def __init__(self, step: int, loss: float, norms: dict[str, float]):
        super().__init__(f"nonfinite loss {loss} at step {step}")
        self.step = step
        self.loss = loss
        self.norms = norms


@dataclass
class MetricsRow:
    step: int
    train_loss: float | None = None
    acc_moving_avg: float | None = None
    acc_train_mode: float | None = None
    acc_ema_weights: float | None = None
    clip_frac_r: float | None = None
    clip_frac_d: float | None = None
    wall_ms: float | None = None

    def as_csv(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, int):
                return str(v)
            return repr(float(v))

        return [fmt(getattr(self, col)) for col in METRICS_COLUMNS]


def build_dataset(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset.kind == "idx":
        full = load_idx(cfg.dataset.images, cfg.dataset.labels)
    else:
        full = make_gaussian_mixture(
            classes=cfg.dataset.classes,
            per_class=cfg.dataset.per_class,
            input_width=cfg.dataset.input_width,
            class_sep=cfg.dataset.class_sep,
            seed=cfg.dataset.seed,
        )
    return split_train_val(full, cfg.dataset.train_frac)


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(
    net: Network,
    ds: Dataset,
    mode: str,
    cfg: ExperimentConfig | None = None,
    seed: int = 0,
    ema_shadow: dict[str, np.ndarray] | None = None,
) -> float:
    """Validation accuracy under one evaluation mode.

    moving_avg: per-example inference with the moving statistics.
    train_mode: minibatch statistics over label-clustered batches drawn from
    `ds` (diagnostic; no state mutation). ema_weights: inference with the
    EMA shadow of the trainable parameters.
    """
    if mode == "moving_avg":
        return accuracy_from_logits(net.forward_infer(ds.features), ds.labels)
    if mode == "ema_weights":
        if ema_shadow is None:
            raise ValueError("ema_weights evaluation needs the shadow parameters")
        shadow_net = net.clone_with_params(ema_shadow)
        return accuracy_from_logits(shadow_net.forward_infer(ds.features), ds.labels)
    if mode == "train_mode":
        if cfg is None:
            raise ValueError("train_mode evaluation needs the experiment config")
        labels_per_batch = cfg.eval.train_mode_labels
        per_label = cfg.eval.train_mode_per_label
        spec = SamplerSpec(
            mode="label_clustered",
            batch_size=labels_per_batch * per_label,
            labels_per_batch=labels_per_batch,
            per_label=per_label,
        )
        rng = Rng(seed + EVAL_SEED_OFFSET)
        batches = max(1, math.ceil(ds.n / spec.batch_size))
        hits = 0
        total = 0
        for _ in range(batches):
            fx, fy = sample_batch(ds, spec, rng)
            logits = net.forward_trainmode_eval(fx)
            hits += int(np.sum(np.argmax(logits, axis=1) == fy))
            total += fy.size
        return hits / total
    raise ValueError(f"unknown eval mode {mode!r}")


def _eval_row(
    step: int,
    net: Network,
    val_ds: Dataset,
    cfg: ExperimentConfig,
    seed: int,
    ema: EmaTracker,
    loss: float | None,
    clip_r: float | None,
    clip_d: float | None,
    t0: float,
) -> MetricsRow:
    row = MetricsRow(step=step, train_loss=loss, clip_frac_r=clip_r, clip_frac_d=clip_d)
    for mode in cfg.eval.modes:
        acc = evaluate(net, val_ds, mode, cfg=cfg, seed=seed, ema_shadow=ema.shadow)
        setattr(row, f"acc_{mode}", acc)
    row.wall_ms = (time.perf_counter() - t0) * 1000.0
    return row


def write_metrics(rows: list[MetricsRow], path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())


def run_single(
    cfg: ExperimentConfig, arm: str, seed: int, run_dir: Path
) -> list[MetricsRow]:
    """Train one arm with one seed; writes metrics.csv and checkpoint.brnl."""
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    train_ds, val_ds = build_dataset(cfg)
    net = Network(cfg.network_spec(arm), seed=seed, sched=cfg.schedule)
    params = net.parameters()
    opt = make_optimizer(
        cfg.optimizer.kind,
        cfg.optimizer.lr,
        decay=cfg.optimizer.decay,
        momentum=cfg.optimizer.momentum,
        eps=cfg.optimizer.eps,
    )
    ema = EmaTracker(params, cfg.ema_decay)
    sampler_rng = Rng(seed + SAMPLER_SEED_OFFSET)
    micro = cfg.microbatching_for_arm(arm)

    rows = [_eval_row(0, net, val_ds, cfg, seed, ema, None, None, None, t0)]
    try:
        for s in range(cfg.total_steps):
            fx, fy = sample_batch(train_ds, cfg.sampler, sampler_rng)
            grad_sets = []
            losses = []
            clip_rs = []
            clip_ds = []
            for mx, my in split_microbatches(fx, fy, micro):
                logits, caches = net.forward_train(mx, step=s)
                loss, d_logits = softmax_xent(logits, my)
                grad_sets.append(net.backward(caches, d_logits))
                losses.append(loss)
                fr, fd = net.clip_fractions(caches)
                clip_rs.append(fr)
                clip_ds.append(fd)
            grads = aggregate_gradients(grad_sets)
            loss = float(np.mean(losses))
            if not math.isfinite(loss) or any(
                not np.all(np.isfinite(g)) for g in grads.values()
            ):
                rows.append(
                    MetricsRow(step=s + 1, train_loss=loss,
                               wall_ms=(time.perf_counter() - t0) * 1000.0)
                )
                raise NonFiniteLossError(s + 1, loss, grad_norms(grads))
            if cfg.optimizer.lr_decay_step and s + 1 == cfg.optimizer.lr_decay_step:
                opt.lr *= cfg.optimizer.lr_decay_factor
            opt.step(params, grads)
            ema.update(params)
            if (s + 1) % cfg.eval_every == 0 or s + 1 == cfg.total_steps:
                rows.append(
                    _eval_row(s + 1, net, val_ds, cfg, seed, ema,
                              loss, float(np.mean(clip_rs)), float(np.mean(clip_ds)), t0)
                )
    finally:
        write_metrics(rows, run_dir / "metrics.csv")
        save_checkpoint(net, run_dir / "checkpoint.brnl")
    return rows


def run_dir_for(out_dir: Path, arm: str, seed: int) -> Path:
    return out_dir / arm / f"seed{seed}"


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    seeds: tuple[int, ...] | None = None,
) -> dict[tuple[str, int], list[MetricsRow]]:
    """Run every configured arm over every seed under out_dir."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config-resolved.json").write_text(cfg.resolved_json() + "\n")
    results: dict[tuple[str, int], list[MetricsRow]] = {}
    for arm in cfg.arms:
        for seed in seeds if seeds is not None else cfg.seeds:
            results[(arm, seed)] = run_single(cfg, arm, seed, run_dir_for(out, arm, seed))
    return results


def read_metrics(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def final_accuracy(run_dir: Path, column: str = "acc_moving_avg") -> float:
    rows = read_metrics(Path(run_dir) / "metrics.csv")
    if not rows:
        raise ValueError(f"no metrics rows in {run_dir}")
    value = rows[-1][column]
    if value == "":
        raise ValueError(f"column {column} empty in final row of {run_dir}")
    return float(value)


def compare_runs(run_dirs: list[Path]) -> str:
    """Merge several runs' curves into one CSV keyed on step.

    Emits a (train_loss, acc_moving_avg) column pair per run.
    """
    curves = {}
    for rd in run_dirs:
        rd = Path(rd)
        name = "/".join(rd.parts[-3:]) if len(rd.parts) >= 3 else str(rd)
        curves[name] = {int(r["step"]): r for r in read_metrics(rd / "metrics.csv")}
    steps = sorted({s for c in curves.values() for s in c})
    header = ["step"]
    for name in curves:
        header += [f"{name}:train_loss", f"{name}:acc_moving_avg"]
    lines = [",".join(header)]
    for s in steps:
        cells = [str(s)]
        for name, curve in curves.items():
            row = curve.get(s)
            cells += [row["train_loss"] if row else "", row["acc_moving_avg"] if row else ""]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
