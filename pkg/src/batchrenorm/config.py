"""Experiment configuration: flat INI-style files parsed into dataclasses.

A config describes one experiment regime: the dataset, the network, how
batches are sampled and split into normalization groups, the optimizer, the
correction schedule, and which treatment arms (normalization variants) to
run over which seeds. Validation errors name the offending field.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data import Microbatching, SamplerSpec
from .net import NetworkSpec
from .norm import CorrectionSchedule

ARMS = ("none", "batchnorm", "batchrenorm", "batchnorm_halves", "batchrenorm_halves")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str  # "gaussian_mixture" | "idx"
    classes: int = 10
    per_class: int = 400
    input_width: int = 16
    class_sep: float = 2.5
    seed: int = 17
    images: str = ""
    labels: str = ""
    train_frac: float = 0.8


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "rmsprop"
    lr: float = 0.05
    decay: float = 0.9
    momentum: float = 0.9
    eps: float = 1e-8
    lr_decay_step: int = 0  # 0 disables the single step-decay
    lr_decay_factor: float = 1.0


@dataclass(frozen=True)
class EvalConfig:
    modes: tuple[str, ...] = ("moving_avg",)
    train_mode_labels: int = 16
    train_mode_per_label: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    hidden: tuple[int, ...]
    sampler: SamplerSpec
    microbatch: Microbatching
    optimizer: OptimizerConfig
    schedule: CorrectionSchedule
    eval: EvalConfig
    epsilon: float = 1e-3
    alpha: float = 0.01
    learn_gamma: bool = False
    bad_init: bool = False
    total_steps: int = 1000
    eval_every: int = 200
    arms: tuple[str, ...] = ("batchnorm", "batchrenorm")
    seeds: tuple[int, ...] = (1,)
    ema_decay: float = 0.99
    out_dir: str = "runs/experiment"

    def network_spec(self, arm: str) -> NetworkSpec:
        mode = arm.removesuffix("_halves")
        return NetworkSpec.mlp(
            (self.dataset_input_width(), *self.hidden, self.dataset.classes),
            norm_mode=mode,
            learn_gamma=self.learn_gamma,
            epsilon=self.epsilon,
            alpha=self.alpha,
            bad_init=self.bad_init,
        )

    def dataset_input_width(self) -> int:
        return self.dataset.input_width

    def microbatching_for_arm(self, arm: str) -> Microbatching:
        if arm.endswith("_halves"):
            return Microbatching(size=self.sampler.batch_size // 2,
                                 split="label_disjoint_halves")
        return self.microbatch

    def resolved_json(self) -> str:
        doc = {
            "dataset": asdict(self.dataset),
            "hidden": list(self.hidden),
            "sampler": asdict(self.sampler),
            "microbatch": asdict(self.microbatch),
            "optimizer": asdict(self.optimizer),
            "schedule": asdict(self.schedule),
            "eval": asdict(self.eval),
            "normalization": {
                "epsilon": self.epsilon,
                "alpha": self.alpha,
                "learn_gamma": self.learn_gamma,
            },
            "bad_init": self.bad_init,
            "train": {
                "total_steps": self.total_steps,
                "eval_every": self.eval_every,
                "arms": list(self.arms),
                "seeds": list(self.seeds),
                "ema_decay": self.ema_decay,
            },
            "out_dir": self.out_dir,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _get(parser, section, option, conv, default=None, *, required=False):
    if not parser.has_option(section, option):
        if required:
            raise ConfigError(f"missing required field {section}.{option}")
        return default
    raw = parser.get(section, option)
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {section}.{option}: {raw!r}") from exc


def _as_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.replace(",", " ").split())


def _str_list(raw: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in raw.split(",") if tok.strip())


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(p)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    kind = _get(parser, "dataset", "kind", str, "gaussian_mixture")
    dataset = DatasetConfig(
        kind=kind,
        classes=_get(parser, "dataset", "classes", int, 10),
        per_class=_get(parser, "dataset", "per_class", int, 400),
        input_width=_get(parser, "dataset", "input_width", int, 16),
        class_sep=_get(parser, "dataset", "class_sep", float, 2.5),
        seed=_get(parser, "dataset", "seed", int, 17),
        images=_get(parser, "dataset", "images", str, ""),
        labels=_get(parser, "dataset", "labels", str, ""),
        train_frac=_get(parser, "dataset", "train_frac", float, 0.8),
    )
    if dataset.kind not in ("gaussian_mixture", "idx"):
        raise ConfigError(f"dataset.kind must be gaussian_mixture or idx, "
                          f"got {dataset.kind!r}")
    if dataset.kind == "idx":
        for name, value in (("images", dataset.images), ("labels", dataset.labels)):
            if not value:
                raise ConfigError(f"dataset.{name} is required when dataset.kind=idx")
            if not Path(value).exists():
                raise ConfigError(f"dataset.{name} path does not exist: {value}")

    hidden = _get(parser, "network", "hidden", _int_list, (64, 64))

    mode = _get(parser, "sampler", "mode", str, "iid")
    batch_size = _get(parser, "sampler", "batch_size", int, 32)
    try:
        sampler = SamplerSpec(
            mode=mode,
            batch_size=batch_size,
            labels_per_batch=_get(parser, "sampler", "labels_per_batch", int, 0),
            per_label=_get(parser, "sampler", "per_label", int, 0),
        )
    except ValueError as exc:
        raise ConfigError(f"sampler: {exc}") from exc

    try:
        microbatch = Microbatching(
            size=_get(parser, "microbatch", "size", int, batch_size),
            split=_get(parser, "microbatch", "split", str, "contiguous"),
        )
    except ValueError as exc:
        raise ConfigError(f"microbatch: {exc}") from exc
    if batch_size % microbatch.size != 0:
        raise ConfigError(
            f"microbatch.size={microbatch.size} must divide "
            f"sampler.batch_size={batch_size}"
        )

    optimizer = OptimizerConfig(
        kind=_get(parser, "optimizer", "kind", str, "rmsprop"),
        lr=_get(parser, "optimizer", "lr", float, 0.05),
        decay=_get(parser, "optimizer", "decay", float, 0.9),
        momentum=_get(parser, "optimizer", "momentum", float, 0.9),
        eps=_get(parser, "optimizer", "eps", float, 1e-8),
        lr_decay_step=_get(parser, "optimizer", "lr_decay_step", int, 0),
        lr_decay_factor=_get(parser, "optimizer", "lr_decay_factor", float, 1.0),
    )
    if optimizer.kind not in ("sgd", "momentum", "rmsprop"):
        raise ConfigError(f"optimizer.kind must be sgd, momentum, or rmsprop, "
                          f"got {optimizer.kind!r}")
    if optimizer.lr <= 0:
        raise ConfigError("optimizer.lr must be > 0")

    try:
        schedule = CorrectionSchedule(
            warmup_steps=_get(parser, "schedule", "warmup_steps", int, 0),
            r_ramp_end=_get(parser, "schedule", "r_ramp_end", int, 0),
            d_ramp_end=_get(parser, "schedule", "d_ramp_end", int, 0),
            r_max_final=_get(parser, "schedule", "r_max_final", float, 3.0),
            d_max_final=_get(parser, "schedule", "d_max_final", float, 5.0),
        )
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc

    total_steps = _get(parser, "train", "total_steps", int, 1000)
    if total_steps < 0:
        raise ConfigError("train.total_steps must be >= 0")
    for anchor in ("warmup_steps", "r_ramp_end", "d_ramp_end"):
        if getattr(schedule, anchor) > total_steps:
            raise ConfigError(
                f"schedule.{anchor}={getattr(schedule, anchor)} exceeds "
                f"train.total_steps={total_steps}"
            )

    eval_cfg = EvalConfig(
        modes=_get(parser, "eval", "modes", _str_list, ("moving_avg",)),
        train_mode_labels=_get(parser, "eval", "train_mode_labels", int, 16),
        train_mode_per_label=_get(parser, "eval", "train_mode_per_label", int, 2),
    )
    for m in eval_cfg.modes:
        if m not in ("moving_avg", "train_mode", "ema_weights"):
            raise ConfigError(f"eval.modes entry {m!r} unknown")

    arms = _get(parser, "train", "arms", _str_list, ("batchnorm", "batchrenorm"))
    for arm in arms:
        if arm not in ARMS:
            raise ConfigError(f"train.arms entry {arm!r} not one of {ARMS}")
        if arm.endswith("_halves"):
            if sampler.mode != "label_clustered" or sampler.per_label != 2:
                raise ConfigError(
                    f"train.arms entry {arm!r} requires label_clustered "
                    "sampling with per_label=2"
                )
            if batch_size % 2 != 0:
                raise ConfigError("halves arms require an even sampler.batch_size")

    seeds = _get(parser, "train", "seeds", _int_list, (1,))
    if not seeds:
        raise ConfigError("train.seeds must list at least one seed")

    eval_every = _get(parser, "train", "eval_every", int, max(total_steps, 1))
    if eval_every < 1:
        raise ConfigError("train.eval_every must be >= 1")

    ema_decay = _get(parser, "train", "ema_decay", float, 0.99)
    if not 0 <= ema_decay < 1:
        raise ConfigError("train.ema_decay must lie in [0, 1)")

    cfg = ExperimentConfig(
        dataset=dataset,
        hidden=hidden,
        sampler=sampler,
        microbatch=microbatch,
        optimizer=optimizer,
        schedule=schedule,
        eval=eval_cfg,
        epsilon=_get(parser, "normalization", "epsilon", float, 1e-3),
        alpha=_get(parser, "normalization", "alpha", float, 0.01),
        learn_gamma=_get(parser, "normalization", "learn_gamma", _as_bool, False),
        bad_init=_get(parser, "network", "bad_init", _as_bool, False),
        total_steps=total_steps,
        eval_every=eval_every,
        arms=arms,
        seeds=seeds,
        ema_decay=ema_decay,
        out_dir=_get(parser, "output", "dir", str, "runs/experiment"),
    )
    if cfg.epsilon < 0:
        raise ConfigError("normalization.epsilon must be >= 0")
    if not 0 < cfg.alpha <= 1:
        raise ConfigError("normalization.alpha must lie in (0, 1]")
    return cfg
