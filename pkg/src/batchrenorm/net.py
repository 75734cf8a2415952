"""Feed-forward classifier stack: dense -> normalization -> ReLU blocks with a
softmax cross-entropy head, plus optimizers, parameter EMA, and gradient
aggregation. Backprop is hand-written; normalization gradients come from the
norm module.

Dense layers feeding a normalization layer carry no bias (the layer's beta
subsumes it). The training loop is single-threaded with respect to model
state: training forwards mutate the per-layer moving statistics.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import norm
from .tensor import Rng, ShapeError

NORM_MODES = ("none", "batchnorm", "batchrenorm")


@dataclass
class DenseLayer:
    """y = x W^T (+ b). W is (out, in); b is (out,) or None.

    einsum (unoptimized) keeps each output row's reduction order independent
    of the batch size, so per-example results are bit-identical whether an
    example is processed alone or inside a batch; BLAS gemm does not
    guarantee that.
    """

    W: np.ndarray
    b: np.ndarray | None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = np.einsum("bi,oi->bo", x, self.W)
        if self.b is not None:
            y = y + self.b
        return y


@dataclass(frozen=True)
class NetworkSpec:
    """Widths (input, hidden..., output) and one norm mode per hidden layer."""

    widths: tuple[int, ...]
    norm_modes: tuple[str, ...]
    num_classes: int
    learn_gamma: bool = False
    epsilon: float = 1e-3
    alpha: float = 0.01
    bad_init: bool = False

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if len(self.norm_modes) != len(self.widths) - 2:
            raise ValueError("need one norm mode per hidden layer")
        for m in self.norm_modes:
            if m not in NORM_MODES:
                raise ValueError(f"unknown norm mode {m!r}")
        if self.widths[-1] != self.num_classes:
            raise ValueError("final width must equal the class count")

    @classmethod
    def mlp(cls, widths, norm_mode: str = "none", **kwargs) -> "NetworkSpec":
        widths = tuple(widths)
        return cls(
            widths=widths,
            norm_modes=(norm_mode,) * (len(widths) - 2),
            num_classes=widths[-1],
            **kwargs,
        )


@dataclass
class Block:
    dense: DenseLayer
    mode: str
    state: norm.NormState | None


@dataclass
class BlockCache:
    x_in: np.ndarray
    pre_act: np.ndarray  # normalization output (or dense output when mode none)
    norm_cache: norm.ForwardCache | None


@dataclass
class NetCaches:
    blocks: list[BlockCache]
    head_in: np.ndarray


@dataclass
class TrainStepReport:
    loss: float
    grad_norms: dict[str, float]
    r_clip_frac: float
    d_clip_frac: float


class Network:
    """MLP with per-hidden-layer normalization and hand-written backprop."""

    def __init__(self, spec: NetworkSpec, seed: int,
                 sched: norm.CorrectionSchedule | None = None):
        self.spec = spec
        self.sched = sched or norm.CorrectionSchedule.fixed(3.0, 5.0)
        rng = Rng(seed)
        self.blocks: list[Block] = []
        widths = spec.widths
        init_scale = 10.0 if spec.bad_init else 1.0
        for i, mode in enumerate(spec.norm_modes):
            fan_in, fan_out = widths[i], widths[i + 1]
            W = rng.normal((fan_out, fan_in), 0.0, init_scale / np.sqrt(fan_in))
            b = np.zeros(fan_out) if mode == "none" else None
            state = None
            if mode != "none":
                state = norm.NormState.create(
                    fan_out, epsilon=spec.epsilon, alpha=spec.alpha,
                    learn_gamma=spec.learn_gamma,
                )
            self.blocks.append(Block(DenseLayer(W, b), mode, state))
        fan_in, fan_out = widths[-2], widths[-1]
        W = rng.normal((fan_out, fan_in), 0.0, init_scale / np.sqrt(fan_in))
        self.head = DenseLayer(W, np.zeros(fan_out))

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array; optimizers update in place."""
        params: dict[str, np.ndarray] = {}
        for i, blk in enumerate(self.blocks):
            params[f"block{i}.W"] = blk.dense.W
            if blk.dense.b is not None:
                params[f"block{i}.b"] = blk.dense.b
            if blk.state is not None:
                params[f"block{i}.beta"] = blk.state.beta
                if blk.state.learn_gamma:
                    params[f"block{i}.gamma"] = blk.state.gamma
        params["head.W"] = self.head.W
        params["head.b"] = self.head.b
        return params

    def forward_train(self, x: np.ndarray, step: int) -> tuple[np.ndarray, NetCaches]:
        """Training forward: minibatch-statistics normalization, stats updated."""
        h = x
        caches = []
        for blk in self.blocks:
            x_in = h
            z = blk.dense.forward(h)
            if blk.mode == "none":
                y, ncache = z, None
            elif blk.mode == "batchnorm":
                y, ncache = norm.bn_forward_train(z, blk.state, (0,))
            else:
                y, ncache = norm.brn_forward_train(z, blk.state, (0,), self.sched,
                                                   step=step)
            caches.append(BlockCache(x_in=x_in, pre_act=y, norm_cache=ncache))
            h = np.maximum(y, 0.0)
        logits = self.head.forward(h)
        return logits, NetCaches(blocks=caches, head_in=h)

    def forward_infer(self, x: np.ndarray) -> np.ndarray:
        """Inference forward: moving-average normalization, per-example, pure."""
        h = x
        for blk in self.blocks:
            z = blk.dense.forward(h)
            y = z if blk.mode == "none" else norm.norm_forward_inference(z, blk.state)
            h = np.maximum(y, 0.0)
        return self.head.forward(h)

    def forward_trainmode_eval(self, x: np.ndarray) -> np.ndarray:
        """Minibatch-statistics forward without any state mutation (diagnostic)."""
        h = x
        for blk in self.blocks:
            z = blk.dense.forward(h)
            if blk.mode == "none":
                y = z
            else:
                y = norm.norm_forward_trainmode_eval(z, blk.state, (0,))
            h = np.maximum(y, 0.0)
        return self.head.forward(h)

    def forward_frozen(self, x: np.ndarray, caches: NetCaches) -> np.ndarray:
        """Recompute the training forward holding each layer's r, d at the
        cached values; this is the map finite differences must perturb."""
        h = x
        for blk, bc in zip(self.blocks, caches.blocks):
            z = blk.dense.forward(h)
            if blk.mode == "none":
                y = z
            else:
                y = norm.normalize_with_frozen_correction(
                    z, blk.state.gamma, blk.state.beta, blk.state.epsilon, (0,),
                    bc.norm_cache.r, bc.norm_cache.d,
                )
            h = np.maximum(y, 0.0)
        return self.head.forward(h)

    def backward(self, caches: NetCaches, d_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every trainable parameter, keyed like parameters()."""
        grads: dict[str, np.ndarray] = {}
        grads["head.W"] = d_logits.T @ caches.head_in
        grads["head.b"] = d_logits.sum(axis=0)
        d_h = d_logits @ self.head.W
        for i in range(len(self.blocks) - 1, -1, -1):
            blk, bc = self.blocks[i], caches.blocks[i]
            d_y = d_h * (bc.pre_act > 0)
            if blk.mode == "none":
                d_z = d_y
                grads[f"block{i}.b"] = d_y.sum(axis=0)
            else:
                ngrads = norm.brn_backward(d_y, bc.norm_cache, blk.state)
                d_z = ngrads.d_x
                grads[f"block{i}.beta"] = ngrads.d_beta
                if blk.state.learn_gamma:
                    grads[f"block{i}.gamma"] = ngrads.d_gamma
            grads[f"block{i}.W"] = d_z.T @ bc.x_in
            d_h = d_z @ blk.dense.W
        return grads

    def clip_fractions(self, caches: NetCaches) -> tuple[float, float]:
        """Mean clipped fraction of r and d over the net's norm layers."""
        fr = [bc.norm_cache.r_clip_frac for bc in caches.blocks if bc.norm_cache]
        fd = [bc.norm_cache.d_clip_frac for bc in caches.blocks if bc.norm_cache]
        if not fr:
            return 0.0, 0.0
        return float(np.mean(fr)), float(np.mean(fd))

    def clone_with_params(self, params: dict[str, np.ndarray]) -> "Network":
        """Deep copy with the trainable arrays replaced (moving stats kept)."""
        other = copy.deepcopy(self)
        mine = other.parameters()
        for name, value in params.items():
            mine[name][...] = value
        return other


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and d_logits = (softmax - onehot)/m, max-stabilized."""
    labels = np.asarray(labels)
    m, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = float(-log_probs[np.arange(m), labels].mean())
    d_logits = exp / total
    d_logits[np.arange(m), labels] -= 1.0
    return loss, d_logits / m


class SGD:
    def __init__(self, lr: float):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            p -= self.lr * grads[name]


class Momentum:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            v = self.velocity.setdefault(name, np.zeros_like(p))
            v *= self.momentum
            v += grads[name]
            p -= self.lr * v


class RMSProp:
    """acc = decay*acc + (1-decay)*g^2; p -= lr * g / sqrt(acc + eps)."""

    def __init__(self, lr: float, decay: float = 0.9, eps: float = 1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.acc: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads[name]
            a = self.acc.setdefault(name, np.zeros_like(p))
            a *= self.decay
            a += (1.0 - self.decay) * g * g
            p -= self.lr * g / np.sqrt(a + self.eps)


def make_optimizer(kind: str, lr: float, decay: float = 0.9,
                   momentum: float = 0.9, eps: float = 1e-8):
    if kind == "sgd":
        return SGD(lr)
    if kind == "momentum":
        return Momentum(lr, momentum)
    if kind == "rmsprop":
        return RMSProp(lr, decay, eps)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def ema_update(shadow: dict[str, np.ndarray], params: dict[str, np.ndarray],
               decay: float) -> None:
    """shadow = decay*shadow + (1-decay)*param, in place, per parameter."""
    if not 0 <= decay < 1:
        raise ValueError("decay must lie in [0, 1)")
    for name, p in params.items():
        s = shadow[name]
        s *= decay
        s += (1.0 - decay) * p


class EmaTracker:
    """Shadow copy of the trainable parameters, decayed toward the live ones."""

    def __init__(self, params: dict[str, np.ndarray], decay: float):
        if not 0 <= decay < 1:
            raise ValueError("decay must lie in [0, 1)")
        self.decay = decay
        self.shadow = {name: p.copy() for name, p in params.items()}

    def update(self, params: dict[str, np.ndarray]) -> None:
        ema_update(self.shadow, params, self.decay)


def aggregate_gradients(grad_sets: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Arithmetic mean per parameter over the microbatch gradient sets."""
    if not grad_sets:
        raise ValueError("no gradient sets to aggregate")
    first = grad_sets[0]
    for gs in grad_sets[1:]:
        if gs.keys() != first.keys():
            raise ShapeError("gradient sets disagree on parameter names")
    return {
        name: np.mean([gs[name] for gs in grad_sets], axis=0) for name in first
    }


def grad_norms(grads: dict[str, np.ndarray]) -> dict[str, float]:
    return {name: float(np.linalg.norm(g)) for name, g in grads.items()}
