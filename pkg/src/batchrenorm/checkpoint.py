"""Model checkpoints: magic "BRNL", version, JSON manifest, raw float payload.

Layout: 4-byte magic, little-endian uint32 version, little-endian uint32
manifest length, UTF-8 canonical-JSON manifest, then the arrays' raw
little-endian float64 bytes in manifest order. Round trips are bit-exact,
including the per-layer step counters.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .net import Network, NetworkSpec
from .norm import CorrectionSchedule

MAGIC = b"BRNL"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def _collect_arrays(net: Network) -> list[tuple[str, np.ndarray]]:
    arrays: list[tuple[str, np.ndarray]] = []
    for i, blk in enumerate(net.blocks):
        arrays.append((f"block{i}.W", blk.dense.W))
        if blk.dense.b is not None:
            arrays.append((f"block{i}.b", blk.dense.b))
        if blk.state is not None:
            arrays.append((f"block{i}.mu", blk.state.mu))
            arrays.append((f"block{i}.sigma", blk.state.sigma))
            arrays.append((f"block{i}.beta", blk.state.beta))
            arrays.append((f"block{i}.gamma", blk.state.gamma))
    arrays.append(("head.W", net.head.W))
    arrays.append(("head.b", net.head.b))
    return arrays


def save_checkpoint(net: Network, path: str) -> None:
    arrays = _collect_arrays(net)
    manifest = {
        "spec": {
            "widths": list(net.spec.widths),
            "norm_modes": list(net.spec.norm_modes),
            "num_classes": net.spec.num_classes,
            "learn_gamma": net.spec.learn_gamma,
            "epsilon": net.spec.epsilon,
            "alpha": net.spec.alpha,
            "bad_init": net.spec.bad_init,
        },
        "schedule": {
            "warmup_steps": net.sched.warmup_steps,
            "r_ramp_end": net.sched.r_ramp_end,
            "d_ramp_end": net.sched.d_ramp_end,
            "r_max_final": net.sched.r_max_final,
            "d_max_final": net.sched.d_max_final,
        },
        "steps": [blk.state.step if blk.state else 0 for blk in net.blocks],
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Network:
    """Rebuild a Network from a checkpoint; no partial model on failure."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise CheckpointTruncatedError(f"{path}: shorter than the fixed header")
    if raw[:4] != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic {raw[:4]!r}")
    version, manifest_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, expected {VERSION}")
    if len(raw) < 12 + manifest_len:
        raise CheckpointTruncatedError(f"{path}: manifest truncated")
    manifest = json.loads(raw[12:12 + manifest_len].decode("utf-8"))

    offset = 12 + manifest_len
    values: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 8
        if end > len(raw):
            raise CheckpointTruncatedError(f"{path}: payload truncated at "
                                           f"{entry['name']}")
        values[entry["name"]] = (
            np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64)
            .reshape(shape)
        )
        offset = end

    spec_doc = manifest["spec"]
    spec = NetworkSpec(
        widths=tuple(spec_doc["widths"]),
        norm_modes=tuple(spec_doc["norm_modes"]),
        num_classes=spec_doc["num_classes"],
        learn_gamma=spec_doc["learn_gamma"],
        epsilon=spec_doc["epsilon"],
        alpha=spec_doc["alpha"],
        bad_init=spec_doc["bad_init"],
    )
    sched_doc = manifest["schedule"]
    sched = CorrectionSchedule(
        warmup_steps=sched_doc["warmup_steps"],
        r_ramp_end=sched_doc["r_ramp_end"],
        d_ramp_end=sched_doc["d_ramp_end"],
        r_max_final=sched_doc["r_max_final"],
        d_max_final=sched_doc["d_max_final"],
    )
    net = Network(spec, seed=0, sched=sched)
    for i, blk in enumerate(net.blocks):
        blk.dense.W = values[f"block{i}.W"]
        if blk.dense.b is not None:
            blk.dense.b = values[f"block{i}.b"]
        if blk.state is not None:
            blk.state.mu = values[f"block{i}.mu"]
            blk.state.sigma = values[f"block{i}.sigma"]
            blk.state.beta = values[f"block{i}.beta"]
            blk.state.gamma = values[f"block{i}.gamma"]
            blk.state.step = manifest["steps"][i]
    net.head.W = values["head.W"]
    net.head.b = values["head.b"]
    return net
