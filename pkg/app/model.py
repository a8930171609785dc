"""Small GAP-headed convolutional classifier and its checkpoint format.

Architecture: per block conv(k, padding k//2) -> relu -> 2x2 max-pool, then
global-average-pool and a single linear layer. Because the head is exactly
GAP + linear, Grad-CAM equals CAM here: the saliency map is a first-order
function of the last activations and the head weights.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from . import functional as F
from .schemas import BackboneConfig
from .tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

ModelParams = Dict[str, Tensor]

CHECKPOINT_MAGIC = b"RESCKPT1\n"


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be parsed."""


def _kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)  # std = sqrt(2 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: BackboneConfig, seed: Optional[int] = None) -> ModelParams:
    """Kaiming fan-in uniform weights, zero biases; reproducible per seed."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params: ModelParams = {}
    in_ch = config.in_channels
    for idx, (width, k) in enumerate(zip(config.widths, config.kernel_sizes)):
        fan_in = in_ch * k * k
        params[f"conv{idx}.weight"] = Tensor(_kaiming_uniform(rng, (width, in_ch, k, k), fan_in), requires_grad=True)
        params[f"conv{idx}.bias"] = Tensor(np.zeros(width), requires_grad=True)
        in_ch = width
    params["fc.weight"] = Tensor(_kaiming_uniform(rng, (in_ch, config.num_classes), in_ch), requires_grad=True)
    params["fc.bias"] = Tensor(np.zeros(config.num_classes), requires_grad=True)
    return params


def _block_count(params: ModelParams) -> int:
    count = 0
    while f"conv{count}.weight" in params:
        count += 1
    return count


def forward(params: ModelParams, batch: Union[Tensor, np.ndarray]) -> Tuple[Tensor, Tensor]:
    """Return (logits N x classes, last activations N x K x h x w)."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    blocks = _block_count(params)
    if blocks == 0:
        raise ShapeError("parameters contain no convolution blocks")
    if x.ndim != 4 or x.shape[1] != params["conv0.weight"].shape[1]:
        raise ShapeError(
            f"batch shape {x.shape} does not match {params['conv0.weight'].shape[1]} input channels"
        )
    for idx in range(blocks):
        weight = params[f"conv{idx}.weight"]
        x = F.conv2d(x, weight, params[f"conv{idx}.bias"], stride=1, padding=weight.shape[2] // 2)
        x = F.max_pool2d(F.relu(x), 2)
    activations = x
    logits = F.matmul(F.global_avg_pool(activations), params["fc.weight"]) + params["fc.bias"]
    return logits, activations


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def prediction_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over the batch."""
    targets = one_hot(labels, logits.shape[1])
    picked = F.sum(F.log_softmax(logits, axis=1) * targets, axis=1)
    return -F.mean(picked)


def copy_params(params: ModelParams) -> ModelParams:
    return {name: Tensor(t.data.copy(), requires_grad=t.requires_grad) for name, t in params.items()}


# ----------------------------------------------------------------- checkpoint
def save_checkpoint(path: Union[str, Path], params: ModelParams, meta: Optional[Dict[str, Any]] = None) -> None:
    """Write params as: magic line, one JSON header line, raw little-endian float64.

    The header lists every tensor's name, shape and element offset in sorted
    name order, plus free-form `meta`. Output bytes depend only on the inputs.
    """
    names = sorted(params)
    entries, offset = [], 0
    for name in names:
        arr = params[name].data
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += int(arr.size)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header.encode("utf8") + b"\n")
        for name in names:
            fh.write(params[name].data.astype("<f8").tobytes(order="C"))
    logger.debug(f"Saved checkpoint {path} ({len(names)} tensors, {offset} values)")


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelParams, Dict[str, Any]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    body = raw[len(CHECKPOINT_MAGIC):]
    newline = body.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing header")
    try:
        header = json.loads(body[:newline].decode("utf8"))
        entries = header["tensors"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    payload = body[newline + 1:]
    total = sum(int(np.prod(e["shape"], dtype=np.int64)) for e in entries)
    if len(payload) != total * 8:
        raise CheckpointError(f"{path}: expected {total * 8} data bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8")
    params: ModelParams = {}
    for entry in entries:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = int(entry["offset"])
        arr = values[start:start + count].reshape(entry["shape"]).astype(np.float64)
        params[entry["name"]] = Tensor(arr, requires_grad=True)
    return params, header.get("meta", {})
