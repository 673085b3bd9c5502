"""The detector: spatial filtering, K temporal blocks and two prediction heads.

    input (B, C, T)
      -> spatial filter       (B, 1, C, T)          C linear combinations, identity when C = 1
      -> block k = 1..K       (B, 4*2^k, C, T/2^k)  conv(1,3) -> batch norm -> ReLU -> max-pool(1,2)
      -> localization head    (B, N_d, 2)           full-extent conv, linear
      -> classification head  (B, N_d, L+1)         full-extent conv, softmax per default
"""
import json
import logging
import struct
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from sleepevents.config import Config
from sleepevents.models.configs import NetConfig
from sleepevents.models.models import Interval
from sleepevents.services import layers
from sleepevents.services.geometry import DefaultGrid, decode_many
from sleepevents.services.record_io import check_magic
from sleepevents.utils.errors import (
    InvalidConfig,
    MalformedHeader,
    NonFiniteActivation,
    ShapeMismatch,
    StaleCache,
    TruncatedPayload,
)

logger = logging.getLogger(__name__)

ParameterGradients = Dict[str, np.ndarray]
Candidate = Tuple[int, float, Interval]


def block_maps(k: int) -> Tuple[int, int]:
    """(input maps, output maps) of temporal block k (1-based)."""
    return (1 if k == 1 else 4 * 2 ** (k - 1)), 4 * 2 ** k


class DetectorModel:
    """Learnable parameters, batch-norm running statistics and the architecture config."""

    def __init__(self, cfg: NetConfig, params: Dict[str, np.ndarray], buffers: Dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.buffers = buffers
        self.version = 0

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    @property
    def has_spatial_filter(self) -> bool:
        return self.cfg.n_channels > 1

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def bump_version(self) -> None:
        """Invalidate caches from earlier forward passes."""
        self.version += 1

    def astype(self, dtype) -> "DetectorModel":
        return DetectorModel(
            self.cfg,
            {name: p.astype(dtype) for name, p in self.params.items()},
            {name: b.astype(dtype) for name, b in self.buffers.items()},
        )

    def copy(self) -> "DetectorModel":
        return self.astype(self.dtype)


def init_model(cfg: NetConfig, seed: int = 0, dtype=np.float32) -> DetectorModel:
    """
    He (fan-in) initialization for every convolution, zero biases, identity
    batch norm, and a spatial filter at identity plus small noise.
    """
    cfg.check()
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {}

    if cfg.n_channels > 1:
        params["spatial.weight"] = np.eye(cfg.n_channels) + Config.SPATIAL_INIT_NOISE * rng.standard_normal(
            (cfg.n_channels, cfg.n_channels)
        )
        params["spatial.bias"] = np.zeros(cfg.n_channels)

    for k in range(1, cfg.n_blocks + 1):
        n_in, n_out = block_maps(k)
        params[f"block{k}.conv.weight"] = rng.standard_normal((n_out, n_in, 1, 3)) * np.sqrt(2.0 / (n_in * 3))
        params[f"block{k}.conv.bias"] = np.zeros(n_out)
        params[f"block{k}.bn.gamma"] = np.ones(n_out)
        params[f"block{k}.bn.beta"] = np.zeros(n_out)
        buffers[f"block{k}.bn.running_mean"] = np.zeros(n_out)
        buffers[f"block{k}.bn.running_var"] = np.ones(n_out)

    head_shape = (cfg.n_features, cfg.n_channels, cfg.reduced_times)
    fan_in = int(np.prod(head_shape))
    for name, n_kernels in (("loc_head", 2 * cfg.n_defaults), ("cls_head", (cfg.n_labels + 1) * cfg.n_defaults)):
        params[f"{name}.weight"] = rng.standard_normal((n_kernels, *head_shape)) * np.sqrt(2.0 / fan_in)
        params[f"{name}.bias"] = np.zeros(n_kernels)

    model = DetectorModel(
        cfg,
        {name: p.astype(dtype) for name, p in params.items()},
        {name: b.astype(dtype) for name, b in buffers.items()},
    )
    logger.info(
        f"Initialized detector: C={cfg.n_channels}, T={cfg.n_times}, K={cfg.n_blocks}, "
        f"L={cfg.n_labels}, N_d={cfg.n_defaults}, {model.num_parameters()} parameters"
    )
    return model


class NetworkOutput(NamedTuple):
    """loc: (..., N_d, 2) encoded offsets; probs: (..., N_d, L+1) class probabilities."""
    loc: np.ndarray
    probs: np.ndarray

    def sample(self, index: int) -> "NetworkOutput":
        return NetworkOutput(self.loc[index], self.probs[index])

    def __len__(self) -> int:
        return self.loc.shape[0]


class ForwardCache:
    def __init__(self, model: DetectorModel, mode: str):
        self.model_id = id(model)
        self.version = model.version
        self.mode = mode
        self.spatial = None
        self.blocks: List[dict] = []
        self.features: Optional[np.ndarray] = None
        self.probs: Optional[np.ndarray] = None


class Gradients(NamedTuple):
    params: ParameterGradients
    input: Optional[np.ndarray] = None


def forward(model: DetectorModel, batch: np.ndarray, mode: str = "train") -> Tuple[NetworkOutput, ForwardCache]:
    """
    Run the detector on a (B, C, T) batch.

    Train mode normalizes with batch statistics and updates the running
    statistics in place; eval mode is a pure function of (model, batch).
    """
    cfg = model.cfg
    batch = np.asarray(batch)
    if batch.ndim != 3 or batch.shape[1:] != (cfg.n_channels, cfg.n_times):
        raise ShapeMismatch(
            f"expected a (B, {cfg.n_channels}, {cfg.n_times}) batch, got {batch.shape}"
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    x = batch.astype(model.dtype, copy=False)
    p = model.params
    cache = ForwardCache(model, mode)

    if model.has_spatial_filter:
        x, cache.spatial = layers.spatial_forward(x, p["spatial.weight"], p["spatial.bias"])
    h = x[:, None, :, :]

    for k in range(1, cfg.n_blocks + 1):
        block: dict = {}
        h, block["conv"] = layers.conv_forward(h, p[f"block{k}.conv.weight"], p[f"block{k}.conv.bias"])
        h, block["bn"], running_mean, running_var = layers.batchnorm_forward(
            h,
            p[f"block{k}.bn.gamma"],
            p[f"block{k}.bn.beta"],
            model.buffers[f"block{k}.bn.running_mean"],
            model.buffers[f"block{k}.bn.running_var"],
            mode,
            Config.BN_EPS,
            Config.BN_MOMENTUM,
        )
        if mode == "train":
            model.buffers[f"block{k}.bn.running_mean"] = running_mean
            model.buffers[f"block{k}.bn.running_var"] = running_var
        h, block["relu"] = layers.relu_forward(h)
        h, block["pool"] = layers.maxpool_forward(h)
        cache.blocks.append(block)

    cache.features = h
    flat = h.reshape(h.shape[0], -1)
    n = flat.shape[0]
    loc = layers.dense_forward(flat, p["loc_head.weight"].reshape(2 * cfg.n_defaults, -1), p["loc_head.bias"])
    logits = layers.dense_forward(
        flat, p["cls_head.weight"].reshape((cfg.n_labels + 1) * cfg.n_defaults, -1), p["cls_head.bias"]
    )
    if not (np.isfinite(loc).all() and np.isfinite(logits).all()):
        logger.error("Non-finite activations in detector heads")
        raise NonFiniteActivation("detector produced non-finite activations")
    probs = layers.softmax(logits.reshape(n, cfg.n_defaults, cfg.n_labels + 1))
    cache.probs = probs
    return NetworkOutput(loc.reshape(n, cfg.n_defaults, 2), probs), cache


def backward(
    model: DetectorModel,
    cache: ForwardCache,
    d_loc: np.ndarray,
    d_probs: np.ndarray,
    input_grad: bool = False,
) -> Gradients:
    """
    Exact gradients of an upstream scalar w.r.t. every parameter, given its
    partials w.r.t. the localization outputs and the class probabilities.
    """
    if cache.model_id != id(model) or cache.version != model.version:
        raise StaleCache("forward cache does not belong to the current model parameters")
    cfg = model.cfg
    p = model.params
    n = cache.features.shape[0]
    dtype = model.dtype
    grads: ParameterGradients = {}

    flat = cache.features.reshape(n, -1)
    dz_loc = np.asarray(d_loc, dtype=dtype).reshape(n, 2 * cfg.n_defaults)
    dz_cls = layers.softmax_backward(np.asarray(d_probs, dtype=dtype), cache.probs).reshape(n, -1)

    w_loc = p["loc_head.weight"].reshape(2 * cfg.n_defaults, -1)
    w_cls = p["cls_head.weight"].reshape((cfg.n_labels + 1) * cfg.n_defaults, -1)
    dflat_loc, dw_loc, grads["loc_head.bias"] = layers.dense_backward(dz_loc, flat, w_loc)
    dflat_cls, dw_cls, grads["cls_head.bias"] = layers.dense_backward(dz_cls, flat, w_cls)
    grads["loc_head.weight"] = dw_loc.reshape(p["loc_head.weight"].shape)
    grads["cls_head.weight"] = dw_cls.reshape(p["cls_head.weight"].shape)
    dh = (dflat_loc + dflat_cls).reshape(cache.features.shape)

    for k in range(cfg.n_blocks, 0, -1):
        block = cache.blocks[k - 1]
        dh = layers.maxpool_backward(dh, block["pool"])
        dh = layers.relu_backward(dh, block["relu"])
        dh, grads[f"block{k}.bn.gamma"], grads[f"block{k}.bn.beta"] = layers.batchnorm_backward(dh, block["bn"])
        dh, grads[f"block{k}.conv.weight"], grads[f"block{k}.conv.bias"] = layers.conv_backward(dh, block["conv"])

    dx = dh[:, 0]
    if model.has_spatial_filter:
        dx, grads["spatial.weight"], grads["spatial.bias"] = layers.spatial_backward(dx, cache.spatial)

    ordered = {name: grads[name].astype(dtype, copy=False) for name in model.params}
    return Gradients(ordered, dx if input_grad else None)


def decode_outputs(output: NetworkOutput, grid: DefaultGrid) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Decoded (starts, ends) plus argmax label and its probability, each (B, N_d)."""
    starts, ends = decode_many(grid.center_array, grid.duration_array, output.loc.astype(np.float64))
    labels = np.argmax(output.probs, axis=-1)
    probs = np.take_along_axis(output.probs, labels[..., None], axis=-1)[..., 0].astype(np.float64)
    return starts, ends, labels, probs


def predict_windows(
    model: DetectorModel,
    windows: np.ndarray,
    grid: DefaultGrid,
    batch_size: int = 64,
) -> List[List[Candidate]]:
    """Non-background candidates (label, probability, interval) for every window."""
    if grid.n_defaults != model.cfg.n_defaults:
        raise ShapeMismatch(f"grid has {grid.n_defaults} defaults, model expects {model.cfg.n_defaults}")
    results: List[List[Candidate]] = []
    for first in range(0, len(windows), batch_size):
        output, _ = forward(model, windows[first:first + batch_size], mode="eval")
        starts, ends, labels, probs = decode_outputs(output, grid)
        for row in range(len(output)):
            keep = np.flatnonzero(labels[row] != 0)
            results.append([
                (int(labels[row, i]), float(probs[row, i]), Interval(float(starts[row, i]), float(ends[row, i])))
                for i in keep
            ])
    return results


def predict_window(model: DetectorModel, window: np.ndarray, grid: DefaultGrid) -> List[Candidate]:
    return predict_windows(model, np.asarray(window)[None], grid)[0]


# ---------- Checkpoints ----------
_HEADER_LENGTH = struct.Struct("<I")
_FLOAT = np.dtype("<f4")


def save_checkpoint(path: Union[str, Path], model: DetectorModel) -> Path:
    """
    Checkpoint layout: magic ``DSM1``, u32 header length, JSON header
    (config + manifest of name/shape/offset), then float32 little-endian
    tensors in manifest order.
    """
    manifest = []
    blobs = []
    offset = 0
    for kind, tensors in (("param", model.params), ("buffer", model.buffers)):
        for name, tensor in tensors.items():
            blob = np.ascontiguousarray(tensor, dtype=_FLOAT).tobytes()
            manifest.append({"name": name, "kind": kind, "shape": list(tensor.shape), "offset": offset})
            blobs.append(blob)
            offset += len(blob)
    header = json.dumps({"config": model.cfg.model_dump(), "parameters": manifest}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(Config.CHECKPOINT_MAGIC + _HEADER_LENGTH.pack(len(header)) + header + b"".join(blobs))
    logger.info(f"Checkpoint saved to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> DetectorModel:
    path = Path(path)
    blob = path.read_bytes()
    check_magic(blob, Config.CHECKPOINT_MAGIC, path)
    offset = len(Config.CHECKPOINT_MAGIC)
    if len(blob) < offset + _HEADER_LENGTH.size:
        raise TruncatedPayload(f"{path}: missing header length")
    (length,) = _HEADER_LENGTH.unpack(blob[offset:offset + _HEADER_LENGTH.size])
    offset += _HEADER_LENGTH.size
    if len(blob) < offset + length:
        raise TruncatedPayload(f"{path}: header truncated")
    try:
        header = json.loads(blob[offset:offset + length].decode("utf-8"))
        cfg = NetConfig.model_validate(header["config"])
        manifest = header["parameters"]
    except (ValueError, KeyError, TypeError) as e:
        raise MalformedHeader(f"{path}: invalid checkpoint header: {e}") from e
    payload = memoryview(blob)[offset + length:]
    params: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {}
    for entry in manifest:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start, stop = entry["offset"], entry["offset"] + count * _FLOAT.itemsize
        if stop > len(payload):
            raise TruncatedPayload(f"{path}: tensor {entry['name']} truncated")
        tensor = np.frombuffer(payload[start:stop], dtype=_FLOAT).reshape(entry["shape"]).astype(np.float32)
        (params if entry.get("kind", "param") == "param" else buffers)[entry["name"]] = tensor
    try:
        cfg.check()
    except InvalidConfig as e:
        raise MalformedHeader(f"{path}: {e}") from e
    logger.info(f"Checkpoint loaded from {path}")
    return DetectorModel(cfg, params, buffers)
