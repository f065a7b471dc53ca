"""The 3D residual regression network: clip batch in, quality score out.

Architecture: a 3x7x7 stem convolution with stride (1,2,2), four residual
stages (each block is conv-bn-relu-conv-bn plus an identity or projection
shortcut, then relu), global average pooling, a linear layer producing the
128-dimensional feature vector, and a final linear layer regressing the
feature vector to one score per clip. Stages 2-4 halve the temporal and
spatial resolution by default.

Parameters live in a flat {name: ndarray} dict so the optimizer, the
serializer, and the gradient checker can all iterate them uniformly.
Running-statistics entries (*.running_mean / *.running_var) are state, not
trainable parameters.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .ops import (
    ShapeMismatch,
    batchnorm3d_backward,
    batchnorm3d_forward,
    conv3d_backward,
    conv3d_forward,
    global_avg_pool,
    global_avg_pool_backward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
)

STEM_KERNEL = (3, 7, 7)
STEM_STRIDE = (1, 2, 2)
STEM_PADDING = (1, 3, 3)
BLOCK_KERNEL = (3, 3, 3)
BLOCK_PADDING = (1, 1, 1)


class BadParamsFile(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    """Widths and downsampling schedule of the four residual stages."""

    stage_channels: tuple[int, int, int, int] = (8, 16, 32, 64)
    blocks_per_stage: tuple[int, int, int, int] = (1, 1, 1, 1)
    feature_dim: int = 128
    in_channels: int = 3
    temporal_downsample: tuple[bool, bool, bool, bool] = (False, True, True, True)
    spatial_downsample: tuple[bool, bool, bool, bool] = (False, True, True, True)

    def __post_init__(self):
        for name in ("stage_channels", "blocks_per_stage",
                     "temporal_downsample", "spatial_downsample"):
            value = tuple(getattr(self, name))
            if len(value) != 4:
                raise ValueError(f"{name} must have exactly 4 entries, got {value}")
            object.__setattr__(self, name, value)
        if any(c < 1 for c in self.stage_channels) or any(b < 1 for b in self.blocks_per_stage):
            raise ValueError("stage channels and block counts must be positive")
        if self.feature_dim != 128:
            raise ValueError(f"feature_dim is fixed at 128, got {self.feature_dim}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be positive, got {self.in_channels}")


@dataclass(frozen=True)
class _BlockLayout:
    name: str
    in_channels: int
    out_channels: int
    stride: tuple[int, int, int]

    @property
    def has_projection(self) -> bool:
        return self.in_channels != self.out_channels or self.stride != (1, 1, 1)


def _layout(config: NetworkConfig) -> list[_BlockLayout]:
    blocks = []
    in_ch = config.stage_channels[0]
    for s in range(4):
        out_ch = config.stage_channels[s]
        for b in range(config.blocks_per_stage[s]):
            if b == 0:
                stride = (2 if config.temporal_downsample[s] else 1,
                          2 if config.spatial_downsample[s] else 1,
                          2 if config.spatial_downsample[s] else 1)
            else:
                stride = (1, 1, 1)
            blocks.append(_BlockLayout(
                name=f"stage{s + 1}.block{b + 1}",
                in_channels=in_ch,
                out_channels=out_ch,
                stride=stride,
            ))
            in_ch = out_ch
    return blocks


def trainable_names(params: dict[str, np.ndarray]) -> list[str]:
    """Parameter names excluding running statistics, in sorted order."""
    return sorted(
        n for n in params
        if not n.endswith(".running_mean") and not n.endswith(".running_var")
    )


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _init_conv(params, rng, name, cin, cout, kernel, dtype):
    fan_in = cin * int(np.prod(kernel))
    params[f"{name}.w"] = _he_uniform(rng, (cout, cin) + kernel, fan_in, dtype)
    params[f"{name}.b"] = np.zeros(cout, dtype=dtype)


def _init_bn(params, name, c, dtype):
    params[f"{name}.gamma"] = np.ones(c, dtype=dtype)
    params[f"{name}.beta"] = np.zeros(c, dtype=dtype)
    params[f"{name}.running_mean"] = np.zeros(c, dtype=dtype)
    params[f"{name}.running_var"] = np.ones(c, dtype=dtype)


def init_params(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> dict:
    """He-uniform weights, zero biases, unit batch-norm scale; seeded."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    stem_ch = config.stage_channels[0]
    _init_conv(params, rng, "stem.conv", config.in_channels, stem_ch, STEM_KERNEL, dtype)
    _init_bn(params, "stem.bn", stem_ch, dtype)
    for blk in _layout(config):
        _init_conv(params, rng, f"{blk.name}.conv1", blk.in_channels,
                   blk.out_channels, BLOCK_KERNEL, dtype)
        _init_bn(params, f"{blk.name}.bn1", blk.out_channels, dtype)
        _init_conv(params, rng, f"{blk.name}.conv2", blk.out_channels,
                   blk.out_channels, BLOCK_KERNEL, dtype)
        _init_bn(params, f"{blk.name}.bn2", blk.out_channels, dtype)
        if blk.has_projection:
            _init_conv(params, rng, f"{blk.name}.proj", blk.in_channels,
                       blk.out_channels, (1, 1, 1), dtype)
            _init_bn(params, f"{blk.name}.projbn", blk.out_channels, dtype)
    last_ch = config.stage_channels[3]
    params["head.fc.w"] = _he_uniform(rng, (config.feature_dim, last_ch), last_ch, dtype)
    params["head.fc.b"] = np.zeros(config.feature_dim, dtype=dtype)
    params["head.out.w"] = _he_uniform(rng, (1, config.feature_dim), config.feature_dim, dtype)
    params["head.out.b"] = np.zeros(1, dtype=dtype)
    return params


def _bn_apply(params, name, x, training, update_running, caches):
    y, cache, new_rm, new_rv = batchnorm3d_forward(
        x, params[f"{name}.gamma"], params[f"{name}.beta"],
        params[f"{name}.running_mean"], params[f"{name}.running_var"],
        training=training,
    )
    if training and update_running:
        params[f"{name}.running_mean"] = new_rm.astype(params[f"{name}.running_mean"].dtype)
        params[f"{name}.running_var"] = new_rv.astype(params[f"{name}.running_var"].dtype)
    caches[name] = cache
    return y


def network_forward(config: NetworkConfig, params: dict, clip_batch: np.ndarray,
                    mode: str = "eval", update_running: bool | None = None,
                    return_cache: bool = False):
    """Run the network on a (N, C, T, H, W) batch.

    Returns (features, predictions) with shapes (N, 128) and (N,). In
    train mode batch norm uses batch statistics and, unless update_running
    is False, refreshes the running statistics stored in `params`. Pass
    return_cache=True to also receive the cache consumed by
    network_backward.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if update_running is None:
        update_running = training
    x = np.asarray(clip_batch)
    if x.ndim != 5 or x.shape[1] != config.in_channels:
        raise ShapeMismatch(
            f"expected (N, {config.in_channels}, T, H, W), got {x.shape}"
        )

    caches: dict = {"mode": mode}
    y, caches["stem.conv"] = conv3d_forward(
        x, params["stem.conv.w"], params["stem.conv.b"], STEM_STRIDE, STEM_PADDING,
        workspace_tag="stem.conv",
    )
    y = _bn_apply(params, "stem.bn", y, training, update_running, caches)
    y, caches["stem.relu"] = relu_forward(y)

    for blk in _layout(config):
        identity = y
        out, caches[f"{blk.name}.conv1"] = conv3d_forward(
            y, params[f"{blk.name}.conv1.w"], params[f"{blk.name}.conv1.b"],
            blk.stride, BLOCK_PADDING, workspace_tag=f"{blk.name}.conv1",
        )
        out = _bn_apply(params, f"{blk.name}.bn1", out, training, update_running, caches)
        out, caches[f"{blk.name}.relu1"] = relu_forward(out)
        out, caches[f"{blk.name}.conv2"] = conv3d_forward(
            out, params[f"{blk.name}.conv2.w"], params[f"{blk.name}.conv2.b"],
            (1, 1, 1), BLOCK_PADDING, workspace_tag=f"{blk.name}.conv2",
        )
        out = _bn_apply(params, f"{blk.name}.bn2", out, training, update_running, caches)
        if blk.has_projection:
            shortcut, caches[f"{blk.name}.proj"] = conv3d_forward(
                identity, params[f"{blk.name}.proj.w"], params[f"{blk.name}.proj.b"],
                blk.stride, (0, 0, 0),
            )
            shortcut = _bn_apply(params, f"{blk.name}.projbn", shortcut,
                                 training, update_running, caches)
        else:
            shortcut = identity
        out = out + shortcut
        y, caches[f"{blk.name}.relu2"] = relu_forward(out)

    pooled, caches["pool"] = global_avg_pool(y)
    features, caches["head.fc"] = linear_forward(
        pooled, params["head.fc.w"], params["head.fc.b"]
    )
    scores, caches["head.out"] = linear_forward(
        features, params["head.out.w"], params["head.out.b"]
    )
    predictions = scores[:, 0]
    if return_cache:
        return features, predictions, caches
    return features, predictions


def network_backward(config: NetworkConfig, caches: dict,
                     grad_predictions: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagate d(loss)/d(predictions) to every trainable parameter."""
    grads: dict[str, np.ndarray] = {}

    g = grad_predictions[:, None]
    g, grads["head.out.w"], grads["head.out.b"] = linear_backward(g, caches["head.out"])
    g, grads["head.fc.w"], grads["head.fc.b"] = linear_backward(g, caches["head.fc"])
    g = global_avg_pool_backward(g, caches["pool"])

    for blk in reversed(_layout(config)):
        g = relu_backward(g, caches[f"{blk.name}.relu2"])
        g_main, grads[f"{blk.name}.bn2.gamma"], grads[f"{blk.name}.bn2.beta"] = \
            batchnorm3d_backward(g, caches[f"{blk.name}.bn2"])
        g_main, grads[f"{blk.name}.conv2.w"], grads[f"{blk.name}.conv2.b"] = \
            conv3d_backward(g_main, caches[f"{blk.name}.conv2"])
        g_main = relu_backward(g_main, caches[f"{blk.name}.relu1"])
        g_main, grads[f"{blk.name}.bn1.gamma"], grads[f"{blk.name}.bn1.beta"] = \
            batchnorm3d_backward(g_main, caches[f"{blk.name}.bn1"])
        g_main, grads[f"{blk.name}.conv1.w"], grads[f"{blk.name}.conv1.b"] = \
            conv3d_backward(g_main, caches[f"{blk.name}.conv1"])
        if blk.has_projection:
            g_short, grads[f"{blk.name}.projbn.gamma"], grads[f"{blk.name}.projbn.beta"] = \
                batchnorm3d_backward(g, caches[f"{blk.name}.projbn"])
            g_short, grads[f"{blk.name}.proj.w"], grads[f"{blk.name}.proj.b"] = \
                conv3d_backward(g_short, caches[f"{blk.name}.proj"])
        else:
            g_short = g
        g = g_main + g_short

    g = relu_backward(g, caches["stem.relu"])
    g, grads["stem.bn.gamma"], grads["stem.bn.beta"] = \
        batchnorm3d_backward(g, caches["stem.bn"])
    _, grads["stem.conv.w"], grads["stem.conv.b"] = \
        conv3d_backward(g, caches["stem.conv"])
    return grads


# --------------------------------------------------------------------------
# Parameter serialization (PCNN container)
# --------------------------------------------------------------------------
# Little-endian layout:
#   magic "PCNN" | u32 version=1 | u32 config_len | config JSON (utf-8)
#   | u32 n_arrays | n_arrays * entry
# entry: u16 name_len | name (utf-8) | u8 dtype (0=<f4, 1=<f8)
#        | u8 ndim | ndim * u32 dims | raw array bytes

_PCNN_MAGIC = b"PCNN"
_PCNN_VERSION = 1
_DTYPE_CODE = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _config_dict(config: NetworkConfig) -> dict:
    d = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def save_params(path, config: NetworkConfig, params: dict) -> None:
    buf = io.BytesIO()
    cfg = json.dumps(_config_dict(config), sort_keys=True).encode("utf-8")
    buf.write(_PCNN_MAGIC)
    buf.write(struct.pack("<I", _PCNN_VERSION))
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    names = sorted(params)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(params[name])
        if arr.dtype not in _DTYPE_CODE:
            raise BadParamsFile(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<BB", _DTYPE_CODE[arr.dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_params(path, config: NetworkConfig | None = None):
    """Load (config, params); raises ConfigMismatch if `config` disagrees."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _PCNN_MAGIC:
        raise BadParamsFile(f"{path}: bad magic {data[:4]!r}")
    off = 4
    version, cfg_len = struct.unpack_from("<II", data, off)
    off += 8
    if version != _PCNN_VERSION:
        raise BadParamsFile(f"{path}: unsupported version {version}")
    try:
        cfg_dict = json.loads(data[off:off + cfg_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadParamsFile(f"{path}: corrupt config block: {exc}") from None
    off += cfg_len
    loaded_config = NetworkConfig(
        stage_channels=tuple(cfg_dict["stage_channels"]),
        blocks_per_stage=tuple(cfg_dict["blocks_per_stage"]),
        feature_dim=cfg_dict["feature_dim"],
        in_channels=cfg_dict["in_channels"],
        temporal_downsample=tuple(cfg_dict["temporal_downsample"]),
        spatial_downsample=tuple(cfg_dict["spatial_downsample"]),
    )
    if config is not None and loaded_config != config:
        raise ConfigMismatch(
            f"{path}: stored network config {loaded_config} != expected {config}"
        )
    (n_arrays,) = struct.unpack_from("<I", data, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        if code not in _CODE_DTYPE:
            raise BadParamsFile(f"{path}: unknown dtype code {code}")
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        dtype = _CODE_DTYPE[code]
        nbytes = int(np.prod(shape)) * dtype.itemsize if ndim else dtype.itemsize
        if off + nbytes > len(data):
            raise BadParamsFile(f"{path}: truncated array data for {name!r}")
        params[name] = np.frombuffer(
            data[off:off + nbytes], dtype=dtype
        ).reshape(shape).copy()
        off += nbytes
    return loaded_config, params
