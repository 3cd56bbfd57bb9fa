"""Model configs, parameter initialization, forward pass, and checkpoints.

A model is a flat stack of layers over (channels, length) windows:
conv1d / dense / relu / flatten / global_avg_pool.  Any layer may be
marked as a tap, which exposes its activation to the feature-alignment
loss.  Weight init is uniform with He fan-in scaling from a seeded
generator, so a config plus a seed fully determines the parameters.

Checkpoints are a small binary format: magic "DBKD", u16 version, a
length-prefixed UTF-8 JSON description (config + init seed), each
parameter as rank, dims (u32 LE each) and raw float64 LE data, and a
trailing CRC32 over everything before it.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from .autograd import Tensor, add, conv1d, matmul, relu, reshape, tmean
from .errors import ConfigError, FormatError, ShapeError

LAYER_KINDS = ("conv1d", "dense", "relu", "flatten", "global_avg_pool")

CHECKPOINT_MAGIC = b"DBKD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a model stack.

    Only the fields relevant to ``kind`` are read: conv1d uses
    out_channels/kernel/stride, dense uses units.  ``tap`` marks the
    layer's output as a feature-alignment point; ``name`` defaults to
    kind plus position.
    """
    kind: str
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    units: int = 0
    tap: bool = False
    name: str = ""


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int
    in_length: int
    num_classes: int
    layers: Tuple[LayerSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))


@dataclass
class ForwardResult:
    """Logits plus the ordered tap activations recorded on the way."""
    logits: Tensor
    taps: List[Tuple[str, Tensor]]


def layer_name(spec: LayerSpec, index: int) -> str:
    return spec.name if spec.name else f"{spec.kind}{index}"


def validate_config(config: ModelConfig) -> List[Tuple[str, tuple]]:
    """Check shape composition; returns per-layer output descriptions.

    Each entry is ("spatial", (C, L)) or ("flat", (N,)).  Raises
    ConfigError on an invalid stack.
    """
    if config.in_channels < 1 or config.in_length < 1:
        raise ConfigError("input shape must be positive, got %dx%d"
                          % (config.in_channels, config.in_length))
    if config.num_classes < 2:
        raise ConfigError("need at least 2 classes, got %d" % config.num_classes)
    if not config.layers:
        raise ConfigError("model has no layers")

    state = ("spatial", (config.in_channels, config.in_length))
    shapes = []
    for i, spec in enumerate(config.layers):
        if spec.kind not in LAYER_KINDS:
            raise ConfigError("layer %d: unknown kind %r" % (i, spec.kind))
        mode, dims = state
        if spec.kind == "conv1d":
            if mode != "spatial":
                raise ConfigError("layer %d: conv1d needs (channels, length) input" % i)
            C, L = dims
            if spec.out_channels < 1 or spec.kernel < 1 or spec.stride < 1:
                raise ConfigError("layer %d: bad conv parameters" % i)
            if spec.kernel > L:
                raise ConfigError("layer %d: kernel %d exceeds length %d"
                                  % (i, spec.kernel, L))
            Lp = (L - spec.kernel) // spec.stride + 1
            state = ("spatial", (spec.out_channels, Lp))
        elif spec.kind == "dense":
            if mode != "flat":
                raise ConfigError("layer %d: dense needs a flat input; add flatten "
                                  "or global_avg_pool first" % i)
            if spec.units < 1:
                raise ConfigError("layer %d: dense units must be positive" % i)
            state = ("flat", (spec.units,))
        elif spec.kind == "relu":
            pass
        elif spec.kind == "flatten":
            if mode != "spatial":
                raise ConfigError("layer %d: flatten needs (channels, length) input" % i)
            C, L = dims
            state = ("flat", (C * L,))
        elif spec.kind == "global_avg_pool":
            if mode != "spatial":
                raise ConfigError("layer %d: global_avg_pool needs (channels, length) input" % i)
            state = ("flat", (dims[0],))
        shapes.append(state)

    mode, dims = state
    if mode != "flat" or dims != (config.num_classes,):
        raise ConfigError("final layer must emit %d logits, stack ends with %r %r"
                          % (config.num_classes, mode, dims))
    return shapes


class Model:
    """A parameterized layer stack.  Construct through build_model."""

    def __init__(self, config: ModelConfig, seed: int,
                 params: List[Tensor], layer_param_slots: List[Optional[Tuple[int, int]]]):
        self.config = config
        self.seed = seed
        self.params = params
        self._slots = layer_param_slots

    @property
    def tap_names(self) -> List[str]:
        return [layer_name(s, i) for i, s in enumerate(self.config.layers) if s.tap]

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def copy(self) -> "Model":
        """An independent model with identical parameter values."""
        twin = build_model(self.config, self.seed)
        for dst, src in zip(twin.params, self.params):
            dst.data = src.data.copy()
        return twin

    def params_equal(self, other: "Model") -> bool:
        return all(np.array_equal(a.data, b.data)
                   for a, b in zip(self.params, other.params))


def build_model(config: ModelConfig, seed: int) -> Model:
    """Initialize a model from its config with seeded He fan-in init.

    Weights are uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)], biases
    start at zero.  The same config and seed always give bit-identical
    parameters.
    """
    validate_config(config)
    rng = np.random.default_rng(seed)
    params: List[Tensor] = []
    slots: List[Optional[Tuple[int, int]]] = []

    mode, dims = "spatial", (config.in_channels, config.in_length)
    for spec in config.layers:
        if spec.kind == "conv1d":
            C, L = dims
            fan_in = C * spec.kernel
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(spec.out_channels, C, spec.kernel))
            b = np.zeros(spec.out_channels)
            slots.append((len(params), len(params) + 1))
            params.append(Tensor(w, requires_grad=True))
            params.append(Tensor(b, requires_grad=True))
            mode, dims = "spatial", (spec.out_channels, (L - spec.kernel) // spec.stride + 1)
        elif spec.kind == "dense":
            (n,) = dims
            bound = np.sqrt(6.0 / n)
            w = rng.uniform(-bound, bound, size=(n, spec.units))
            b = np.zeros(spec.units)
            slots.append((len(params), len(params) + 1))
            params.append(Tensor(w, requires_grad=True))
            params.append(Tensor(b, requires_grad=True))
            mode, dims = "flat", (spec.units,)
        else:
            slots.append(None)
            if spec.kind == "flatten":
                C, L = dims
                mode, dims = "flat", (C * L,)
            elif spec.kind == "global_avg_pool":
                mode, dims = "flat", (dims[0],)
    return Model(config, seed, params, slots)


def clone_architecture(model: Model, seed: int) -> Model:
    """A freshly initialized model with the same architecture and a new seed.

    Shares nothing with the source; identical to build_model(config, seed).
    """
    return build_model(model.config, seed)


def forward_with_taps(model: Model, x: Union[np.ndarray, Tensor]) -> ForwardResult:
    """Run the stack on a batch (B, C, L); returns logits and tap activations."""
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim == 2:
        t = reshape(t, (1,) + t.shape)
    if t.ndim != 3:
        raise ShapeError("input must be (batch, channels, length), got %r" % (t.shape,))
    B, C, L = t.shape
    if (C, L) != (model.config.in_channels, model.config.in_length):
        raise ShapeError("input window %r does not match model input %r"
                         % ((C, L), (model.config.in_channels, model.config.in_length)))

    taps: List[Tuple[str, Tensor]] = []
    h = t
    for i, spec in enumerate(model.config.layers):
        if spec.kind == "conv1d":
            wi, bi = model._slots[i]
            w, b = model.params[wi], model.params[bi]
            h = add(conv1d(h, w, spec.stride), reshape(b, (spec.out_channels, 1)))
        elif spec.kind == "dense":
            wi, bi = model._slots[i]
            w, b = model.params[wi], model.params[bi]
            h = add(matmul(h, w), b)
        elif spec.kind == "relu":
            h = relu(h)
        elif spec.kind == "flatten":
            h = reshape(h, (h.shape[0], -1))
        elif spec.kind == "global_avg_pool":
            h = tmean(h, axis=2)
        if spec.tap:
            taps.append((layer_name(spec, i), h))
    return ForwardResult(logits=h, taps=taps)


def predict(model: Model, X: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Argmax class ids for a stack of windows, evaluated in batches."""
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(0, X.shape[0], batch_size):
        logits = forward_with_taps(model, X[i:i + batch_size]).logits.data
        out[i:i + batch_size] = np.argmax(logits, axis=1)
    return out


# -- reference configurations -------------------------------------------------

def small_cnn_config(in_channels: int, in_length: int, num_classes: int = 2) -> ModelConfig:
    """Two conv blocks and a small dense head; the default window classifier."""
    return ModelConfig(in_channels, in_length, num_classes, (
        LayerSpec("conv1d", out_channels=8, kernel=5, stride=2),
        LayerSpec("relu", tap=True, name="block1"),
        LayerSpec("conv1d", out_channels=16, kernel=3, stride=2),
        LayerSpec("relu", tap=True, name="block2"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=32),
        LayerSpec("relu"),
        LayerSpec("dense", units=num_classes),
    ))


def correlation_mlp_config(in_channels: int, in_length: int, num_classes: int = 2) -> ModelConfig:
    """Plain MLP on the flattened window; suited to square correlation inputs."""
    return ModelConfig(in_channels, in_length, num_classes, (
        LayerSpec("flatten"),
        LayerSpec("dense", units=64),
        LayerSpec("relu", tap=True, name="hidden1"),
        LayerSpec("dense", units=32),
        LayerSpec("relu", tap=True, name="hidden2"),
        LayerSpec("dense", units=num_classes),
    ))


def compact_cnn_config(in_channels: int, in_length: int, num_classes: int = 2) -> ModelConfig:
    """A long-stride conv followed by a pointwise mix and global pooling."""
    return ModelConfig(in_channels, in_length, num_classes, (
        LayerSpec("conv1d", out_channels=4, kernel=7, stride=4),
        LayerSpec("relu", tap=True, name="block1"),
        LayerSpec("conv1d", out_channels=8, kernel=1, stride=1),
        LayerSpec("relu", tap=True, name="block2"),
        LayerSpec("global_avg_pool"),
        LayerSpec("dense", units=num_classes),
    ))


REFERENCE_CONFIGS = {
    "small_cnn": small_cnn_config,
    "correlation_mlp": correlation_mlp_config,
    "compact_cnn": compact_cnn_config,
}


# -- config (de)serialization -------------------------------------------------

def config_to_dict(config: ModelConfig) -> dict:
    return {
        "in_channels": config.in_channels,
        "in_length": config.in_length,
        "num_classes": config.num_classes,
        "layers": [
            {"kind": s.kind, "out_channels": s.out_channels, "kernel": s.kernel,
             "stride": s.stride, "units": s.units, "tap": s.tap, "name": s.name}
            for s in config.layers
        ],
    }


def config_from_dict(d: dict) -> ModelConfig:
    try:
        layers = tuple(LayerSpec(**ld) for ld in d["layers"])
        return ModelConfig(int(d["in_channels"]), int(d["in_length"]),
                           int(d["num_classes"]), layers)
    except (KeyError, TypeError) as e:
        raise ConfigError("bad model config: %s" % e) from None


# -- checkpoint io ------------------------------------------------------------

def save_checkpoint(model: Model, path: str) -> None:
    desc = json.dumps({"config": config_to_dict(model.config), "seed": model.seed},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<H", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(desc))
    blob += desc
    for p in model.params:
        blob += struct.pack("<I", p.data.ndim)
        blob += struct.pack("<%dI" % p.data.ndim, *p.data.shape)
        blob += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as f:
        f.write(bytes(blob))


def _take(buf: bytes, offset: int, n: int, what: str) -> Tuple[bytes, int]:
    if offset + n > len(buf):
        raise FormatError("checkpoint truncated in %s" % what)
    return buf[offset:offset + n], offset + n


def load_checkpoint(path: str) -> Model:
    """Rebuild a model from a checkpoint; bit-exact with what was saved."""
    with open(path, "rb") as f:
        buf = f.read()
    raw, off = _take(buf, 0, 4, "magic")
    if raw != CHECKPOINT_MAGIC:
        raise FormatError("bad magic %r; not a model checkpoint" % raw)
    raw, off = _take(buf, off, 2, "version")
    (version,) = struct.unpack("<H", raw)
    if version > CHECKPOINT_VERSION:
        raise FormatError("checkpoint version %d is newer than supported %d"
                          % (version, CHECKPOINT_VERSION))
    raw, off = _take(buf, off, 4, "config length")
    (clen,) = struct.unpack("<I", raw)
    raw, off = _take(buf, off, clen, "config text")
    try:
        desc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError("unreadable checkpoint config: %s" % e) from None
    config = config_from_dict(desc["config"])
    model = build_model(config, int(desc["seed"]))

    for idx, p in enumerate(model.params):
        raw, off = _take(buf, off, 4, "parameter %d rank" % idx)
        (rank,) = struct.unpack("<I", raw)
        raw, off = _take(buf, off, 4 * rank, "parameter %d dims" % idx)
        dims = struct.unpack("<%dI" % rank, raw)
        if dims != p.data.shape:
            raise FormatError("parameter %d has shape %r, config expects %r"
                              % (idx, dims, p.data.shape))
        count = int(np.prod(dims)) if rank else 1
        raw, off = _take(buf, off, 8 * count, "parameter %d data" % idx)
        p.data = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    raw, off = _take(buf, off, 4, "checksum")
    (stored,) = struct.unpack("<I", raw)
    if off != len(buf):
        raise FormatError("checkpoint has %d trailing bytes" % (len(buf) - off))
    if zlib.crc32(buf[:off - 4]) != stored:
        raise FormatError("checkpoint checksum mismatch; file is corrupted")
    return model
