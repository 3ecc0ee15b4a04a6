"""Sequential model container, the CNN1/CNN2 stacks, and checkpoints."""

from __future__ import annotations

import io
import json

import numpy as np

from .. import artifacts
from .layers import LAYER_TYPES, BatchNorm2d, Conv2d, Flatten, Layer, LayerShapeError, LeakyReLU, Linear, MaxPool2d

CHECKPOINT_FORMAT = "convsim-checkpoint/1"


class Model:
    def __init__(self, layers: list[Layer], input_shape=(3, 32, 32), name="model"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.name = name
        self.shapes = self._shape_chain()

    def _shape_chain(self):
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                if isinstance(layer, Linear) and shapes[-1] != (layer.in_features,):
                    raise ValueError(f"expects ({layer.in_features},), got {shapes[-1]}")
                if isinstance(layer, Conv2d) and shapes[-1][0] != layer.in_channels:
                    raise ValueError(f"expects {layer.in_channels} channels, got {shapes[-1][0]}")
                if isinstance(layer, BatchNorm2d) and shapes[-1][0] != layer.channels:
                    raise ValueError(f"expects {layer.channels} channels, got {shapes[-1][0]}")
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ValueError as exc:
                raise LayerShapeError(i, layer, str(exc)) from None
            if min(shapes[-1]) < 1:
                raise LayerShapeError(i, layer, f"empty output shape {shapes[-1]}")
        return shapes

    @property
    def conv_layer_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv2d)]

    @property
    def flatten_width(self) -> int | None:
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Flatten):
                return self.shapes[i + 1][0]
        return None

    def parameter_count(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params.values())

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i}.{name}", layer, name, p

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise LayerShapeError(0, self.layers[0], f"expected input (B, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def gradients(self) -> dict[str, np.ndarray]:
        return {key: layer.grads[name] for key, layer, name, _ in self.named_parameters()}

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                out[f"{i}/param/{name}"] = p
            for name, b in layer.buffers.items():
                out[f"{i}/buffer/{name}"] = b
        return out

    def load_state(self, state: dict):
        for key, value in state.items():
            i, group, name = key.split("/")
            layer = self.layers[int(i)]
            target = layer.params if group == "param" else layer.buffers
            if target[name].shape != value.shape:
                raise LayerShapeError(int(i), layer, f"{name} shape {value.shape} != {target[name].shape}")
            target[name] = np.array(value, dtype=np.float64)

    def spec(self) -> list[dict]:
        return [{"kind": layer.kind, **layer.config()} for layer in self.layers]


def _stack(width: int, rng, in_channels=3, blocks=4, padding=2) -> list[Layer]:
    layers: list[Layer] = []
    c = in_channels
    for _ in range(blocks):
        layers += [Conv2d(c, width, 3, padding, rng=rng), BatchNorm2d(width), LeakyReLU(0.2), MaxPool2d(2, 2)]
        c = width
    return layers


def cnn(width: int, seed: int = 0, name: str = "cnn") -> Model:
    """Four conv(3x3, pad 2)/BN/LeakyReLU(0.2)/maxpool(2) blocks and a linear classifier.

    Spatial extents run 32 -> 34 -> 17 -> 19 -> 9 -> 11 -> 5 -> 7 -> 3, so the
    classifier sees ``width * 3 * 3`` features.
    """
    rng = np.random.default_rng(seed)
    layers = _stack(width, rng)
    layers += [Flatten(), Linear(width * 9, 10, rng=rng)]
    return Model(layers, name=name)


def cnn1(seed: int = 0) -> Model:
    return cnn(64, seed, "cnn1")


def cnn2(seed: int = 0) -> Model:
    return cnn(128, seed, "cnn2")


def tiny(seed: int = 0, channels: int = 2, size: int = 6, classes: int = 10, batchnorm: bool = False) -> Model:
    """One conv layer and a linear head, small enough for finite-difference checks."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = [Conv2d(3, channels, 3, 1, rng=rng)]
    if batchnorm:
        layers.append(BatchNorm2d(channels))
    layers += [LeakyReLU(0.2), MaxPool2d(2, 2), Flatten(), Linear(channels * (size // 2) ** 2, classes, rng=rng)]
    return Model(layers, input_shape=(3, size, size), name="tiny")


def tiny32(seed: int = 0) -> Model:
    """Single conv/BN block on full-size inputs, for quick end-to-end runs."""
    return tiny(seed, channels=4, size=32, batchnorm=True)


ARCHITECTURES = {"cnn1": cnn1, "cnn2": cnn2, "tiny32": tiny32}


def build_model(arch: str, seed: int = 0) -> Model:
    try:
        return ARCHITECTURES[arch](seed=seed)
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(b)
    loss = -float(log_p[rows, labels].mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return loss, grad / b


def _model_from_spec(spec, input_shape, name) -> Model:
    layers = []
    for entry in spec:
        entry = dict(entry)
        cls = LAYER_TYPES[entry.pop("kind")]
        layers.append(cls(**entry))
    return Model(layers, input_shape=input_shape, name=name)


def save_checkpoint(path, model: Model, meta: dict | None = None, optimizer_state: dict | None = None):
    """Write weights, batch-norm statistics and metadata to a single ``.npz`` file."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "name": model.name,
        "input_shape": list(model.input_shape),
        "layers": model.spec(),
        "meta": meta or {},
    }
    arrays = {f"model/{k}": v for k, v in model.state().items()}
    for k, v in (optimizer_state or {}).items():
        arrays[f"optim/{k}"] = np.asarray(v)
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    artifacts.atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path):
    """Return ``(model, meta, optimizer_state)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
        model = _model_from_spec(header["layers"], tuple(header["input_shape"]), header["name"])
        model.load_state({k[len("model/"):]: data[k] for k in data.files if k.startswith("model/")})
        optim_state = {k[len("optim/"):]: data[k] for k in data.files if k.startswith("optim/")}
    return model, header["meta"], optim_state
