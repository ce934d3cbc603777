"""A minimal CNN inference runtime with reverse-mode gradients.

The network is a plain chain of layers. One conv layer is designated as the
target: its activations (by default taken after the ReLU that immediately
follows it, when there is one) feed every CAM method, and
:func:`grad_activations` differentiates a class score with respect to them.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ContractError

LAYER_KINDS = ("conv2d", "relu", "maxpool2x2", "global_avg_pool", "fully_connected")
PARAMETRIC = ("conv2d", "fully_connected")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    in_ch: Optional[int] = None
    out_ch: Optional[int] = None
    kernel: Optional[int] = None
    stride: int = 1
    padding: int = 0
    in_dim: Optional[int] = None
    out_dim: Optional[int] = None

    def to_dict(self):
        d = {"kind": self.kind, "name": self.name}
        if self.kind == "conv2d":
            d.update(in_ch=self.in_ch, out_ch=self.out_ch, kernel=self.kernel,
                     stride=self.stride, padding=self.padding)
        elif self.kind == "fully_connected":
            d.update(in_dim=self.in_dim, out_dim=self.out_dim)
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind not in LAYER_KINDS:
            raise ContractError(f"unknown layer kind {kind!r}")
        name = d["name"]
        if not isinstance(name, str) or not name:
            raise ContractError("layer name must be a non-empty string")
        if kind == "conv2d":
            return cls(kind, name, in_ch=_pos_int(d["in_ch"]), out_ch=_pos_int(d["out_ch"]),
                       kernel=_pos_int(d["kernel"]), stride=_pos_int(d.get("stride", 1)),
                       padding=_nonneg_int(d.get("padding", 0)))
        if kind == "fully_connected":
            return cls(kind, name, in_dim=_pos_int(d["in_dim"]), out_dim=_pos_int(d["out_dim"]))
        return cls(kind, name)

    def weight_shapes(self):
        if self.kind == "conv2d":
            return [(self.out_ch, self.in_ch, self.kernel, self.kernel), (self.out_ch,)]
        if self.kind == "fully_connected":
            return [(self.out_dim, self.in_dim), (self.out_dim,)]
        return []


def _pos_int(v):
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ContractError(f"expected a positive integer, got {v!r}")
    return v


def _nonneg_int(v):
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ContractError(f"expected a non-negative integer, got {v!r}")
    return v


def _infer_shapes(layers, input_shape):
    """Return the output shape of each layer for one (unbatched) input."""
    shapes = []
    shape = tuple(input_shape)
    for layer in layers:
        k = layer.kind
        if k == "conv2d":
            if len(shape) != 3 or shape[0] != layer.in_ch:
                raise ContractError(f"layer {layer.name}: expects {layer.in_ch} input channels, got shape {shape}")
            oh = (shape[1] + 2 * layer.padding - layer.kernel) // layer.stride + 1
            ow = (shape[2] + 2 * layer.padding - layer.kernel) // layer.stride + 1
            if oh < 1 or ow < 1:
                raise ContractError(f"layer {layer.name}: input {shape} too small for kernel")
            shape = (layer.out_ch, oh, ow)
        elif k == "relu":
            pass
        elif k == "maxpool2x2":
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise ContractError(f"layer {layer.name}: cannot pool shape {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif k == "global_avg_pool":
            if len(shape) != 3:
                raise ContractError(f"layer {layer.name}: GAP needs a [C,H,W] input, got {shape}")
            shape = (shape[0],)
        elif k == "fully_connected":
            if int(np.prod(shape)) != layer.in_dim:
                raise ContractError(f"layer {layer.name}: in_dim {layer.in_dim} != flattened input {shape}")
            shape = (layer.out_dim,)
        shapes.append(shape)
    return shapes


@dataclass
class Model:
    """An immutable chain of layers plus weights.

    ``weights`` maps each parametric layer name to ``(W, b)``.
    ``capture_after_relu`` makes the target activations the output of the
    ReLU directly following the target conv rather than the raw conv output.
    """

    layers: list
    weights: dict
    target_layer: str
    num_classes: int
    input_shape: tuple
    capture_after_relu: bool = True
    shapes: list = field(init=False, repr=False)
    capture_index: int = field(init=False, repr=False)

    def __post_init__(self):
        self.layers = list(self.layers)
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != 3:
            raise ContractError(f"input_shape must be [C,H,W], got {self.input_shape}")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ContractError("layer names must be unique")
        if not self.layers:
            raise ContractError("model has no layers")
        self.shapes = _infer_shapes(self.layers, self.input_shape)
        if self.shapes[-1] != (self.num_classes,):
            raise ContractError(f"final layer outputs {self.shapes[-1]}, expected ({self.num_classes},)")
        if self.target_layer not in names:
            raise ContractError(f"target layer {self.target_layer!r} not found")
        ti = names.index(self.target_layer)
        if self.layers[ti].kind != "conv2d":
            raise ContractError(f"target layer {self.target_layer!r} is not a conv2d layer")
        if self.capture_after_relu and ti + 1 < len(self.layers) and self.layers[ti + 1].kind == "relu":
            ti += 1
        self.capture_index = ti
        weights = {}
        for layer in self.layers:
            expected = layer.weight_shapes()
            if not expected:
                continue
            if layer.name not in self.weights:
                raise ContractError(f"missing weights for layer {layer.name!r}")
            wb = [np.ascontiguousarray(a, dtype=np.float64) for a in self.weights[layer.name]]
            if [a.shape for a in wb] != expected:
                raise ContractError(f"layer {layer.name!r}: weight shapes {[a.shape for a in wb]} != {expected}")
            if not all(np.all(np.isfinite(a)) for a in wb):
                raise ContractError(f"layer {layer.name!r}: non-finite weights")
            for a in wb:
                a.setflags(write=False)
            weights[layer.name] = tuple(wb)
        self.weights = weights

    @property
    def activation_shape(self):
        return self.shapes[self.capture_index]

    @property
    def head(self):
        """Layers applied after the captured activations."""
        return self.layers[self.capture_index + 1 :]

    def has_gap_head(self):
        kinds = [layer.kind for layer in self.head]
        return kinds == ["global_avg_pool", "fully_connected"]


@dataclass
class ForwardTrace:
    scores: np.ndarray  # [num_classes], pre-softmax
    probs: np.ndarray  # [num_classes]
    activations: np.ndarray  # [N_l, H_l, W_l]


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _apply(layer, weights, x, cache=None):
    k = layer.kind
    if k == "conv2d":
        w, b = weights[layer.name]
        if cache is not None:
            cache.append(x.shape)
        return _kernels.conv2d_forward(x, w, b, layer.stride, layer.padding)
    if k == "relu":
        if cache is not None:
            cache.append(x > 0)
        return np.maximum(x, 0.0)
    if k == "maxpool2x2":
        out, arg = _kernels.maxpool2x2_forward(x)
        if cache is not None:
            cache.append((arg, x.shape))
        return out
    if k == "global_avg_pool":
        if cache is not None:
            cache.append(x.shape)
        return x.mean(axis=(2, 3))
    # fully_connected: flatten everything after the batch axis
    w, b = weights[layer.name]
    if cache is not None:
        cache.append(x.shape)
    return x.reshape(x.shape[0], -1) @ w.T + b


def _backward(layer, weights, g, saved):
    k = layer.kind
    if k == "conv2d":
        w, _ = weights[layer.name]
        shape = saved
        return _kernels.conv2d_backward_input(g, w, shape[2], shape[3], layer.stride, layer.padding)
    if k == "relu":
        return g * saved
    if k == "maxpool2x2":
        arg, shape = saved
        return _kernels.maxpool2x2_backward(g, arg, shape[2], shape[3])
    if k == "global_avg_pool":
        shape = saved
        p = shape[2] * shape[3]
        return np.broadcast_to((g / p)[:, :, None, None], shape).copy()
    w, _ = weights[layer.name]
    return (g @ w).reshape(saved)


def _check_batch(model, xs):
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    if xs.ndim == 3:
        xs = xs[None]
    if xs.ndim != 4 or tuple(xs.shape[1:]) != model.input_shape:
        raise ContractError(f"input shape {xs.shape} does not match model input {model.input_shape}")
    if not np.all(np.isfinite(xs)):
        raise ContractError("input contains non-finite values")
    return xs


def activations_batch(model, xs):
    """Target-layer activations for a batch ``[B,C,H,W]`` -> ``[B,N_l,H_l,W_l]``."""
    h = _check_batch(model, xs)
    for layer in model.layers[: model.capture_index + 1]:
        h = _apply(layer, model.weights, h)
    return h


def head_scores(model, acts):
    """Run only the layers above the target: activations -> pre-softmax scores."""
    h = np.ascontiguousarray(acts, dtype=np.float64)
    if h.ndim == 3:
        h = h[None]
    for layer in model.head:
        h = _apply(layer, model.weights, h)
    return h


def forward_batch(model, xs):
    """Return ``(scores [B,K], probs [B,K], activations [B,N_l,H_l,W_l])``."""
    acts = activations_batch(model, xs)
    scores = head_scores(model, acts)
    return scores, softmax(scores), acts


def forward(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ContractError(f"forward expects a single [C,H,W] input, got shape {x.shape}")
    scores, probs, acts = forward_batch(model, x)
    return ForwardTrace(scores=scores[0], probs=probs[0], activations=acts[0])


def _check_class(model, c):
    if isinstance(c, bool) or not isinstance(c, (int, np.integer)) or not 0 <= c < model.num_classes:
        raise ContractError(f"class index {c!r} out of range [0, {model.num_classes})")
    return int(c)


def grad_head(model, acts, c):
    """d score_c / d acts for a batch of activations. Returns ``(scores, grads)``."""
    c = _check_class(model, c)
    h = np.ascontiguousarray(acts, dtype=np.float64)
    if h.ndim == 3:
        h = h[None]
    saved = []
    for layer in model.head:
        cache = []
        h = _apply(layer, model.weights, h, cache)
        saved.append(cache[0])
    scores = h
    g = np.zeros_like(scores)
    g[:, c] = 1.0
    for layer, s in zip(reversed(model.head), reversed(saved)):
        g = _backward(layer, model.weights, g, s)
    return scores, g


def grad_activations(model, x, c):
    """Gradient of the pre-softmax class score w.r.t. the target activations."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ContractError(f"expected a single [C,H,W] input, got shape {x.shape}")
    _check_class(model, c)
    acts = activations_batch(model, x)
    _, g = grad_head(model, acts, c)
    return g[0]


def activations_and_grads(model, xs, c):
    """Batched helper: ``(acts, grads, scores)`` for inputs ``[B,C,H,W]``."""
    _check_class(model, c)
    acts = activations_batch(model, xs)
    scores, g = grad_head(model, acts, c)
    return acts, g, scores


def score_on(model, x, c):
    """Softmax probability of class ``c`` for a single input."""
    c = _check_class(model, c)
    return float(forward(model, x).probs[c])


def scores_on_batch(model, xs, c, use_logits=False):
    """Class-``c`` confidence for every input of a batch."""
    c = _check_class(model, c)
    scores, probs, _ = forward_batch(model, xs)
    return (scores if use_logits else probs)[:, c].copy()


# ---------------------------------------------------------------------------
# reference architectures


def _f32_uniform(rng, shape):
    # weights are kept exactly representable in float32 so MCN1 roundtrips are lossless
    return rng.uniform(-0.5, 0.5, size=shape).astype(np.float32).astype(np.float64)


def init_weights(layers, seed):
    rng = np.random.default_rng(seed)
    weights = {}
    for layer in layers:
        shapes = layer.weight_shapes()
        if shapes:
            weights[layer.name] = tuple(_f32_uniform(rng, s) for s in shapes)
    return weights


def tinygap_layers(num_classes, in_ch=3, width=8):
    return [
        LayerSpec("conv2d", "conv1", in_ch=in_ch, out_ch=width, kernel=3, padding=1),
        LayerSpec("relu", "relu1"),
        LayerSpec("maxpool2x2", "pool1"),
        LayerSpec("conv2d", "conv2", in_ch=width, out_ch=2 * width, kernel=3, padding=1),
        LayerSpec("relu", "relu2"),
        LayerSpec("global_avg_pool", "gap"),
        LayerSpec("fully_connected", "fc", in_dim=2 * width, out_dim=num_classes),
    ]


def tinyflat_layers(num_classes, input_hw=(32, 32), in_ch=3, width=8):
    """TinyGAP's trunk with a max-pool + flattening fc head (no GAP)."""
    h, w = input_hw[0] // 4, input_hw[1] // 4
    return [
        LayerSpec("conv2d", "conv1", in_ch=in_ch, out_ch=width, kernel=3, padding=1),
        LayerSpec("relu", "relu1"),
        LayerSpec("maxpool2x2", "pool1"),
        LayerSpec("conv2d", "conv2", in_ch=width, out_ch=2 * width, kernel=3, padding=1),
        LayerSpec("relu", "relu2"),
        LayerSpec("maxpool2x2", "pool2"),
        LayerSpec("fully_connected", "fc", in_dim=2 * width * h * w, out_dim=num_classes),
    ]


def tinydeep_layers(num_classes, in_ch=3, width=8):
    """A conv above the target layer, exercising conv backprop in the head."""
    return [
        LayerSpec("conv2d", "conv1", in_ch=in_ch, out_ch=width, kernel=3, padding=1),
        LayerSpec("relu", "relu1"),
        LayerSpec("conv2d", "conv2", in_ch=width, out_ch=width, kernel=3, stride=2, padding=1),
        LayerSpec("relu", "relu2"),
        LayerSpec("conv2d", "conv3", in_ch=width, out_ch=2 * width, kernel=3, padding=1),
        LayerSpec("relu", "relu3"),
        LayerSpec("maxpool2x2", "pool"),
        LayerSpec("global_avg_pool", "gap"),
        LayerSpec("fully_connected", "fc", in_dim=2 * width, out_dim=num_classes),
    ]


ARCHITECTURES = {
    "tinygap": ("conv2", lambda k, hw: tinygap_layers(k)),
    "tinyflat": ("conv2", lambda k, hw: tinyflat_layers(k, hw)),
    "tinydeep": ("conv2", lambda k, hw: tinydeep_layers(k)),
}


def build_model(arch="tinygap", num_classes=10, seed=0, input_hw=(32, 32), capture_after_relu=True):
    """Build a seeded reference model; weights uniform in [-0.5, 0.5]."""
    if arch not in ARCHITECTURES:
        raise ContractError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}")
    target, make = ARCHITECTURES[arch]
    layers = make(num_classes, tuple(input_hw))
    return Model(
        layers=layers,
        weights=init_weights(layers, seed),
        target_layer=target,
        num_classes=num_classes,
        input_shape=(3, *input_hw),
        capture_after_relu=capture_after_relu,
    )
