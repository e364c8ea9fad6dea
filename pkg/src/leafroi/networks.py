"""Declarative network specs and the three architectures built from them.

A :class:`NetworkSpec` is an ordered list of :class:`LayerSpec` entries; each
entry names the earlier layers (or ``"input"``) it reads from.  A
:class:`Network` pairs a spec with its parameter tensors and runs the layer
list in order.  Keeping the topology as data means it can be shape-checked
before allocation and serialized inside checkpoints.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

INPUT = "input"
DEFAULT_WIDTHS = (16, 32, 64, 64)
DEFAULT_ROI_SKIPS = (4, 3, 2)
N_ROI_CLASSES = 3



@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple[str, ...]
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    init: str = "he"


@dataclass
class NetworkSpec:
    kind: str  # "classifier", "roi" or "fused"
    in_channels: int
    n_classes: int
    input_size: int
    layers: list[LayerSpec] = field(default_factory=list)
    output: str = ""

    def __post_init__(self):
        seen = {INPUT}
        for layer in self.layers:
            for ref in layer.inputs:
                if ref not in seen:
                    raise ConfigurationError(
                        f"layer {layer.name!r} reads {ref!r}, which is not an earlier layer")
            if layer.name in seen:
                raise ConfigurationError(f"duplicate layer name {layer.name!r}")
            seen.add(layer.name)
        if self.output and self.output not in seen:
            raise ConfigurationError(f"output layer {self.output!r} is not defined")

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for ly in self.layers:
            if ly.kind == "conv":
                shapes[f"{ly.name}.weight"] = (ly.out_ch, ly.in_ch, ly.kernel, ly.kernel)
                shapes[f"{ly.name}.bias"] = (ly.out_ch,)
            elif ly.kind == "fc":
                shapes[f"{ly.name}.weight"] = (ly.in_ch, ly.out_ch)
                shapes[f"{ly.name}.bias"] = (ly.out_ch,)
            elif ly.kind == "tconv":
                shapes[f"{ly.name}.weight"] = (ly.in_ch, ly.out_ch, ly.kernel, ly.kernel)
        return shapes

    def infer_shapes(self, input_shape) -> dict[str, tuple[int, ...]]:
        """Propagate ``input_shape`` through every layer's shape rule."""
        shapes = {INPUT: tuple(input_shape)}
        if len(input_shape) != 4 or input_shape[1] != self.in_channels:
            raise DimensionError(
                f"{self.kind} network expects N x {self.in_channels} x H x W, got {tuple(input_shape)}")
        for ly in self.layers:
            src = [shapes[r] for r in ly.inputs]
            shapes[ly.name] = _layer_shape(ly, src)
        return shapes

    def to_text(self) -> str:
        doc = asdict(self)
        doc["layers"] = [asdict(ly) for ly in self.layers]
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        doc = json.loads(text)
        doc["layers"] = [LayerSpec(**{**ly, "inputs": tuple(ly["inputs"])}) for ly in doc["layers"]]
        return cls(**doc)


def _layer_shape(ly: LayerSpec, src: list[tuple[int, ...]]) -> tuple[int, ...]:
    k = ly.kind
    x = src[0]
    if k in ("conv", "tconv", "maxpool", "crop", "pixel_softmax") and len(x) != 4:
        raise DimensionError(f"layer {ly.name!r} expects a 4-d map, got {x}")
    if k == "conv":
        if x[1] != ly.in_ch:
            raise DimensionError(f"layer {ly.name!r} expects {ly.in_ch} channels, got {x[1]}")
        return (x[0], ly.out_ch,
                L.conv_output_extent(x[2], ly.kernel, ly.stride, ly.pad),
                L.conv_output_extent(x[3], ly.kernel, ly.stride, ly.pad))
    if k == "tconv":
        if x[1] != ly.in_ch:
            raise DimensionError(f"layer {ly.name!r} expects {ly.in_ch} channels, got {x[1]}")
        return (x[0], ly.out_ch, (x[2] - 1) * ly.stride + ly.kernel,
                (x[3] - 1) * ly.stride + ly.kernel)
    if k == "maxpool":
        if x[2] % 2 or x[3] % 2:
            raise ConfigurationError(f"layer {ly.name!r} pools odd extent {x[2]}x{x[3]}")
        return (x[0], x[1], x[2] // 2, x[3] // 2)
    if k in ("relu", "pixel_softmax", "softmax"):
        return x
    if k == "flatten":
        return (x[0], int(np.prod(x[1:])))
    if k == "fc":
        if len(x) != 2 or x[1] != ly.in_ch:
            raise ConfigurationError(
                f"layer {ly.name!r} expects {ly.in_ch} features, got shape {x}")
        return (x[0], ly.out_ch)
    if k == "crop":
        ref = src[1]
        if ref[2] > x[2] or ref[3] > x[3]:
            raise DimensionError(f"layer {ly.name!r}: reference {ref} larger than input {x}")
        return (x[0], x[1], ref[2], ref[3])
    if k == "add":
        if src[0] != src[1]:
            raise DimensionError(f"layer {ly.name!r} adds {src[0]} and {src[1]}")
        return x
    if k == "concat":
        a, b = src
        if a[0] != b[0] or a[2:] != b[2:]:
            raise DimensionError(f"layer {ly.name!r} concatenates {a} and {b}")
        return (a[0], a[1] + b[1], a[2], a[3])
    raise ConfigurationError(f"unknown layer kind {k!r}")


# ---------------------------------------------------------------------------
# builders


def _vgg_blocks(in_channels: int, widths, prefix: str = "") -> list[LayerSpec]:
    out, prev, c = [], INPUT, in_channels
    for b, width in enumerate(widths, start=1):
        for i in (1, 2):
            conv = f"{prefix}conv{b}_{i}"
            out.append(LayerSpec(conv, "conv", (prev,), c, width, 3, 1, 1))
            out.append(LayerSpec(f"{prefix}relu{b}_{i}", "relu", (conv,)))
            prev, c = f"{prefix}relu{b}_{i}", width
        out.append(LayerSpec(f"{prefix}pool{b}", "maxpool", (prev,)))
        prev = f"{prefix}pool{b}"
    return out


def classifier_spec(in_channels: int = 3, n_classes: int = 3, input_size: int = 96,
                    widths=DEFAULT_WIDTHS, hidden: int = 128) -> NetworkSpec:
    if in_channels not in (3, 6):
        raise ConfigurationError(f"classifier input must have 3 or 6 channels, got {in_channels}")
    if n_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {n_classes}")
    if input_size <= 0 or input_size % 16:
        raise ConfigurationError(f"input extent {input_size} is not divisible by 16")
    layers = _vgg_blocks(in_channels, widths)
    side = input_size // 16
    flat = side * side * widths[-1]
    layers += [
        LayerSpec("flatten", "flatten", ("pool4",)),
        LayerSpec("fc5", "fc", ("flatten",), flat, hidden),
        LayerSpec("relu5", "relu", ("fc5",)),
        LayerSpec("fc6", "fc", ("relu5",), hidden, n_classes),
        LayerSpec("prob", "softmax", ("fc6",)),
    ]
    return NetworkSpec("classifier", in_channels, n_classes, input_size, layers, "prob")


def roi_spec(input_size: int = 96, widths=DEFAULT_WIDTHS, skips=DEFAULT_ROI_SKIPS) -> NetworkSpec:
    """FCN-style encoder/decoder producing a 3-class score map.

    ``skips`` lists the encoder blocks whose pooled outputs get a 1x1 score
    head, coarsest first.  Each score map is upsampled x2 by a transposed
    convolution, cropped and added to the next finer one; the finest fused
    map is upsampled to the input extent.
    """
    if input_size <= 0 or input_size % 16:
        raise ConfigurationError(f"input extent {input_size} is not divisible by 16")
    skips = tuple(int(b) for b in skips)
    if not skips or any(not 1 <= b <= len(widths) for b in skips) or any(
            a != b + 1 for a, b in zip(skips, skips[1:])):
        raise ConfigurationError(f"skips must be consecutive encoder blocks, coarsest first; got {skips}")
    k = N_ROI_CLASSES
    layers = _vgg_blocks(3, widths)
    for b in skips:
        layers.append(LayerSpec(f"score{2 ** b}", "conv", (f"pool{b}",), widths[b - 1], k, 1))
    prev = f"score{2 ** skips[0]}"
    for b in skips[1:]:
        src, dst = 2 ** (b + 1), 2 ** b
        layers += [
            LayerSpec(f"up{src}", "tconv", (prev,), k, k, 4, 2, init="bilinear"),
            LayerSpec(f"crop{src}", "crop", (f"up{src}", f"score{dst}")),
            LayerSpec(f"fuse{dst}", "add", (f"crop{src}", f"score{dst}")),
        ]
        prev = f"fuse{dst}"
    f = 2 ** skips[-1]
    layers += [
        LayerSpec(f"up{f}", "tconv", (prev,), k, k, 2 * f, f, init="bilinear"),
        LayerSpec("scores", "crop", (f"up{f}", INPUT)),
    ]
    return NetworkSpec("roi", 3, k, input_size, layers, "scores")


def fused_spec(roi: NetworkSpec, cls: NetworkSpec) -> NetworkSpec:
    if cls.in_channels != 3 + N_ROI_CLASSES:
        raise ConfigurationError(
            f"fusion needs a classifier built for {3 + N_ROI_CLASSES} channels, "
            f"got {cls.in_channels}")
    if roi.input_size != cls.input_size:
        raise ConfigurationError(
            f"ROI subnet ({roi.input_size}) and classifier ({cls.input_size}) input sizes differ")

    def moved(ly: LayerSpec, prefix: str, input_alias: str) -> LayerSpec:
        refs = tuple(input_alias if r == INPUT else prefix + r for r in ly.inputs)
        return LayerSpec(**{**asdict(ly), "name": prefix + ly.name, "inputs": refs})

    layers = [moved(ly, "roi/", INPUT) for ly in roi.layers]
    layers.append(LayerSpec("roi_probs", "pixel_softmax", ("roi/" + roi.output,)))
    layers.append(LayerSpec("fusion", "concat", (INPUT, "roi_probs")))
    layers += [moved(ly, "cls/", "fusion") for ly in cls.layers]
    return NetworkSpec("fused", 3, cls.n_classes, cls.input_size, layers, "cls/" + cls.output)


# ---------------------------------------------------------------------------
# instantiated networks


class Network:
    """A spec plus its named parameter tensors.

    Parameters are created from ``seed`` unless ``params`` is given, in
    which case their shapes must match the spec exactly.
    """

    def __init__(self, spec: NetworkSpec, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.spec = spec
        shapes = spec.param_shapes()
        if params is None:
            params = _init_params(spec, np.random.default_rng(seed))
        missing = set(shapes) - set(params)
        extra = set(params) - set(shapes)
        if missing or extra:
            raise ConfigurationError(
                f"parameter names disagree with spec: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ConfigurationError(
                    f"parameter {name!r} has shape {params[name].shape}, spec requires {shape}")
        self.params = {name: params[name] for name in shapes}
        for name, t in self.params.items():
            t.requires_grad = True
            t.name = name
        spec.infer_shapes((1, spec.in_channels, spec.input_size, spec.input_size))

    def __repr__(self):
        return f"Network(kind={self.spec.kind!r}, n_params={self.n_params})"

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    @property
    def n_params(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, t in self.params.items():
            t.data = np.array(state[k], dtype=np.float64)

    def copy(self) -> "Network":
        params = {k: Tensor(t.data.copy()) for k, t in self.params.items()}
        return Network(copy.deepcopy(self.spec), params)

    def subnetwork(self, prefix: str) -> "Network":
        """Return the ``roi/`` or ``cls/`` part of a fused network, sharing tensors."""
        if self.spec.kind != "fused":
            raise ConfigurationError("only fused networks have subnetworks")
        if prefix not in ("roi/", "cls/"):
            raise ConfigurationError(f"unknown subnetwork prefix {prefix!r}")
        widths = tuple(self.spec.layer(f"{prefix}conv{b}_1").out_ch for b in range(1, 5))
        if prefix == "roi/":
            spec = roi_spec(self.spec.input_size, widths)
        else:
            hidden = self.spec.layer("cls/fc5").out_ch
            spec = classifier_spec(6, self.spec.n_classes, self.spec.input_size, widths, hidden)
        params = {k[len(prefix):]: t for k, t in self.params.items() if k.startswith(prefix)}
        return Network(spec, params)

    def forward(self, x, until: str | None = None, keep=()) -> Tensor | dict:
        """Run the layer list on ``x`` (``N x C x H x W``).

        Stops after layer ``until`` if given.  When ``keep`` names layers, a
        dict of those activations (plus the final one under ``"output"``)
        is returned instead of a single tensor.
        """
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(
                f"{self.spec.kind} network expects N x {self.spec.in_channels} x H x W, got {x.shape}")
        if until is None and self.spec.kind != "roi" and \
                (x.shape[2] != self.spec.input_size or x.shape[3] != self.spec.input_size):
            if x.shape[2] % 16 or x.shape[3] % 16:
                raise ConfigurationError(f"input extent {x.shape[2]}x{x.shape[3]} is not divisible by 16")
            raise ConfigurationError(
                f"network was built for {self.spec.input_size}x{self.spec.input_size} input, "
                f"got {x.shape[2]}x{x.shape[3]}")
        acts = {INPUT: x}
        last = x
        for ly in self.spec.layers:
            last = acts[ly.name] = self._apply(ly, [acts[r] for r in ly.inputs])
            if ly.name == until:
                break
        else:
            if until is not None:
                raise KeyError(f"no layer named {until!r}")
        if keep:
            out = {name: acts[name] for name in keep}
            out["output"] = last
            return out
        return last

    __call__ = forward

    def _apply(self, ly: LayerSpec, xs: list[Tensor]) -> Tensor:
        k, p = ly.kind, self.params
        if k == "conv":
            return L.conv2d(xs[0], L.ConvParams(p[f"{ly.name}.weight"], p[f"{ly.name}.bias"],
                                                ly.stride, ly.pad))
        if k == "relu":
            return L.relu(xs[0])
        if k == "maxpool":
            return L.maxpool2(xs[0])
        if k == "flatten":
            return L.flatten(xs[0])
        if k == "fc":
            return L.fully_connected(xs[0], p[f"{ly.name}.weight"], p[f"{ly.name}.bias"])
        if k == "softmax":
            return L.softmax(xs[0])
        if k == "pixel_softmax":
            return L.pixel_softmax(xs[0])
        if k == "tconv":
            return L.tconv2d(xs[0], L.TConvParams(p[f"{ly.name}.weight"], ly.stride))
        if k == "crop":
            return L.crop(xs[0], xs[1])
        if k == "add":
            return L.add_elementwise(xs[0], xs[1])
        if k == "concat":
            return L.concat_channels(xs[0], xs[1])
        raise ConfigurationError(f"unknown layer kind {k!r}")


def _init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    for ly in spec.layers:
        if ly.kind == "conv":
            w = L.he_normal((ly.out_ch, ly.in_ch, ly.kernel, ly.kernel),
                            ly.in_ch * ly.kernel * ly.kernel, rng)
            params[f"{ly.name}.weight"] = Tensor(w)
            params[f"{ly.name}.bias"] = Tensor(np.zeros(ly.out_ch))
        elif ly.kind == "fc":
            params[f"{ly.name}.weight"] = Tensor(L.he_normal((ly.in_ch, ly.out_ch), ly.in_ch, rng))
            params[f"{ly.name}.bias"] = Tensor(np.zeros(ly.out_ch))
        elif ly.kind == "tconv":
            w = L.bilinear_kernel(ly.in_ch, ly.out_ch, ly.kernel) if ly.init == "bilinear" else \
                L.he_normal((ly.in_ch, ly.out_ch, ly.kernel, ly.kernel), ly.in_ch * ly.kernel ** 2, rng)
            params[f"{ly.name}.weight"] = Tensor(w)
    return params


def build_classifier(in_channels: int = 3, n_classes: int = 3, input_size: int = 96,
                     seed: int = 0, widths=DEFAULT_WIDTHS, hidden: int = 128) -> Network:
    """VGG-pattern classifier: four conv-conv-pool blocks, then fc-relu-fc-softmax."""
    return Network(classifier_spec(in_channels, n_classes, input_size, widths, hidden), seed=seed)


def build_roi_subnet(input_size: int = 96, seed: int = 0, widths=DEFAULT_WIDTHS,
                     skips=DEFAULT_ROI_SKIPS) -> Network:
    return Network(roi_spec(input_size, widths, skips), seed=seed)


def fuse(roi: Network, cls: Network, share: bool = False) -> Network:
    """Stack per-pixel ROI probabilities onto the image and feed the classifier.

    Parameters are copied unless ``share`` is true, so training the fused
    network leaves the input networks untouched by default.
    """
    if roi.spec.kind != "roi":
        raise ConfigurationError(f"expected an ROI subnet, got a {roi.spec.kind} network")
    spec = fused_spec(roi.spec, cls.spec)

    def take(t):
        return t if share else Tensor(t.data.copy())

    params = {f"roi/{k}": take(t) for k, t in roi.params.items()}
    params.update({f"cls/{k}": take(t) for k, t in cls.params.items()})
    return Network(spec, params)


def network_from_spec(spec: NetworkSpec, params=None, seed: int = 0) -> Network:
    return Network(spec, params, seed)
