"""Declarative feedforward networks built from homogeneity-friendly layers.

A network is an ordered list of layers, each either an affine map (dense or
1-D convolution, optionally biased), a two-slope piecewise-linear activation,
a pooling step, or a skip merge that adds the output of an earlier layer.
Dropping every bias turns any such network into a nonnegatively homogeneous
one, ``F(a * x) == a * F(x)`` for ``a >= 0``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LAYER_KINDS = ("dense", "conv1d", "activation", "pooling", "skip-merge")
ACTIVATIONS = ("relu", "leaky-relu", "prelu", "identity")
POOLINGS = ("max", "min", "average", "global-average", "identity")

FORMAT_NAME = "xdnn-network"
FORMAT_VERSION = 1


class SpecError(ValueError):
    """Raised for network specifications that cannot be built."""

    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        prefix = "" if layer is None else f"layer {layer}: "
        super().__init__(prefix + message)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    weight_shape: tuple = ()
    has_bias: bool = False
    activation: str = "identity"
    negative_slope: float = 0.0
    pooling: str = "identity"
    window: int = 1
    stride: int = 1
    source: int = -1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(
                f"activation {self.activation!r} is not a two-slope piecewise-linear function; "
                f"choose one of {ACTIVATIONS}"
            )
        if self.pooling not in POOLINGS:
            raise SpecError(f"pooling {self.pooling!r} is neither linear nor order-selecting; choose one of {POOLINGS}")
        object.__setattr__(self, "weight_shape", tuple(int(d) for d in self.weight_shape))
        if self.kind == "dense" and len(self.weight_shape) != 2:
            raise SpecError("dense layers need a (out, in) weight shape")
        if self.kind == "conv1d" and len(self.weight_shape) != 3:
            raise SpecError("conv1d layers need an (out_channels, in_channels, kernel) weight shape")
        if self.kind not in ("dense", "conv1d") and (self.weight_shape or self.has_bias):
            raise SpecError(f"{self.kind} layers carry no weights or bias")
        if any(d < 1 for d in self.weight_shape):
            raise SpecError("weight dimensions must be positive")
        if self.window < 1 or self.stride < 1:
            raise SpecError("window and stride must be positive")


def dense(n_in: int, n_out: int, bias: bool = True) -> LayerSpec:
    return LayerSpec("dense", (n_out, n_in), has_bias=bias)


def conv1d(in_channels: int, out_channels: int, kernel: int, stride: int = 1, bias: bool = True) -> LayerSpec:
    return LayerSpec("conv1d", (out_channels, in_channels, kernel), has_bias=bias, stride=stride)


def activation(kind: str = "relu", negative_slope: float = 0.0) -> LayerSpec:
    if kind == "leaky-relu" and negative_slope == 0.0:
        negative_slope = 0.01
    return LayerSpec("activation", activation=kind, negative_slope=negative_slope)


def pooling(kind: str, window: int = 2) -> LayerSpec:
    return LayerSpec("pooling", pooling=kind, window=window)


def skip_merge(source: int) -> LayerSpec:
    return LayerSpec("skip-merge", source=source)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_dim: int
    output_dim: int
    input_channels: int = 1
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_dim < 1 or self.output_dim < 1:
            raise SpecError("input_dim and output_dim must be positive")
        if self.input_dim % self.input_channels:
            raise SpecError("input_dim must be divisible by input_channels")
        object.__setattr__(self, "shapes", _infer_shapes(self))


def _flat(shape: tuple) -> int:
    return int(np.prod(shape))


def _infer_shapes(spec: NetworkSpec) -> tuple:
    """Per-sample output shape of every layer; validates composition."""
    cur: tuple = (spec.input_dim,)
    if spec.input_channels > 1:
        cur = (spec.input_channels, spec.input_dim // spec.input_channels)
    shapes = []
    reduced = False
    for i, layer in enumerate(spec.layers):
        if reduced and (layer.kind == "conv1d" or (layer.kind == "pooling" and layer.pooling != "identity")):
            raise SpecError("global-average pooling must be the final spatial reduction", i)
        if layer.kind == "dense":
            out, n_in = layer.weight_shape
            if _flat(cur) != n_in:
                raise SpecError(f"dense expects {n_in} inputs, previous layer gives {_flat(cur)}", i)
            cur = (out,)
        elif layer.kind == "conv1d":
            c_out, c_in, k = layer.weight_shape
            if len(cur) == 1:
                if cur[0] % c_in:
                    raise SpecError(f"{cur[0]} features cannot be split into {c_in} channels", i)
                cur = (c_in, cur[0] // c_in)
            if cur[0] != c_in:
                raise SpecError(f"conv1d expects {c_in} channels, got {cur[0]}", i)
            length = (cur[1] - k) // layer.stride + 1
            if length < 1:
                raise SpecError(f"kernel {k} longer than signal {cur[1]}", i)
            cur = (c_out, length)
        elif layer.kind == "pooling":
            if layer.pooling == "global-average":
                cur = (cur[0],) if len(cur) == 2 else (1,)
                reduced = True
            elif layer.pooling != "identity":
                length = cur[-1]
                if length < layer.window:
                    raise SpecError(f"pool window {layer.window} exceeds length {length}", i)
                cur = cur[:-1] + (length // layer.window,)
        elif layer.kind == "skip-merge":
            if not -1 <= layer.source < i:
                raise SpecError(f"skip-merge must reference an earlier layer, got {layer.source}", i)
            src_shape = shapes[layer.source] if layer.source >= 0 else _input_shape(spec)
            if _flat(src_shape) != _flat(cur):
                raise SpecError(f"skip-merge source shape {src_shape} does not match {cur}", i)
        shapes.append(cur)
    if _flat(cur) != spec.output_dim:
        raise SpecError(f"network produces {_flat(cur)} outputs, spec says {spec.output_dim}")
    return tuple(shapes)


def _input_shape(spec: NetworkSpec) -> tuple:
    if spec.input_channels > 1:
        return (spec.input_channels, spec.input_dim // spec.input_channels)
    return (spec.input_dim,)


def mlp_spec(
    input_dim: int,
    hidden: Sequence[int],
    output_dim: int,
    bias: bool = True,
    activation_kind: str = "relu",
    negative_slope: float = 0.0,
) -> NetworkSpec:
    """Dense/activation stack ending in a linear output layer."""
    layers = []
    n_in = input_dim
    for width in hidden:
        layers.append(dense(n_in, width, bias))
        layers.append(activation(activation_kind, negative_slope))
        n_in = width
    layers.append(dense(n_in, output_dim, bias))
    return NetworkSpec(tuple(layers), input_dim, output_dim)


# -- homogeneity ------------------------------------------------------------


@dataclass(frozen=True)
class HomogeneityReport:
    homogeneous: bool
    reasons: tuple = ()

    def __bool__(self) -> bool:
        return self.homogeneous


def classify_homogeneity(spec) -> HomogeneityReport:
    """Decide structurally whether a network is nonnegatively homogeneous.

    Accepts a ``NetworkSpec`` or anything exposing ``.spec``. Layer kinds are
    restricted at construction to homogeneous activations and poolings, so
    the only possible violation is a bias term.
    """
    if not isinstance(spec, NetworkSpec):
        spec = getattr(spec, "spec", None)
        if not isinstance(spec, NetworkSpec):
            return HomogeneityReport(False, ("model has no inspectable network structure",))
    reasons = tuple(f"bias at layer {i}" for i, layer in enumerate(spec.layers) if layer.has_bias)
    return HomogeneityReport(not reasons, reasons)


# -- parameters -------------------------------------------------------------


class Network:
    """A ``NetworkSpec`` plus its parameter arrays.

    Parameters are stored as read-only float64 arrays keyed
    ``layers.<i>.weight``, ``layers.<i>.bias`` and ``layers.<i>.slope``.
    Calling the network on a ``[batch, input_dim]`` tensor builds a graph.
    """

    def __init__(self, spec: NetworkSpec, params: Mapping[str, np.ndarray]):
        self.spec = spec
        frozen = {}
        for name, value in params.items():
            arr = np.array(value, dtype=np.float64)
            arr.setflags(write=False)
            frozen[name] = arr
        _check_params(spec, frozen)
        self.params = frozen

    def __repr__(self) -> str:
        kinds = ",".join(layer.kind for layer in self.spec.layers)
        return f"Network({self.spec.input_dim}->{self.spec.output_dim}, layers=[{kinds}])"

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def parameter_tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: ad.tensor(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}

    def with_params(self, params: Mapping[str, np.ndarray]) -> "Network":
        return Network(self.spec, params)

    def __call__(self, x: Tensor, params: Mapping[str, Tensor] | None = None) -> Tensor:
        return _forward(self.spec, params if params is not None else self.params, x)

    def bind(self, params: Mapping[str, Tensor]) -> "BoundNetwork":
        """View of this network evaluated with the given (differentiable) parameters."""
        return BoundNetwork(self.spec, params)


class BoundNetwork:
    """A spec paired with parameter tensors, typically leaves of a training graph."""

    def __init__(self, spec: NetworkSpec, params: Mapping[str, Tensor]):
        self.spec = spec
        self.params = dict(params)

    def __call__(self, x: Tensor) -> Tensor:
        return _forward(self.spec, self.params, x)


def _expected_params(spec: NetworkSpec) -> dict[str, tuple]:
    shapes = {}
    for i, layer in enumerate(spec.layers):
        if layer.kind in ("dense", "conv1d"):
            shapes[f"layers.{i}.weight"] = layer.weight_shape
            if layer.has_bias:
                shapes[f"layers.{i}.bias"] = (layer.weight_shape[0],)
        elif layer.kind == "activation" and layer.activation == "prelu":
            shapes[f"layers.{i}.slope"] = (1,)
    return shapes


def _check_params(spec: NetworkSpec, params: Mapping[str, np.ndarray]) -> None:
    expected = _expected_params(spec)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise SpecError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise SpecError(f"{name} has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name])):
            raise SpecError(f"{name} contains non-finite values")


def init_network(spec: NetworkSpec, seed: int = 0, prelu_slope: float = 0.25) -> Network:
    """Scaled-uniform weights, zero biases, fixed PReLU slopes; deterministic in ``seed``."""
    if not isinstance(spec, NetworkSpec):
        raise SpecError("init_network needs a NetworkSpec")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _expected_params(spec).items():
        if name.endswith(".weight"):
            if len(shape) == 2:
                fan_out, fan_in = shape
            else:
                fan_out, fan_in = shape[0] * shape[2], shape[1] * shape[2]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            params[name] = np.full(shape, prelu_slope)
    return Network(spec, params)


def strip_bias(net: Network) -> Network:
    """Copy of ``net`` with every bias removed; weights and slopes are kept."""
    layers = tuple(replace(layer, has_bias=False) if layer.has_bias else layer for layer in net.spec.layers)
    spec = replace(net.spec, layers=layers)
    params = {k: v.copy() for k, v in net.params.items() if not k.endswith(".bias")}
    return Network(spec, params)


# -- forward pass -----------------------------------------------------------


def _param(params, name):
    value = params[name]
    return value if isinstance(value, Tensor) else ad.constant(value)


def _to_channels(h: Tensor, shape: tuple) -> Tensor:
    if len(shape) == 2:
        return ad.reshape(h, (h.shape[0],) + shape)
    return ad.reshape(h, (h.shape[0], 1, shape[0]))


def _conv1d(h: Tensor, w: Tensor, stride: int) -> Tensor:
    batch, c_in, length = h.shape
    c_out, _, k = w.shape
    l_out = (length - k) // stride + 1
    starts = np.arange(l_out) * stride
    # patch index [l_out, c_in * k] into the flattened [c_in * length] signal
    idx = (np.arange(c_in).reshape(1, c_in, 1) * length + starts.reshape(l_out, 1, 1) + np.arange(k).reshape(1, 1, k))
    idx = idx.reshape(l_out * c_in * k)
    patches = ad.take_columns(ad.reshape(h, (batch, c_in * length)), idx)
    patches = ad.reshape(patches, (batch * l_out, c_in * k))
    out = ad.matmul(patches, ad.transpose(ad.reshape(w, (c_out, c_in * k))))
    out = ad.reshape(out, (batch, l_out, c_out))
    return ad.transpose(out, (0, 2, 1))


def _forward(spec: NetworkSpec, params, x) -> Tensor:
    x = x if isinstance(x, Tensor) else ad.constant(x)
    single = x.ndim == 1
    if single:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ad.ShapeError("predict", f"expected inputs of width {spec.input_dim}, got shape {x.shape}")
    batch = x.shape[0]
    in_shape = _input_shape(spec)
    h = x if len(in_shape) == 1 else ad.reshape(x, (batch,) + in_shape)
    cur = in_shape
    outputs = []
    for i, layer in enumerate(spec.layers):
        if layer.kind == "dense":
            if h.ndim != 2:
                h = ad.reshape(h, (batch, _flat(cur)))
            h = ad.matmul(h, ad.transpose(_param(params, f"layers.{i}.weight")))
            if layer.has_bias:
                h = ad.add(h, _param(params, f"layers.{i}.bias"))
        elif layer.kind == "conv1d":
            if h.ndim != 3:
                c_in = layer.weight_shape[1]
                h = ad.reshape(h, (batch, c_in, _flat(cur) // c_in))
            h = _conv1d(h, _param(params, f"layers.{i}.weight"), layer.stride)
            if layer.has_bias:
                h = ad.add(h, ad.reshape(_param(params, f"layers.{i}.bias"), (layer.weight_shape[0], 1)))
        elif layer.kind == "activation":
            if layer.activation == "relu":
                h = ad.relu(h)
            elif layer.activation == "leaky-relu":
                h = ad.leaky_relu(h, layer.negative_slope)
            elif layer.activation == "prelu":
                h = ad.prelu(h, _param(params, f"layers.{i}.slope"))
        elif layer.kind == "pooling" and layer.pooling != "identity":
            if h.ndim != 3:
                h = _to_channels(h, cur)
            if layer.pooling == "max":
                h = ad.max_pool1d(h, layer.window)
            elif layer.pooling == "min":
                h = ad.min_pool1d(h, layer.window)
            elif layer.pooling == "average":
                h = ad.avg_pool1d(h, layer.window)
            else:
                h = ad.mean(h, axis=2)
        elif layer.kind == "skip-merge":
            src = outputs[layer.source] if layer.source >= 0 else x
            h = ad.add(h, ad.reshape(src, h.shape))
        cur = spec.shapes[i]
        outputs.append(h)
    out = ad.reshape(h, (batch, spec.output_dim))
    if single:
        out = ad.reshape(out, (spec.output_dim,))
    return out


def predict(net: Network, x) -> Tensor:
    """Output logits for ``x`` (``[n]`` or ``[batch, n]``) as a differentiable graph."""
    return net(x)


# -- functionally equivalent rewrites ---------------------------------------


def _is_plain_mlp(spec: NetworkSpec) -> bool:
    return all(layer.kind in ("dense", "activation") for layer in spec.layers)


def _dense_indices(spec: NetworkSpec) -> list[int]:
    return [i for i, layer in enumerate(spec.layers) if layer.kind == "dense"]


def permute_hidden(net: Network, dense_layer: int, perm: Sequence[int]) -> Network:
    """Permute the output units of a hidden dense layer (same function)."""
    spec = net.spec
    dense_ids = _dense_indices(spec)
    if not _is_plain_mlp(spec) or dense_layer not in dense_ids[:-1]:
        raise SpecError("permute_hidden needs a hidden dense layer of a dense/activation stack")
    nxt = dense_ids[dense_ids.index(dense_layer) + 1]
    perm = np.asarray(perm)
    params = {k: v.copy() for k, v in net.params.items()}
    params[f"layers.{dense_layer}.weight"] = params[f"layers.{dense_layer}.weight"][perm]
    if f"layers.{dense_layer}.bias" in params:
        params[f"layers.{dense_layer}.bias"] = params[f"layers.{dense_layer}.bias"][perm]
    params[f"layers.{nxt}.weight"] = params[f"layers.{nxt}.weight"][:, perm]
    return Network(spec, params)


def insert_identity(net: Network, position: int) -> Network:
    """Insert a bias-free identity dense layer after layer ``position`` (-1: before all).

    Only valid where the per-sample representation is a flat vector.
    """
    spec = net.spec
    if not -1 <= position < len(spec.layers):
        raise SpecError(f"position {position} out of range")
    shape = spec.shapes[position] if position >= 0 else _input_shape(spec)
    if len(shape) != 1:
        raise SpecError("identity layers can only be inserted between flat representations", position)
    width = shape[0]
    new_layers: list = []
    params = {}
    mapping = {}

    def add_identity():
        params[f"layers.{len(new_layers)}.weight"] = np.eye(width)
        new_layers.append(dense(width, width, bias=False))

    if position == -1:
        add_identity()
    for i, layer in enumerate(spec.layers):
        if layer.kind == "skip-merge" and layer.source >= 0:
            layer = replace(layer, source=mapping[layer.source])
        j = len(new_layers)
        for suffix in ("weight", "bias", "slope"):
            key = f"layers.{i}.{suffix}"
            if key in net.params:
                params[f"layers.{j}.{suffix}"] = net.params[key].copy()
        new_layers.append(layer)
        mapping[i] = j
        if i == position:
            add_identity()
    new_spec = NetworkSpec(tuple(new_layers), spec.input_dim, spec.output_dim, spec.input_channels)
    return Network(new_spec, params)


def linear_combination(net_a: Network, net_b: Network, coef_a: float, coef_b: float) -> Network:
    """One network computing ``coef_a * F_a + coef_b * F_b`` (dense/activation stacks).

    Both nets must have the same depth and layer kinds; hidden layers are
    stacked block-diagonally and the output layers are scaled and summed.
    """
    sa, sb = net_a.spec, net_b.spec
    if not (_is_plain_mlp(sa) and _is_plain_mlp(sb)):
        raise SpecError("linear_combination supports dense/activation stacks only")
    if (
        sa.input_dim != sb.input_dim
        or sa.output_dim != sb.output_dim
        or [(layer.kind, layer.activation, layer.negative_slope) for layer in sa.layers]
        != [(layer.kind, layer.activation, layer.negative_slope) for layer in sb.layers]
    ):
        raise SpecError("networks must share input/output size and layer structure")
    if any(layer.activation == "prelu" for layer in sa.layers):
        raise SpecError("prelu slopes cannot be shared across stacked blocks")
    dense_ids = _dense_indices(sa)
    layers = []
    params = {}
    for i, (la, lb) in enumerate(zip(sa.layers, sb.layers)):
        if la.kind != "dense":
            layers.append(la)
            continue
        wa, wb = net_a.params[f"layers.{i}.weight"], net_b.params[f"layers.{i}.weight"]
        ba = net_a.params.get(f"layers.{i}.bias", np.zeros(wa.shape[0]))
        bb = net_b.params.get(f"layers.{i}.bias", np.zeros(wb.shape[0]))
        has_bias = la.has_bias or lb.has_bias
        if i == dense_ids[0] and i == dense_ids[-1]:
            w = coef_a * wa + coef_b * wb
            b = coef_a * ba + coef_b * bb
        elif i == dense_ids[0]:
            w = np.vstack([wa, wb])
            b = np.concatenate([ba, bb])
        elif i == dense_ids[-1]:
            w = np.hstack([coef_a * wa, coef_b * wb])
            b = coef_a * ba + coef_b * bb
        else:
            w = np.block([[wa, np.zeros((wa.shape[0], wb.shape[1]))], [np.zeros((wb.shape[0], wa.shape[1])), wb]])
            b = np.concatenate([ba, bb])
        layers.append(LayerSpec("dense", w.shape, has_bias=has_bias))
        params[f"layers.{i}.weight"] = w
        if has_bias:
            params[f"layers.{i}.bias"] = b
    spec = NetworkSpec(tuple(layers), sa.input_dim, sa.output_dim)
    return Network(spec, params)


# -- persistence ------------------------------------------------------------


def spec_to_dict(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        d = asdict(layer)
        d["weight_shape"] = list(layer.weight_shape)
        layers.append(d)
    return {
        "input_dim": spec.input_dim,
        "output_dim": spec.output_dim,
        "input_channels": spec.input_channels,
        "layers": layers,
    }


def spec_from_dict(d: Mapping) -> NetworkSpec:
    try:
        layers = tuple(
            LayerSpec(**{**layer, "weight_shape": tuple(layer.get("weight_shape", ()))}) for layer in d["layers"]
        )
        return NetworkSpec(layers, int(d["input_dim"]), int(d["output_dim"]), int(d.get("input_channels", 1)))
    except (KeyError, TypeError) as exc:
        raise SpecError(f"malformed network spec: {exc}") from exc


def network_to_dict(net: Network) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "spec": spec_to_dict(net.spec),
        "params": {
            name: {"shape": list(value.shape), "data": [float(v) for v in value.reshape(-1)]}
            for name, value in sorted(net.params.items())
        },
    }


def network_from_dict(d: Mapping) -> Network:
    if d.get("format") != FORMAT_NAME:
        raise SpecError(f"not a serialized network (format={d.get('format')!r})")
    if d.get("version") != FORMAT_VERSION:
        raise SpecError(f"unsupported network file version {d.get('version')!r}")
    spec = spec_from_dict(d["spec"])
    params = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]) for name, entry in d["params"].items()
    }
    return Network(spec, params)


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n", encoding="utf-8")


def load_network(path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
