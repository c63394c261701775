"""Layer-graph description, the two network builders, darknet weights and the forward pass."""

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .anchors import DEFAULT_ANCHOR_SET, AnchorSet
from .errors import (InvalidInputSize, MalformedHeader, ShapeMismatch,
                     WeightCountMismatch)
from .layers import (BN_EPS, LEAKY_SLOPE, BatchNorm, ConvParams, PoolParams,
                     batchnorm_apply, concat_channels, conv2d, fold_batchnorm,
                     leaky_relu, maxpool, upsample_nearest)
from .tensor import DTYPE, Shape3, Tensor3

CONV, MAXPOOL, UPSAMPLE, ROUTE, YOLO = "Conv", "MaxPool", "Upsample", "Route", "Yolo"


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: int
    stride: int = 1
    batchnorm: bool = True
    activation: bool = True


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    conv: Optional[ConvSpec] = None
    pool: Optional[PoolParams] = None
    factor: int = 2
    route_sources: tuple = ()
    yolo_anchor_indices: tuple = ()

    def describe(self):
        """(type, size/stride, filters) cells as laid out in the architecture tables."""
        if self.kind == CONV:
            c = self.conv
            return "Conv", f"{c.kernel} x {c.kernel}/{c.stride}", str(c.filters)
        if self.kind == MAXPOOL:
            p = self.pool
            return "MaxPool", f"{p.size} x {p.size}/{p.stride}", ""
        if self.kind == UPSAMPLE:
            return "Up-samp", f"{self.factor} x {self.factor}/1", ""
        if self.kind == ROUTE:
            return "Route " + " ".join(str(s) for s in self.route_sources), "", ""
        return "YOLO", "", ""


@dataclass
class NetworkSpec:
    input_size: int
    num_classes: int
    layers: list
    anchors: AnchorSet = DEFAULT_ANCHOR_SET
    input_channels: int = 3

    def __post_init__(self):
        head = 3 * (5 + self.num_classes)
        for i, layer in enumerate(self.layers):
            kinds = {CONV: layer.conv, MAXPOOL: layer.pool}
            if layer.kind in kinds and kinds[layer.kind] is None:
                raise ValueError(f"layer {i}: {layer.kind} without parameters")
            if layer.kind == ROUTE:
                if not 1 <= len(layer.route_sources) <= 2:
                    raise ValueError(f"layer {i}: route needs 1 or 2 sources")
                if any(not 0 <= s < i for s in layer.route_sources):
                    raise ValueError(f"layer {i}: route must reference earlier layers")
            if layer.kind == YOLO:
                prev = self.layers[i - 1] if i else None
                if prev is None or prev.kind != CONV or prev.conv.filters != head:
                    raise ValueError(f"layer {i}: YOLO must follow a {head}-filter conv")
                if len(layer.yolo_anchor_indices) != 3:
                    raise ValueError(f"layer {i}: YOLO needs 3 anchor indices")

    @property
    def conv_indices(self):
        return [i for i, l in enumerate(self.layers) if l.kind == CONV]

    @property
    def yolo_indices(self):
        return [i for i, l in enumerate(self.layers) if l.kind == YOLO]

    def head_strides(self):
        shapes = layer_output_shapes(self)
        return [self.input_size // shapes[i].height for i in self.yolo_indices]


def _conv(filters, kernel, **kw):
    return LayerSpec(CONV, conv=ConvSpec(filters, kernel, **kw))


def _head(num_classes):
    return _conv(3 * (5 + num_classes), 1, batchnorm=False, activation=False)


def _backbone_and_first_heads(num_classes):
    layers = []
    for i, filters in enumerate((16, 32, 64, 128, 256, 512)):
        layers.append(_conv(filters, 3))
        layers.append(LayerSpec(MAXPOOL, pool=PoolParams(2, 1 if i == 5 else 2)))
    layers += [
        _conv(1024, 3),                                     # 12
        _conv(256, 1),                                      # 13
        _conv(512, 3),                                      # 14
        _head(num_classes),                                 # 15
        LayerSpec(YOLO, yolo_anchor_indices=(6, 7, 8)),     # 16
        LayerSpec(ROUTE, route_sources=(13,)),              # 17
        _conv(128, 1),                                      # 18
        LayerSpec(UPSAMPLE, factor=2),                      # 19
        LayerSpec(ROUTE, route_sources=(19, 8)),            # 20
        _conv(256, 3),                                      # 21
        _head(num_classes),                                 # 22
        LayerSpec(YOLO, yolo_anchor_indices=(3, 4, 5)),     # 23
    ]
    return layers


def _check_size(input_size):
    if input_size < 32 or input_size % 32:
        raise InvalidInputSize(f"input size must be a positive multiple of 32, got {input_size}")


def build_original_tiny(input_size=416, num_classes=80, anchors=DEFAULT_ANCHOR_SET):
    """The two-scale network (strides 32 and 16), layers 0-23."""
    _check_size(input_size)
    return NetworkSpec(input_size, num_classes, _backbone_and_first_heads(num_classes), anchors)


def build_custom_tiny3(input_size=608, num_classes=1, anchors=DEFAULT_ANCHOR_SET):
    """The three-scale network: the original graph plus a stride-8 branch fed by layer 6."""
    _check_size(input_size)
    layers = _backbone_and_first_heads(num_classes) + [
        LayerSpec(ROUTE, route_sources=(21,)),              # 24
        _conv(128, 1),                                      # 25
        LayerSpec(UPSAMPLE, factor=2),                      # 26
        LayerSpec(ROUTE, route_sources=(26, 6)),            # 27
        _conv(256, 3),                                      # 28
        _head(num_classes),                                 # 29
        LayerSpec(YOLO, yolo_anchor_indices=(0, 1, 2)),     # 30
    ]
    return NetworkSpec(input_size, num_classes, layers, anchors)


def layer_output_shapes(spec: NetworkSpec):
    """Output shape of every layer, derived without touching any activations."""
    shapes = []
    cur = Shape3(spec.input_size, spec.input_size, spec.input_channels)
    for i, layer in enumerate(spec.layers):
        if layer.kind == CONV:
            s = layer.conv.stride
            cur = Shape3(-(-cur.height // s), -(-cur.width // s), layer.conv.filters)
        elif layer.kind == MAXPOOL:
            s = layer.pool.stride
            if s == 2 and (cur.height % 2 or cur.width % 2):
                raise ShapeMismatch(f"odd side {cur} under stride-2 pooling", layer=i)
            cur = Shape3(cur.height // s, cur.width // s, cur.channels)
        elif layer.kind == UPSAMPLE:
            cur = Shape3(cur.height * layer.factor, cur.width * layer.factor, cur.channels)
        elif layer.kind == ROUTE:
            srcs = [shapes[j] for j in layer.route_sources]
            if any(s[:2] != srcs[0][:2] for s in srcs):
                raise ShapeMismatch(
                    "route sources differ in spatial size: "
                    + ", ".join(f"{j}={s}" for j, s in zip(layer.route_sources, srcs)),
                    layer=i)
            cur = Shape3(srcs[0].height, srcs[0].width, sum(s.channels for s in srcs))
        shapes.append(cur)
    return shapes


# --------------------------------------------------------------------------
# weights

@dataclass
class Network:
    spec: NetworkSpec
    params: dict                      # conv layer index -> ConvParams
    header: tuple = (0, 2, 0, 0)      # major, minor, revision, seen
    bn_eps: float = BN_EPS
    folded: bool = False

    def fold(self):
        """Copy of the network with every batch norm absorbed into its convolution."""
        params = {i: fold_batchnorm(p, self.bn_eps) if p.batchnorm is not None else p
                  for i, p in self.params.items()}
        return Network(self.spec, params, self.header, self.bn_eps, folded=True)


def _conv_in_channels(spec):
    shapes = layer_output_shapes(spec)
    chans = {}
    for i in spec.conv_indices:
        chans[i] = shapes[i - 1].channels if i else spec.input_channels
    return chans


def expected_float_count(spec: NetworkSpec) -> int:
    total = 0
    for i, cin in _conv_in_channels(spec).items():
        c = spec.layers[i].conv
        total += c.filters * (4 if c.batchnorm else 1) + c.filters * cin * c.kernel ** 2
    return total


def _header_size(major, minor):
    return 12 + (8 if major * 10 + minor >= 2 else 4)


def parse_header(data: bytes):
    if len(data) < 12:
        raise MalformedHeader(f"header needs at least 12 bytes, file has {len(data)}")
    major, minor, revision = struct.unpack_from("<3i", data, 0)
    size = _header_size(major, minor)
    if len(data) < size:
        raise MalformedHeader(f"header needs {size} bytes, file has {len(data)}")
    seen = struct.unpack_from("<Q" if size == 20 else "<I", data, 12)[0]
    return (major, minor, revision, seen), size


def load_darknet_weights(spec: NetworkSpec, data: bytes, bn_eps=BN_EPS) -> Network:
    """Place the floats of a darknet ``.weights`` file into the graph's convolutions.

    Per conv layer, in graph order: batch-normalized layers store beta, gamma,
    rolling mean, rolling variance; plain layers store the bias; both then store
    ``filters * in_channels * k * k`` weights.
    """
    header, offset = parse_header(data)
    body = data[offset:]
    expected = expected_float_count(spec)
    if len(body) != expected * 4:
        raise WeightCountMismatch(expected, len(body) / 4 if len(body) % 4 else len(body) // 4)
    floats = np.frombuffer(body, dtype="<f4").astype(DTYPE)
    ptr = 0

    def take(n):
        nonlocal ptr
        out = floats[ptr:ptr + n]
        ptr += n
        return out

    params = {}
    for i, cin in _conv_in_channels(spec).items():
        c = spec.layers[i].conv
        n = c.filters
        if c.batchnorm:
            beta, gamma, mean, var = take(n), take(n), take(n), take(n)
            bn = BatchNorm(gamma, beta, mean, np.maximum(var, 0))
            bias = np.zeros(n, dtype=DTYPE)
        else:
            bn = None
            bias = take(n)
        w = take(n * cin * c.kernel ** 2).reshape(n, cin, c.kernel, c.kernel)
        params[i] = ConvParams(w, bias, c.stride, bn)
    return Network(spec, params, header, bn_eps)


def save_darknet_weights(net: Network) -> bytes:
    major, minor, revision, seen = net.header
    out = [struct.pack("<3i", major, minor, revision)]
    out.append(struct.pack("<Q" if _header_size(major, minor) == 20 else "<I", seen))
    for i in net.spec.conv_indices:
        p = net.params[i]
        if net.spec.layers[i].conv.batchnorm:
            if p.batchnorm is None:
                raise ValueError(f"layer {i}: folded network cannot be serialized")
            bn = p.batchnorm
            blocks = (bn.beta, bn.gamma, bn.rolling_mean, bn.rolling_var)
        else:
            blocks = (p.bias,)
        for b in blocks + (p.weights,):
            out.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(out)


def random_network(spec: NetworkSpec, seed=0, header=(0, 2, 0, 0)) -> Network:
    """He-initialized weights with mild batch-norm statistics; for tests and benchmarks."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, cin in _conv_in_channels(spec).items():
        c = spec.layers[i].conv
        n, fan_in = c.filters, cin * c.kernel ** 2
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(n, cin, c.kernel, c.kernel))
        if c.batchnorm:
            bn = BatchNorm(rng.uniform(0.5, 1.5, n), rng.normal(0, 0.1, n),
                           rng.normal(0, 0.1, n), rng.uniform(0.5, 1.5, n))
            params[i] = ConvParams(w, np.zeros(n), c.stride, bn)
        else:
            params[i] = ConvParams(w * 0.1, rng.normal(0, 0.1, n), c.stride)
    return Network(spec, params, header)


def zero_network(spec: NetworkSpec) -> Network:
    data = struct.pack("<3iQ", 0, 2, 0, 0) + bytes(4 * expected_float_count(spec))
    return load_darknet_weights(spec, data)


# --------------------------------------------------------------------------
# forward pass

def _retained_sources(spec):
    keep = set()
    for layer in spec.layers:
        keep.update(layer.route_sources)
    return keep


def run_layer(net: Network, i: int, x: Tensor3, saved: dict) -> Tensor3:
    layer = net.spec.layers[i]
    if layer.kind == CONV:
        p = net.params[i]
        y = conv2d(x, p)
        if p.batchnorm is not None:
            y = batchnorm_apply(y, p, net.bn_eps)
        if layer.conv.activation:
            y = leaky_relu(y, LEAKY_SLOPE)
        return y
    if layer.kind == MAXPOOL:
        return maxpool(x, layer.pool)
    if layer.kind == UPSAMPLE:
        return upsample_nearest(x, layer.factor)
    if layer.kind == ROUTE:
        srcs = [saved[j] for j in layer.route_sources]
        if len(srcs) == 1:
            return srcs[0]
        try:
            return concat_channels(*srcs)
        except ShapeMismatch as exc:
            raise ShapeMismatch(str(exc), layer=i) from None
    return x


def forward(net: Network, image: Tensor3, hook=None):
    """Run the graph and return the raw tensor feeding each YOLO layer.

    ``hook(index, layer, output)`` is called after every layer when given.
    Only activations referenced by later routes are kept alive.
    """
    spec = net.spec
    want = Shape3(spec.input_size, spec.input_size, spec.input_channels)
    if image.shape != want:
        raise ShapeMismatch(f"input is {image.shape}, network expects {want}")
    keep = _retained_sources(spec)
    saved, heads = {}, []
    x = image
    for i, layer in enumerate(spec.layers):
        if layer.kind == YOLO:
            heads.append(x)
        x = run_layer(net, i, x, saved)
        if hook is not None:
            hook(i, layer, x)
        if i in keep:
            saved[i] = x
    return heads
