"""Forward-only encoder-decoder segmentation network.

Layers are depthwise-separable convolutions (optionally strided or dilated),
2x downsampling / upsampling, skip concatenations and a sigmoid head.  There
is no training here: weights come from a ``PNET`` file or a seeded random
initialization, and the correctness surface is shapes, oracles and
determinism.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PNET"
FORMAT_VERSION = 1


class NetShapeError(ValueError):
    def __init__(self, layer_index: int, message: str):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


@dataclass
class DwSepConv:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    dilation: int = 1
    depthwise: np.ndarray | None = None  # (in, k, k)
    pointwise: np.ndarray | None = None  # (out, in)
    bias: np.ndarray | None = None  # (out,)


@dataclass
class Downsample:
    pass


@dataclass
class Upsample:
    pass


@dataclass
class SkipConcat:
    source: int  # earlier layer index, or -1 for the network input


@dataclass
class SigmoidHead:
    pass


@dataclass
class NetSpec:
    input_shape: tuple[int, int, int]  # (channels, height, width)
    layers: list = field(default_factory=list)
    bottleneck_index: int | None = None

    def output_shapes(self) -> list[tuple[int, int, int]]:
        """Shape after each layer; raises NetShapeError on a broken chain."""
        shapes = []
        cur = self.input_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, DwSepConv):
                c, h, w = cur
                if layer.kernel % 2 == 0 or layer.kernel < 1:
                    raise NetShapeError(i, f"kernel must be odd, got {layer.kernel}")
                if layer.in_channels != c:
                    raise NetShapeError(
                        i, f"expects {layer.in_channels} channels, got {c}"
                    )
                pad = layer.dilation * (layer.kernel - 1) // 2
                span = layer.dilation * (layer.kernel - 1) + 1
                oh = (h + 2 * pad - span) // layer.stride + 1
                ow = (w + 2 * pad - span) // layer.stride + 1
                if oh < 1 or ow < 1:
                    raise NetShapeError(i, f"output collapses to {oh}x{ow}")
                cur = (layer.out_channels, oh, ow)
            elif isinstance(layer, Downsample):
                c, h, w = cur
                if h % 2 or w % 2:
                    raise NetShapeError(i, f"downsample needs even dims, got {h}x{w}")
                cur = (c, h // 2, w // 2)
            elif isinstance(layer, Upsample):
                c, h, w = cur
                cur = (c, h * 2, w * 2)
            elif isinstance(layer, SkipConcat):
                src = self.input_shape if layer.source == -1 else None
                if src is None:
                    if not 0 <= layer.source < i:
                        raise NetShapeError(i, f"skip source {layer.source} out of range")
                    src = shapes[layer.source]
                if src[1:] != cur[1:]:
                    raise NetShapeError(
                        i, f"skip spatial mismatch {src[1:]} vs {cur[1:]}"
                    )
                cur = (cur[0] + src[0], cur[1], cur[2])
            elif isinstance(layer, SigmoidHead):
                if cur[0] != 1:
                    raise NetShapeError(i, f"sigmoid head needs 1 channel, got {cur[0]}")
            else:
                raise NetShapeError(i, f"unknown layer type {type(layer).__name__}")
            shapes.append(cur)
        return shapes

    def validate(self):
        self.output_shapes()
        if self.bottleneck_index is not None and not (
            0 <= self.bottleneck_index < len(self.layers)
        ):
            raise ValueError(f"bottleneck index {self.bottleneck_index} out of range")
        for i, layer in enumerate(self.layers):
            if isinstance(layer, DwSepConv):
                if layer.depthwise is None or layer.pointwise is None or layer.bias is None:
                    raise NetShapeError(i, "conv layer has no weights")
                if layer.depthwise.shape != (layer.in_channels, layer.kernel, layer.kernel):
                    raise NetShapeError(i, f"depthwise shape {layer.depthwise.shape}")
                if layer.pointwise.shape != (layer.out_channels, layer.in_channels):
                    raise NetShapeError(i, f"pointwise shape {layer.pointwise.shape}")
                if layer.bias.shape != (layer.out_channels,):
                    raise NetShapeError(i, f"bias shape {layer.bias.shape}")


def dwsep_conv2d(
    x: np.ndarray,
    depthwise: np.ndarray,
    pointwise: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    dilation: int = 1,
) -> np.ndarray:
    """Depthwise k x k convolution per channel followed by a pointwise 1x1 mix.

    Zero padding keeps the spatial size at stride 1; output size follows
    floor((h + 2p - d*(k-1) - 1) / stride) + 1 with p = d*(k-1)/2.
    """
    x = np.asarray(x, dtype=np.float64)
    depthwise = np.asarray(depthwise, dtype=np.float64)
    pointwise = np.asarray(pointwise, dtype=np.float64)
    c, h, w = x.shape
    if depthwise.ndim != 3 or depthwise.shape[0] != c:
        raise ValueError(
            f"depthwise kernels for {depthwise.shape[0]} channels, input has {c}"
        )
    k = depthwise.shape[1]
    if depthwise.shape[2] != k or k % 2 == 0:
        raise ValueError(f"kernel must be square and odd, got {depthwise.shape[1:]}")
    if pointwise.shape[1] != c:
        raise ValueError(f"pointwise expects {pointwise.shape[1]} channels, input has {c}")

    pad = dilation * (k - 1) // 2
    span = dilation * (k - 1) + 1
    oh = (h + 2 * pad - span) // stride + 1
    ow = (w + 2 * pad - span) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))

    dw_out = np.zeros((c, oh, ow))
    for i in range(k):
        for j in range(k):
            ys = slice(i * dilation, i * dilation + (oh - 1) * stride + 1, stride)
            xs = slice(j * dilation, j * dilation + (ow - 1) * stride + 1, stride)
            dw_out += depthwise[:, i, j, None, None] * xp[:, ys, xs]

    out = np.tensordot(pointwise, dw_out, axes=([1], [0]))
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


def _run(net: NetSpec, x: np.ndarray) -> list[np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise ValueError(f"input shape {x.shape} does not match {net.input_shape}")
    net.validate()
    outputs = []
    cur = x
    for i, layer in enumerate(net.layers):
        if isinstance(layer, DwSepConv):
            cur = dwsep_conv2d(
                cur, layer.depthwise, layer.pointwise, layer.bias,
                stride=layer.stride, dilation=layer.dilation,
            )
        elif isinstance(layer, Downsample):
            c, h, w = cur.shape
            cur = cur.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))
        elif isinstance(layer, Upsample):
            cur = cur.repeat(2, axis=1).repeat(2, axis=2)
        elif isinstance(layer, SkipConcat):
            src = x if layer.source == -1 else outputs[layer.source]
            cur = np.concatenate([cur, src], axis=0)
        elif isinstance(layer, SigmoidHead):
            cur = _sigmoid(cur)
        outputs.append(cur)
    return outputs


def forward(net: NetSpec, x: np.ndarray) -> np.ndarray:
    """Full pass ending at the sigmoid head; returns a (H, W) map in (0, 1)."""
    if not net.layers or not isinstance(net.layers[-1], SigmoidHead):
        raise ValueError("network must end with a sigmoid head")
    out = _run(net, x)[-1]
    return out[0]


def bottleneck_vector(net: NetSpec, x: np.ndarray) -> np.ndarray:
    """Flattened activations at the flagged bottleneck layer."""
    if net.bottleneck_index is None:
        raise ValueError("no bottleneck layer flagged")
    return _run(net, x)[net.bottleneck_index].ravel().copy()


def init_weights(net: NetSpec, seed: int, scale: float = 0.1) -> NetSpec:
    """Fill every conv layer with seeded Gaussian weights (bias zero)."""
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        if isinstance(layer, DwSepConv):
            layer.depthwise = rng.normal(0, scale, (layer.in_channels, layer.kernel, layer.kernel))
            layer.pointwise = rng.normal(0, scale, (layer.out_channels, layer.in_channels))
            layer.bias = np.zeros(layer.out_channels)
    return net


def default_netspec(input_shape=(3, 32, 32), base: int = 4) -> NetSpec:
    """Small symmetric encoder-decoder with one skip connection."""
    c = input_shape[0]
    layers = [
        DwSepConv(c, base, 3),                       # 0: stem
        Downsample(),                                # 1
        DwSepConv(base, base * 2, 3, dilation=2),    # 2: bottleneck
        Upsample(),                                  # 3
        SkipConcat(0),                               # 4
        DwSepConv(base * 2 + base, 1, 3),            # 5: mask logits
        SigmoidHead(),                               # 6
    ]
    return NetSpec(input_shape=input_shape, layers=layers, bottleneck_index=2)


_LAYER_CODES = {DwSepConv: 1, Downsample: 2, Upsample: 3, SkipConcat: 4, SigmoidHead: 5}


def save_netspec(net: NetSpec, path) -> None:
    net.validate()
    blobs = []
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<3I", *net.input_shape))
        fh.write(struct.pack("<i", -1 if net.bottleneck_index is None else net.bottleneck_index))
        fh.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            code = _LAYER_CODES[type(layer)]
            if isinstance(layer, DwSepConv):
                fh.write(struct.pack(
                    "<B5i", code, layer.in_channels, layer.out_channels,
                    layer.kernel, layer.stride, layer.dilation,
                ))
                blobs.extend([layer.depthwise, layer.pointwise, layer.bias])
            elif isinstance(layer, SkipConcat):
                fh.write(struct.pack("<Bi", code, layer.source))
            else:
                fh.write(struct.pack("<B", code))
        weights = (
            np.concatenate([blob.ravel() for blob in blobs]).astype("<f4")
            if blobs else np.empty(0, dtype="<f4")
        )
        fh.write(struct.pack("<Q", weights.size))
        fh.write(weights.tobytes())


def load_netspec(path) -> NetSpec:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not a PNET file (bad magic)")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported PNET version {version}")
        input_shape = struct.unpack("<3I", fh.read(12))
        (bneck,) = struct.unpack("<i", fh.read(4))
        (n_layers,) = struct.unpack("<I", fh.read(4))
        layers = []
        for _ in range(n_layers):
            (code,) = struct.unpack("<B", fh.read(1))
            if code == 1:
                ic, oc, k, stride, dil = struct.unpack("<5i", fh.read(20))
                layers.append(DwSepConv(ic, oc, k, stride, dil))
            elif code == 2:
                layers.append(Downsample())
            elif code == 3:
                layers.append(Upsample())
            elif code == 4:
                (src,) = struct.unpack("<i", fh.read(4))
                layers.append(SkipConcat(src))
            elif code == 5:
                layers.append(SigmoidHead())
            else:
                raise ValueError(f"unknown layer code {code}")
        (n_weights,) = struct.unpack("<Q", fh.read(8))
        blob = np.frombuffer(fh.read(n_weights * 4), dtype="<f4").astype(np.float64)

    offset = 0
    for layer in layers:
        if isinstance(layer, DwSepConv):
            for attr, shape in (
                ("depthwise", (layer.in_channels, layer.kernel, layer.kernel)),
                ("pointwise", (layer.out_channels, layer.in_channels)),
                ("bias", (layer.out_channels,)),
            ):
                size = int(np.prod(shape))
                if offset + size > blob.size:
                    raise ValueError("weight blob too short for layer table")
                setattr(layer, attr, blob[offset : offset + size].reshape(shape))
                offset += size
    if offset != blob.size:
        raise ValueError("weight blob has trailing data")
    net = NetSpec(
        input_shape=tuple(int(v) for v in input_shape),
        layers=layers,
        bottleneck_index=None if bneck < 0 else bneck,
    )
    net.validate()
    return net
