"""Fully-convolutional policy/value network with hand-derived backprop.

Architecture: a shared trunk of 3x3 convolutions with dilations 1, 2, 3, 4
and ReLU, then two heads of two 3x3 convolutions each; the policy head
ends in one channel per action, the value head in a single channel. All
convolutions use replicate padding, so outputs keep the input's spatial
size and the network is translation-equivariant away from borders.

Convolutions run as im2col + GEMM over bands of image rows; the band
column block stays cache-resident between its build and its GEMM, which
is several times faster than materializing full-image columns on
memory-bound hosts. Column rows are laid out in (offset, channel) order.
The two head convolutions that read the trunk output are evaluated in one
stacked pass. Transient buffers are pooled per shape and tag; the pool
makes this module single-threaded by design.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import rng

_MAGIC = b"DKWEIGHT"
_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class WeightsError(ValueError):
    """Corrupt, truncated, or version-mismatched weights file."""


@dataclass
class ConvLayer:
    weight: np.ndarray  # (cout, cin, 3, 3)
    bias: np.ndarray    # (cout,)
    dilation: int


@dataclass
class NetworkParams:
    trunk: list[ConvLayer]
    policy: list[ConvLayer]
    value: list[ConvLayer]

    @property
    def dtype(self) -> np.dtype:
        return self.trunk[0].weight.dtype

    @property
    def in_channels(self) -> int:
        return self.trunk[0].weight.shape[1]

    @property
    def n_actions(self) -> int:
        return self.policy[-1].weight.shape[0]

    def groups(self):
        return (("trunk", self.trunk), ("policy", self.policy), ("value", self.value))

    def named_tensors(self):
        """(name, array) pairs in a fixed order; arrays are live views."""
        for group, layers in self.groups():
            for i, layer in enumerate(layers):
                yield f"{group}.{i}.weight", layer.weight
                yield f"{group}.{i}.bias", layer.bias

    def copy(self) -> "NetworkParams":
        def dup(layers):
            return [ConvLayer(l.weight.copy(), l.bias.copy(), l.dilation) for l in layers]

        return NetworkParams(dup(self.trunk), dup(self.policy), dup(self.value))


def init_networks(cfg, in_channels: int | None = None) -> NetworkParams:
    """He-initialized parameters, deterministic in cfg.seed.

    The input has cfg.image_channels color planes plus the binary rain
    mask plane unless `in_channels` overrides it.
    """
    in_ch = cfg.image_channels + 1 if in_channels is None else in_channels
    dtype = np.dtype(cfg.dtype)
    gen = rng.stream_rng(cfg.seed, rng.STREAM_INIT)

    def conv(cin, cout, dilation):
        std = np.sqrt(2.0 / (cin * 9))
        w = (gen.standard_normal((cout, cin, 3, 3)) * std).astype(dtype)
        return ConvLayer(weight=w, bias=np.zeros(cout, dtype=dtype), dilation=dilation)

    tc, hc = cfg.trunk_channels, cfg.head_channels
    trunk = [conv(in_ch, tc, 1), conv(tc, tc, 2), conv(tc, tc, 3), conv(tc, tc, 4)]
    policy = [conv(tc, hc, 1), conv(hc, cfg.n_actions, 1)]
    value = [conv(tc, hc, 1), conv(hc, 1, 1)]
    return NetworkParams(trunk=trunk, policy=policy, value=value)


_scratch_pool: dict[tuple, np.ndarray] = {}


def _scratch(shape: tuple, dtype, tag) -> np.ndarray:
    key = (shape, np.dtype(dtype).str, tag)
    buf = _scratch_pool.get(key)
    if buf is None:
        buf = np.empty(shape, dtype=dtype)
        _scratch_pool[key] = buf
    return buf


def clear_scratch() -> None:
    _scratch_pool.clear()


def _pad_edge(x: np.ndarray, d: int) -> np.ndarray:
    """Replicate-pad the two spatial axes into a pooled buffer."""
    cin, h, w = x.shape
    out = _scratch((cin, h + 2 * d, w + 2 * d), x.dtype, "pad")
    out[:, d : d + h, d : d + w] = x
    out[:, :d, d : d + w] = x[:, :1, :]
    out[:, d + h :, d : d + w] = x[:, -1:, :]
    out[:, :, :d] = out[:, :, d : d + 1]
    out[:, :, d + w :] = out[:, :, d + w - 1 : d + w]
    return out


def _band_rows(w: int) -> int:
    # Rows per processing band: the band's column block must stay cache
    # resident between the im2col fill and the GEMM that consumes it,
    # while keeping each GEMM wide enough to run efficiently.
    return max(4, 4096 // w)


def _band_cols(xp: np.ndarray, d: int, r0: int, r1: int, w: int, buf: np.ndarray) -> np.ndarray:
    """im2col columns of rows [r0, r1), one contiguous slab per offset."""
    cin = xp.shape[0]
    rows = r1 - r0
    blk = buf[:, : rows * w]
    k = 0
    for ky in range(3):
        for kx in range(3):
            np.copyto(
                blk[k * cin : (k + 1) * cin].reshape(cin, rows, w),
                xp[:, ky * d + r0 : ky * d + r1, kx * d : kx * d + w],
            )
            k += 1
    return blk


def _weight2d(layer: ConvLayer) -> np.ndarray:
    """(cout, 9*cin) weight matrix matching the im2col row order."""
    cout, cin = layer.weight.shape[:2]
    return np.ascontiguousarray(layer.weight.transpose(0, 2, 3, 1)).reshape(cout, 9 * cin)


def _conv_forward_stacked(x: np.ndarray, layers: list[ConvLayer]) -> list[np.ndarray]:
    """Banded im2col convolution of one input through layers that share its
    dilation; their GEMMs run stacked on each band's columns."""
    cin, h, w = x.shape
    d = layers[0].dilation
    couts = [l.weight.shape[0] for l in layers]
    w2 = np.vstack([_weight2d(l) for l in layers])
    band = _band_rows(w)
    xp = _pad_edge(x, d)
    buf = _scratch((9 * cin, min(band, h) * w), x.dtype, "cols")
    y = np.empty((sum(couts), h * w), dtype=x.dtype)
    for r0 in range(0, h, band):
        r1 = min(r0 + band, h)
        np.matmul(w2, _band_cols(xp, d, r0, r1, w, buf), out=y[:, r0 * w : r1 * w])
    outs = []
    at = 0
    for layer, cout in zip(layers, couts):
        part = y[at : at + cout] + layer.bias[:, None]
        outs.append(part.reshape(cout, h, w))
        at += cout
    return outs


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """3x3 dilated convolution with replicate padding; (cin,h,w) -> (cout,h,w)."""
    return _conv_forward_stacked(x, [layer])[0]


def _unpad_edge(g: np.ndarray, d: int) -> np.ndarray:
    """Adjoint of replicate padding: fold padded-border gradients inward."""
    g[:, d, :] += g[:, :d, :].sum(axis=1)
    g[:, -d - 1, :] += g[:, -d:, :].sum(axis=1)
    core = g[:, d:-d, :]
    core[:, :, d] += core[:, :, :d].sum(axis=2)
    core[:, :, -d - 1] += core[:, :, -d:].sum(axis=2)
    return core[:, :, d:-d].copy()


def _conv_backward_stacked(dys: list[np.ndarray], x: np.ndarray, layers: list[ConvLayer]):
    """Banded gradients for layers sharing an input and dilation.

    Returns (dx, [(dweight, dbias), ...]) with dx already summed over the
    stacked layers.
    """
    cin, h, w = x.shape
    d = layers[0].dilation
    couts = [l.weight.shape[0] for l in layers]
    total = sum(couts)
    w2 = np.vstack([_weight2d(l) for l in layers])
    dy2 = np.concatenate([dy.reshape(c, h * w) for dy, c in zip(dys, couts)], axis=0)

    band = _band_rows(w)
    xp = _pad_edge(x, d)
    buf = _scratch((9 * cin, min(band, h) * w), x.dtype, "cols")
    dcols_buf = _scratch((9 * cin, min(band, h) * w), x.dtype, "dcols")
    dw2 = np.zeros((total, 9 * cin), dtype=x.dtype)
    dxp = _scratch((cin, h + 2 * d, w + 2 * d), x.dtype, "dxp")
    dxp.fill(0)
    for r0 in range(0, h, band):
        r1 = min(r0 + band, h)
        dy_band = dy2[:, r0 * w : r1 * w]
        cols = _band_cols(xp, d, r0, r1, w, buf)
        dw2 += dy_band @ cols.T
        dcols = dcols_buf[:, : (r1 - r0) * w]
        np.matmul(w2.T, dy_band, out=dcols)
        k = 0
        for ky in range(3):
            for kx in range(3):
                dxp[:, ky * d + r0 : ky * d + r1, kx * d : kx * d + w] += dcols[
                    k * cin : (k + 1) * cin
                ].reshape(cin, r1 - r0, w)
                k += 1

    grads = []
    at = 0
    for dy, layer, cout in zip(dys, layers, couts):
        part = dw2[at : at + cout]
        dweight = np.ascontiguousarray(part.reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2))
        dbias = dy.reshape(cout, h * w).sum(axis=1)
        grads.append((dweight, dbias))
        at += cout
    return _unpad_edge(dxp, d), grads


def conv_backward(dy: np.ndarray, x: np.ndarray, layer: ConvLayer):
    """Gradients (dx, dweight, dbias) of a conv_forward call."""
    dx, grads = _conv_backward_stacked([dy], x, [layer])
    return dx, grads[0][0], grads[0][1]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over axis 0 of (A, H, W) logits."""
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    zs = z - z.max(axis=0, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=0, keepdims=True))


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one forward evaluation."""

    x: np.ndarray
    trunk_pre: list[np.ndarray]
    trunk_act: list[np.ndarray]
    policy_pre: np.ndarray
    policy_act: np.ndarray
    logits: np.ndarray           # (A, H, W)
    value_pre: np.ndarray | None
    value_act: np.ndarray | None
    value: np.ndarray | None     # (H, W)


def forward_full(params: NetworkParams, x: np.ndarray, want_value: bool = True) -> ForwardCache:
    h = x
    trunk_pre, trunk_act = [], []
    for layer in params.trunk:
        z = conv_forward(h, layer)
        h = relu(z)
        trunk_pre.append(z)
        trunk_act.append(h)
    value_pre = value_act = value = None
    if want_value:
        # Both heads read the trunk output with dilation 1: one stacked pass.
        zp, zv = _conv_forward_stacked(h, [params.policy[0], params.value[0]])
        av = relu(zv)
        value = conv_forward(av, params.value[1])[0]
        value_pre, value_act = zv, av
    else:
        zp = conv_forward(h, params.policy[0])
    ap = relu(zp)
    logits = conv_forward(ap, params.policy[1])
    return ForwardCache(
        x=x,
        trunk_pre=trunk_pre,
        trunk_act=trunk_act,
        policy_pre=zp,
        policy_act=ap,
        logits=logits,
        value_pre=value_pre,
        value_act=value_act,
        value=value,
    )


def backward_full(
    params: NetworkParams, cache: ForwardCache, dlogits: np.ndarray, dvalue: np.ndarray | None
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its logits/value gradients."""
    grads: dict[str, np.ndarray] = {}

    dx, grads["policy.1.weight"], grads["policy.1.bias"] = conv_backward(
        dlogits, cache.policy_act, params.policy[1]
    )
    dzp = dx * (cache.policy_pre > 0)

    if dvalue is not None:
        dxv, grads["value.1.weight"], grads["value.1.bias"] = conv_backward(
            dvalue[None], cache.value_act, params.value[1]
        )
        dzv = dxv * (cache.value_pre > 0)
        d_trunk, head_grads = _conv_backward_stacked(
            [dzp, dzv], cache.trunk_act[-1], [params.policy[0], params.value[0]]
        )
        (grads["policy.0.weight"], grads["policy.0.bias"]) = head_grads[0]
        (grads["value.0.weight"], grads["value.0.bias"]) = head_grads[1]
    else:
        d_trunk, grads["policy.0.weight"], grads["policy.0.bias"] = conv_backward(
            dzp, cache.trunk_act[-1], params.policy[0]
        )
        for i in range(2):
            grads[f"value.{i}.weight"] = np.zeros_like(params.value[i].weight)
            grads[f"value.{i}.bias"] = np.zeros_like(params.value[i].bias)

    for i in range(len(params.trunk) - 1, -1, -1):
        dz = d_trunk * (cache.trunk_pre[i] > 0)
        source = cache.trunk_act[i - 1] if i > 0 else cache.x
        d_trunk, grads[f"trunk.{i}.weight"], grads[f"trunk.{i}.bias"] = conv_backward(
            dz, source, params.trunk[i]
        )
    return grads


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip_norm: float = 40.0,
) -> None:
    """In-place Adam step with global-norm gradient clipping."""
    total = 0.0
    for name, _tensor in params.named_tensors():
        g = grads[name]
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
        total += float(np.sum(g.astype(np.float64) ** 2))
    gnorm = float(np.sqrt(total))
    scale = clip_norm / gnorm if gnorm > clip_norm else 1.0

    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, tensor in params.named_tensors():
        g = grads[name] * np.asarray(scale, dtype=tensor.dtype)
        m = state.m.setdefault(name, np.zeros_like(tensor))
        v = state.v.setdefault(name, np.zeros_like(tensor))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        tensor -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


def save_params(params: NetworkParams, path) -> None:
    """Versioned binary weights: header, per-layer dims, 64-bit LE data."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        counts = [len(params.trunk), len(params.policy), len(params.value)]
        fh.write(struct.pack("<IBBBB", _VERSION, _DTYPE_CODES[params.dtype], *counts))
        for _group, layers in params.groups():
            for layer in layers:
                fh.write(struct.pack("<B", layer.dilation))
        for name, tensor in params.named_tensors():
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(tensor.astype("<f8").tobytes())


def load_params(path) -> NetworkParams:
    with open(path, "rb") as fh:
        data = fh.read()

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise WeightsError(f"{path}: truncated while reading {what}")
        out = data[pos : pos + n]
        pos += n
        return out

    pos = 0
    if take(len(_MAGIC), "magic") != _MAGIC:
        raise WeightsError(f"{path}: not a weights file (bad magic)")
    version, dtype_code, n_trunk, n_policy, n_value = struct.unpack("<IBBBB", take(8, "header"))
    if version != _VERSION:
        raise WeightsError(f"{path}: unsupported weights version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise WeightsError(f"{path}: unknown dtype code {dtype_code}")
    dtype = _CODE_DTYPES[dtype_code]
    n_layers = n_trunk + n_policy + n_value
    dilations = list(struct.unpack(f"<{n_layers}B", take(n_layers, "dilations")))

    tensors: dict[str, np.ndarray] = {}
    for _ in range(2 * n_layers):
        (name_len,) = struct.unpack("<H", take(2, "tensor name length"))
        name = take(name_len, "tensor name").decode()
        (ndim,) = struct.unpack("<B", take(1, "tensor rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "tensor shape"))
        count = int(np.prod(shape, dtype=np.int64))
        raw = take(8 * count, f"tensor {name} data")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(dtype)
    if pos != len(data):
        raise WeightsError(f"{path}: {len(data) - pos} trailing bytes")

    def build(group, count, dil_offset):
        layers = []
        for i in range(count):
            try:
                w = tensors[f"{group}.{i}.weight"]
                b = tensors[f"{group}.{i}.bias"]
            except KeyError as exc:
                raise WeightsError(f"{path}: missing tensor {exc}") from exc
            layers.append(ConvLayer(weight=w, bias=b, dilation=dilations[dil_offset + i]))
        return layers

    return NetworkParams(
        trunk=build("trunk", n_trunk, 0),
        policy=build("policy", n_policy, n_trunk),
        value=build("value", n_value, n_trunk + n_policy),
    )
