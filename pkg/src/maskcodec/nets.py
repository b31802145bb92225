"""Deterministic numpy forward passes for the convolutional/LSTM encoder and
the attention + ConvNeXt decoder backbone, plus the weights container.

Inference only: dropout is disabled and normalization is plain per-frame
layer normalization. All arithmetic runs in float64; weights are stored
float32.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .dsp import AudioBuffer, StftConfig, head_to_spectrum, istft
from .errors import ConfigError, DataError, ShapeError, FormatError, WeightsError

__all__ = [
    "EncoderConfig",
    "DecoderConfig",
    "WeightsBundle",
    "conv1d_forward",
    "lstm_layer_forward",
    "recurrent_forward",
    "encoder_forward",
    "convnext_block_forward",
    "attention_block_forward",
    "decoder_forward",
    "weight_manifest",
    "init_random_weights",
    "save_weights",
    "load_weights",
]

WEIGHTS_MAGIC = b"LCWT"
WEIGHTS_VERSION = 1

_DEBUG = os.environ.get("MASKCODEC_DEBUG", "") not in ("", "0")


@dataclass(frozen=True)
class EncoderConfig:
    base_channels: int = 32
    strides: tuple = (2, 4, 5, 8)
    out_dim: int = 512
    sample_rate: int = 24_000

    def __post_init__(self):
        if self.base_channels < 1 or self.out_dim < 1:
            raise ConfigError("channel counts must be positive")
        if any(s < 1 for s in self.strides):
            raise ConfigError("strides must be positive")

    @property
    def n_blocks(self) -> int:
        return len(self.strides)

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.strides))

    @property
    def lstm_dim(self) -> int:
        # channels double at every down-sampling block
        return self.base_channels * 2**self.n_blocks


@dataclass(frozen=True)
class DecoderConfig:
    in_dim: int = 512
    hidden_dim: int = 512
    intermediate_dim: int = 1536
    n_convnext_blocks: int = 8
    n_heads: int = 8
    n_fft: int = 1280

    def __post_init__(self):
        if self.hidden_dim % self.n_heads != 0:
            raise ConfigError("hidden_dim must be divisible by n_heads")
        if self.n_fft % 2 != 0 or self.n_fft < 4:
            raise ConfigError("n_fft must be even and >= 4")

    @property
    def head_width(self) -> int:
        return self.n_fft + 2


class WeightsBundle:
    """Immutable name -> float32 array lookup with shape checking."""

    def __init__(self, tensors: dict):
        self._tensors = {
            name: np.ascontiguousarray(arr, dtype=np.float32)
            for name, arr in tensors.items()
        }
        for name, arr in self._tensors.items():
            if not np.all(np.isfinite(arr)):
                raise DataError(f"weight {name!r} contains non-finite values")

    def get(self, name: str, shape: tuple) -> np.ndarray:
        if name not in self._tensors:
            raise WeightsError(f"missing weight {name!r}")
        arr = self._tensors[name]
        if arr.shape != tuple(shape):
            raise WeightsError(
                f"weight {name!r} has shape {arr.shape}, expected {tuple(shape)}"
            )
        return arr.astype(np.float64)

    def names(self):
        return sorted(self._tensors)

    def __contains__(self, name):
        return name in self._tensors

    def __eq__(self, other):
        return isinstance(other, WeightsBundle) and self.names() == other.names() and all(
            np.array_equal(self._tensors[n], other._tensors[n]) for n in self.names()
        )


def _finite(x, where):
    if _DEBUG and not np.all(np.isfinite(x)):
        raise DataError(f"non-finite activations after {where}")
    return x


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _gelu(x):
    from scipy.special import erf

    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _silu(x):
    return x * _sigmoid(x)


def _layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def conv1d_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> np.ndarray:
    """Cross-correlation convolution over (channels, time) input.

    weight is (out_channels, in_channels/groups, kernel); output time is
    floor((time + 2*padding - dilation*(kernel-1) - 1)/stride) + 1.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 2 or weight.ndim != 3:
        raise ShapeError("conv1d expects x (C, T) and weight (O, C/g, K)")
    c_in, t_in = x.shape
    c_out, c_in_g, kernel = weight.shape
    if c_in % groups or c_out % groups or c_in_g != c_in // groups:
        raise ShapeError(
            f"incompatible conv shapes: x {x.shape}, w {weight.shape}, "
            f"groups {groups}"
        )
    t_out = (t_in + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1
    if t_out < 1:
        raise ShapeError("conv output would be empty")
    xp = np.pad(x, ((0, 0), (padding, padding)))
    gather = (np.arange(t_out) * stride)[:, None] + np.arange(kernel) * dilation
    xw = xp[:, gather]  # (C_in, T_out, K)
    out = np.empty((c_out, t_out))
    og = c_out // groups
    for g in range(groups):
        out[g * og : (g + 1) * og] = np.einsum(
            "ctk,ock->ot",
            xw[g * c_in_g : (g + 1) * c_in_g],
            weight[g * og : (g + 1) * og],
            optimize=True,
        )
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None]
    return out


def lstm_layer_forward(x, w_ih, w_hh, b_ih, b_hh):
    """Single LSTM layer over (time, in_dim) input, zero initial state.

    Gate blocks in w_* rows are ordered input, forget, cell, output.
    """
    x = np.asarray(x, dtype=np.float64)
    hidden = w_hh.shape[1]
    if w_ih.shape != (4 * hidden, x.shape[1]) or w_hh.shape != (4 * hidden, hidden):
        raise ShapeError("LSTM weight shapes do not match input")
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    pre_in = x @ w_ih.T + b_ih + b_hh
    out = np.empty((x.shape[0], hidden))
    for t in range(x.shape[0]):
        gates = pre_in[t] + h @ w_hh.T
        i = _sigmoid(gates[:hidden])
        f = _sigmoid(gates[hidden : 2 * hidden])
        g = np.tanh(gates[2 * hidden : 3 * hidden])
        o = _sigmoid(gates[3 * hidden :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def recurrent_forward(x: np.ndarray, w: WeightsBundle, prefix: str = "encoder.lstm") -> np.ndarray:
    """Two stacked LSTM layers, (time, channels) -> (time, channels)."""
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[1]
    for layer in range(2):
        p = f"{prefix}.{layer}"
        x = lstm_layer_forward(
            x,
            w.get(f"{p}.w_ih", (4 * dim, dim)),
            w.get(f"{p}.w_hh", (4 * dim, dim)),
            w.get(f"{p}.b_ih", (4 * dim,)),
            w.get(f"{p}.b_hh", (4 * dim,)),
        )
    return x


def encoder_forward(
    audio: AudioBuffer, w: WeightsBundle, cfg: EncoderConfig = EncoderConfig()
) -> np.ndarray:
    """Waveform -> (frames, out_dim) latents; frames = samples / total stride."""
    if audio.sample_rate != cfg.sample_rate:
        raise ConfigError(
            f"encoder requires {cfg.sample_rate} Hz input, got {audio.sample_rate}"
        )
    c = cfg.base_channels
    h = conv1d_forward(
        audio.samples[None, :],
        w.get("encoder.conv_in.weight", (c, 1, 7)),
        w.get("encoder.conv_in.bias", (c,)),
        padding=3,
    )
    for b, s in enumerate(cfg.strides):
        ch = c * 2**b
        p = f"encoder.block{b}"
        y = conv1d_forward(
            _elu(h),
            w.get(f"{p}.res.conv1.weight", (ch, ch, 3)),
            w.get(f"{p}.res.conv1.bias", (ch,)),
            padding=1,
        )
        y = conv1d_forward(
            _elu(y),
            w.get(f"{p}.res.conv2.weight", (ch, ch, 3)),
            w.get(f"{p}.res.conv2.bias", (ch,)),
            padding=1,
        )
        h = h + y
        h = conv1d_forward(
            _elu(h),
            w.get(f"{p}.down.weight", (2 * ch, ch, 2 * s)),
            w.get(f"{p}.down.bias", (2 * ch,)),
            stride=s,
            padding=(s + 1) // 2,
        )
        _finite(h, p)
    seq = recurrent_forward(h.T, w)
    out = conv1d_forward(
        _elu(seq.T),
        w.get("encoder.conv_out.weight", (cfg.out_dim, cfg.lstm_dim, 7)),
        w.get("encoder.conv_out.bias", (cfg.out_dim,)),
        padding=3,
    )
    if not np.all(np.isfinite(out)):
        raise DataError("encoder produced non-finite latents")
    return out.T.astype(np.float32)


def convnext_block_forward(x: np.ndarray, w: WeightsBundle, prefix: str) -> np.ndarray:
    """Depthwise conv7 -> layer norm -> pointwise expand -> GELU -> pointwise
    project -> residual; (time, hidden) in and out."""
    x = np.asarray(x, dtype=np.float64)
    hidden = x.shape[1]
    y = conv1d_forward(
        x.T,
        w.get(f"{prefix}.dw.weight", (hidden, 1, 7)),
        w.get(f"{prefix}.dw.bias", (hidden,)),
        padding=3,
        groups=hidden,
    ).T
    y = _layer_norm(
        y,
        w.get(f"{prefix}.norm.gamma", (hidden,)),
        w.get(f"{prefix}.norm.beta", (hidden,)),
    )
    # expansion width comes from the stored weight shape
    name = f"{prefix}.pw1.weight"
    if name not in w:
        raise WeightsError(f"missing weight {name!r}")
    inter = w._tensors[name].shape[0]
    y = y @ w.get(name, (inter, hidden)).T + w.get(f"{prefix}.pw1.bias", (inter,))
    y = _gelu(y)
    y = y @ w.get(f"{prefix}.pw2.weight", (hidden, inter)).T + w.get(
        f"{prefix}.pw2.bias", (hidden,)
    )
    return x + y


def attention_block_forward(
    x: np.ndarray, w: WeightsBundle, n_heads: int = 8, prefix: str = "decoder.attn"
) -> np.ndarray:
    """Conv ResBlock followed by multi-head self-attention, both residual.

    ResBlock: norm -> sigmoid-weighted activation -> conv3 -> norm ->
    activation -> conv3 -> + input (dropout disabled at inference).
    Attention: Q/K/V from 1x1 convs, scaled dot-product over time (full,
    non-causal), 1x1 output conv, + input.
    """
    x = np.asarray(x, dtype=np.float64)
    hidden = x.shape[1]
    if hidden % n_heads != 0:
        raise ShapeError(f"hidden {hidden} not divisible by {n_heads} heads")
    p = f"{prefix}.res"
    y = _layer_norm(
        x, w.get(f"{p}.norm1.gamma", (hidden,)), w.get(f"{p}.norm1.beta", (hidden,))
    )
    y = conv1d_forward(
        _silu(y).T,
        w.get(f"{p}.conv1.weight", (hidden, hidden, 3)),
        w.get(f"{p}.conv1.bias", (hidden,)),
        padding=1,
    ).T
    y = _layer_norm(
        y, w.get(f"{p}.norm2.gamma", (hidden,)), w.get(f"{p}.norm2.beta", (hidden,))
    )
    y = conv1d_forward(
        _silu(y).T,
        w.get(f"{p}.conv2.weight", (hidden, hidden, 3)),
        w.get(f"{p}.conv2.bias", (hidden,)),
        padding=1,
    ).T
    x = x + y

    def proj(name):
        return (
            conv1d_forward(
                x.T,
                w.get(f"{prefix}.{name}.weight", (hidden, hidden, 1)),
                w.get(f"{prefix}.{name}.bias", (hidden,)),
            ).T
        )

    t = x.shape[0]
    hd = hidden // n_heads
    q = proj("q").reshape(t, n_heads, hd)
    k = proj("k").reshape(t, n_heads, hd)
    v = proj("v").reshape(t, n_heads, hd)
    scores = np.einsum("qhd,khd->hqk", q, k, optimize=True) / np.sqrt(hd)
    attn = _softmax(scores, axis=-1)
    ctx = np.einsum("hqk,khd->qhd", attn, v, optimize=True).reshape(t, hidden)
    out = conv1d_forward(
        ctx.T,
        w.get(f"{prefix}.out.weight", (hidden, hidden, 1)),
        w.get(f"{prefix}.out.bias", (hidden,)),
    ).T
    return x + out


def decoder_forward(
    zq: np.ndarray,
    w: WeightsBundle,
    cfg: DecoderConfig = DecoderConfig(),
    stft_cfg: StftConfig = None,
    sample_rate: int = 24_000,
) -> AudioBuffer:
    """Quantized latents (frames, in_dim) -> waveform via the spectral head.

    Output length is frames * hop; time resolution is constant through every
    block, the upsampling happens entirely in the inverse STFT.
    """
    if stft_cfg is None:
        stft_cfg = StftConfig(n_fft=cfg.n_fft)
    if stft_cfg.n_fft != cfg.n_fft:
        raise ConfigError(
            f"decoder n_fft {cfg.n_fft} != stft config n_fft {stft_cfg.n_fft}"
        )
    zq = np.asarray(zq, dtype=np.float64)
    if zq.ndim != 2 or zq.shape[1] != cfg.in_dim:
        raise ShapeError(f"latents must be (frames, {cfg.in_dim}), got {zq.shape}")
    hid = cfg.hidden_dim
    x = conv1d_forward(
        zq.T,
        w.get("decoder.embed.weight", (hid, cfg.in_dim, 7)),
        w.get("decoder.embed.bias", (hid,)),
        padding=3,
    ).T
    x = attention_block_forward(x, w, cfg.n_heads)
    for i in range(cfg.n_convnext_blocks):
        x = _finite(convnext_block_forward(x, w, f"decoder.convnext{i}"), f"convnext{i}")
    x = _layer_norm(
        x,
        w.get("decoder.final_norm.gamma", (hid,)),
        w.get("decoder.final_norm.beta", (hid,)),
    )
    h = x @ w.get("decoder.head.weight", (cfg.head_width, hid)).T + w.get(
        "decoder.head.bias", (cfg.head_width,)
    )
    audio = istft(head_to_spectrum(h), stft_cfg, sample_rate=sample_rate)
    if not np.all(np.isfinite(audio.samples)):
        raise DataError("decoder produced non-finite audio")
    return audio


def weight_manifest(
    enc: EncoderConfig = EncoderConfig(), dec: DecoderConfig = DecoderConfig()
) -> list:
    """Ordered (name, shape) pairs required by the configured architecture."""
    names = [
        ("encoder.conv_in.weight", (enc.base_channels, 1, 7)),
        ("encoder.conv_in.bias", (enc.base_channels,)),
    ]
    for b, s in enumerate(enc.strides):
        ch = enc.base_channels * 2**b
        p = f"encoder.block{b}"
        names += [
            (f"{p}.res.conv1.weight", (ch, ch, 3)),
            (f"{p}.res.conv1.bias", (ch,)),
            (f"{p}.res.conv2.weight", (ch, ch, 3)),
            (f"{p}.res.conv2.bias", (ch,)),
            (f"{p}.down.weight", (2 * ch, ch, 2 * s)),
            (f"{p}.down.bias", (2 * ch,)),
        ]
    ld = enc.lstm_dim
    for layer in range(2):
        p = f"encoder.lstm.{layer}"
        names += [
            (f"{p}.w_ih", (4 * ld, ld)),
            (f"{p}.w_hh", (4 * ld, ld)),
            (f"{p}.b_ih", (4 * ld,)),
            (f"{p}.b_hh", (4 * ld,)),
        ]
    names += [
        ("encoder.conv_out.weight", (enc.out_dim, ld, 7)),
        ("encoder.conv_out.bias", (enc.out_dim,)),
    ]
    hid, inter = dec.hidden_dim, dec.intermediate_dim
    names += [
        ("decoder.embed.weight", (hid, dec.in_dim, 7)),
        ("decoder.embed.bias", (hid,)),
    ]
    for norm in ("norm1", "norm2"):
        names += [
            (f"decoder.attn.res.{norm}.gamma", (hid,)),
            (f"decoder.attn.res.{norm}.beta", (hid,)),
        ]
    for conv in ("conv1", "conv2"):
        names += [
            (f"decoder.attn.res.{conv}.weight", (hid, hid, 3)),
            (f"decoder.attn.res.{conv}.bias", (hid,)),
        ]
    for proj in ("q", "k", "v", "out"):
        names += [
            (f"decoder.attn.{proj}.weight", (hid, hid, 1)),
            (f"decoder.attn.{proj}.bias", (hid,)),
        ]
    for i in range(dec.n_convnext_blocks):
        p = f"decoder.convnext{i}"
        names += [
            (f"{p}.dw.weight", (hid, 1, 7)),
            (f"{p}.dw.bias", (hid,)),
            (f"{p}.norm.gamma", (hid,)),
            (f"{p}.norm.beta", (hid,)),
            (f"{p}.pw1.weight", (inter, hid)),
            (f"{p}.pw1.bias", (inter,)),
            (f"{p}.pw2.weight", (hid, inter)),
            (f"{p}.pw2.bias", (hid,)),
        ]
    names += [
        ("decoder.final_norm.gamma", (hid,)),
        ("decoder.final_norm.beta", (hid,)),
        ("decoder.head.weight", (dec.head_width, hid)),
        ("decoder.head.bias", (dec.head_width,)),
    ]
    return names


def init_random_weights(
    enc: EncoderConfig = EncoderConfig(),
    dec: DecoderConfig = DecoderConfig(),
    seed: int = 0,
) -> WeightsBundle:
    """Structurally valid random weights so end-to-end runs need no trainer.

    Normalization gains start at 1, biases at 0, everything else is normal
    with fan-in scaling. Outputs are audio-shaped but perceptually
    meaningless.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in weight_manifest(enc, dec):
        if name.endswith((".gamma",)):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith((".beta", ".bias", ".b_ih", ".b_hh")):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            tensors[name] = rng.normal(
                0.0, 1.0 / np.sqrt(max(fan_in, 1)), size=shape
            ).astype(np.float32)
    return WeightsBundle(tensors)


# --- weights container file ("LCWT") --------------------------------------

def save_weights(w: WeightsBundle) -> bytes:
    out = [
        WEIGHTS_MAGIC,
        struct.pack("<II", WEIGHTS_VERSION, len(w.names())),
    ]
    for name in w.names():
        arr = w._tensors[name]
        encoded = name.encode("utf-8")
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f4").tobytes())
    return b"".join(out)


def load_weights(blob: bytes) -> WeightsBundle:
    if len(blob) < 12 or blob[:4] != WEIGHTS_MAGIC:
        raise FormatError("not a weights file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weights file version {version}")
    pos = 12
    tensors = {}
    for _ in range(count):
        if pos + 2 > len(blob):
            raise DataError("truncated weights file")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        if pos + 4 * n > len(blob):
            raise DataError(f"truncated data for weight {name!r}")
        tensors[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(
            dims
        ).copy()
        pos += 4 * n
    return WeightsBundle(tensors)
