"""Multi-stage attention: channel, then frequency, then time gating.

Each stage produces sigmoid gates that are broadcast-multiplied into the
feature map, so the block output keeps the input's shape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor

HIDDEN = 100
FREQ_KERNEL = (2, 7)
TIME_KERNEL = (7, 2)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ChannelAttentionParams:
    W0: Tensor
    b0: Tensor
    W1: Tensor

    @property
    def channels(self) -> int:
        return self.W0.shape[0]


@dataclass
class SpatialAttentionParams:
    freq_kernel: Tensor
    freq_bias: Tensor
    time_kernel: Tensor
    time_bias: Tensor


@dataclass
class MSParams:
    channel: ChannelAttentionParams
    spatial: SpatialAttentionParams

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator) -> "MSParams":
        fan_sp = 2 * 7 * 2
        return cls(
            ChannelAttentionParams(
                Tensor(kaiming_uniform(rng, (channels, HIDDEN), channels), requires_grad=True),
                Tensor(np.zeros((1, HIDDEN)), requires_grad=True),
                Tensor(kaiming_uniform(rng, (HIDDEN, channels), HIDDEN), requires_grad=True),
            ),
            SpatialAttentionParams(
                Tensor(kaiming_uniform(rng, FREQ_KERNEL + (2, 1), fan_sp), requires_grad=True),
                Tensor(np.zeros(1), requires_grad=True),
                Tensor(kaiming_uniform(rng, TIME_KERNEL + (2, 1), fan_sp), requires_grad=True),
                Tensor(np.zeros(1), requires_grad=True),
            ),
        )

    @classmethod
    def zeros(cls, channels: int) -> "MSParams":
        z = lambda *s: Tensor(np.zeros(s), requires_grad=True)  # noqa: E731
        return cls(
            ChannelAttentionParams(z(channels, HIDDEN), z(1, HIDDEN), z(HIDDEN, channels)),
            SpatialAttentionParams(z(*FREQ_KERNEL, 2, 1), z(1), z(*TIME_KERNEL, 2, 1), z(1)),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.channel.W0": self.channel.W0,
            f"{prefix}.channel.b0": self.channel.b0,
            f"{prefix}.channel.W1": self.channel.W1,
            f"{prefix}.freq.kernel": self.spatial.freq_kernel,
            f"{prefix}.freq.bias": self.spatial.freq_bias,
            f"{prefix}.time.kernel": self.spatial.time_kernel,
            f"{prefix}.time.bias": self.spatial.time_bias,
        }


def _lead_shape(h: Tensor) -> tuple[int, ...]:
    return h.shape[:-3]


def channel_attention(h: Tensor, p: ChannelAttentionParams) -> Tensor:
    """Per-channel gates of shape (..., 1, 1, C)."""
    c = h.shape[-1]
    if c != p.channels:
        raise ValueError(f"feature map has {c} channels, attention expects {p.channels}")
    lead = _lead_shape(h)

    def mlp(pooled):
        x = tn.reshape(pooled, (-1, c))
        return tn.matmul(tn.relu(tn.fully_connected(x, p.W0, p.b0)), p.W1)

    s_max = mlp(tn.pool_over(h, ("T", "F"), "max"))
    s_avg = mlp(tn.pool_over(h, ("T", "F"), "avg"))
    return tn.reshape(tn.sigmoid(tn.add(s_avg, s_max)), lead + (1, 1, c))


def _channel_pool(h: Tensor) -> Tensor:
    return tn.concat([tn.pool_over(h, "C", "avg"), tn.pool_over(h, "C", "max")], "C")


def frequency_attention(h: Tensor, p: SpatialAttentionParams) -> Tensor:
    """Per-bin gates of shape (..., 1, F, 1)."""
    if h.shape[-2] < FREQ_KERNEL[1]:
        raise ValueError(f"frequency extent {h.shape[-2]} is below the kernel width {FREQ_KERNEL[1]}")
    pooled = _channel_pool(h)
    stacked = tn.concat([tn.pool_over(pooled, "T", "avg"), tn.pool_over(pooled, "T", "max")], "T")
    logits = tn.conv2d(stacked, p.freq_kernel, p.freq_bias, padding=("valid", "same"))
    return tn.sigmoid(logits)


def time_attention(h: Tensor, p: SpatialAttentionParams) -> Tensor:
    """Per-frame gates of shape (..., T, 1, 1)."""
    if h.shape[-3] < TIME_KERNEL[0]:
        raise ValueError(f"time extent {h.shape[-3]} is below the kernel height {TIME_KERNEL[0]}")
    pooled = _channel_pool(h)
    stacked = tn.concat([tn.pool_over(pooled, "F", "avg"), tn.pool_over(pooled, "F", "max")], "F")
    logits = tn.conv2d(stacked, p.time_kernel, p.time_bias, padding=("same", "valid"))
    return tn.sigmoid(logits)


def apply_ms(h: Tensor, p: MSParams, return_maps: bool = False):
    h1 = tn.mul_broadcast(h, a_c := channel_attention(h, p.channel))
    h2 = tn.mul_broadcast(h1, a_f := frequency_attention(h1, p.spatial))
    h3 = tn.mul_broadcast(h2, a_t := time_attention(h2, p.spatial))
    if return_maps:
        return h3, (a_c, a_f, a_t)
    return h3
