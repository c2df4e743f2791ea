"""Speech-enhancement network: dilated CONV-MS blocks emitting a ratio mask."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tn
from .attention import MSParams, apply_ms, kaiming_uniform
from .tensor import Tensor


@dataclass(frozen=True)
class ConvSpec:
    kernel: tuple[int, int]
    channels: int
    dilation: tuple[int, int] = (1, 1)
    ms: bool = True


SE_LAYOUT = (
    ConvSpec((7, 1), 48, (1, 1)),
    ConvSpec((1, 7), 48, (1, 1)),
    ConvSpec((5, 5), 48, (1, 1)),
    ConvSpec((5, 5), 48, (1, 2)),
    ConvSpec((5, 5), 48, (1, 4)),
    ConvSpec((5, 5), 48, (1, 8)),
    ConvSpec((5, 5), 48, (1, 1)),
    ConvSpec((5, 5), 48, (2, 2)),
    ConvSpec((5, 5), 48, (4, 4)),
    ConvSpec((5, 5), 48, (8, 8)),
    ConvSpec((1, 1), 1, (1, 1)),
)


@dataclass(frozen=True)
class SENetConfig:
    blocks: tuple[ConvSpec, ...] = SE_LAYOUT

    def __post_init__(self):
        if len(self.blocks) != len(SE_LAYOUT):
            raise ValueError(f"SE-Net has {len(SE_LAYOUT)} blocks, config lists {len(self.blocks)}")
        for i, (got, ref) in enumerate(zip(self.blocks, SE_LAYOUT), 1):
            if tuple(got.kernel) != ref.kernel or tuple(got.dilation) != ref.dilation:
                raise ValueError(f"SE block {i}: kernel/dilation {got.kernel}/{got.dilation} "
                                 f"differ from {ref.kernel}/{ref.dilation}")
            if got.channels < 1:
                raise ValueError(f"SE block {i}: channel count must be positive")
        if self.blocks[-1].channels != 1:
            raise ValueError("the last SE block must emit a single channel")

    @classmethod
    def with_width(cls, width: int) -> "SENetConfig":
        return cls(tuple(b if i == len(SE_LAYOUT) - 1 else replace(b, channels=width)
                         for i, b in enumerate(SE_LAYOUT)))


def receptive_field(cfg: SENetConfig, axis: int, blocks: slice = slice(None)) -> int:
    """Receptive field (in frames or bins) of a stack of stride-1 blocks."""
    rf = 1
    for b in cfg.blocks[blocks]:
        rf += (b.kernel[axis] - 1) * b.dilation[axis]
    return rf


class SENet:
    def __init__(self, cfg: SENetConfig = SENetConfig(), ms_enabled: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.ms_enabled = ms_enabled
        self.kernels: list[Tensor] = []
        self.biases: list[Tensor] = []
        self.ms: list[MSParams | None] = []
        cin = 1
        for b in cfg.blocks:
            kT, kF = b.kernel
            fan_in = kT * kF * cin
            self.kernels.append(Tensor(kaiming_uniform(rng, (kT, kF, cin, b.channels), fan_in), requires_grad=True))
            self.biases.append(Tensor(np.zeros(b.channels), requires_grad=True))
            self.ms.append(MSParams.init(b.channels, rng) if ms_enabled and b.ms else None)
            cin = b.channels

    def named_parameters(self, prefix: str = "se") -> dict[str, Tensor]:
        out = {}
        for i, (k, b, ms) in enumerate(zip(self.kernels, self.biases, self.ms), 1):
            out[f"{prefix}.block{i:02d}.conv.kernel"] = k
            out[f"{prefix}.block{i:02d}.conv.bias"] = b
            if ms is not None:
                out.update(ms.named(f"{prefix}.block{i:02d}.ms"))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def forward_mask(self, x: Tensor, ms_enabled: bool | None = None) -> Tensor:
        """Ratio mask in [0, 1] with the shape of ``x`` ((N,) T, F, 1)."""
        use_ms = self.ms_enabled if ms_enabled is None else ms_enabled
        if use_ms and not self.ms_enabled:
            raise ValueError("this SE-Net was built without attention parameters")
        if x.shape[-1] != 1:
            raise ValueError(f"SE-Net expects a single-channel spectrogram, got {x.shape}")
        h = x
        last = len(self.cfg.blocks) - 1
        for i, b in enumerate(self.cfg.blocks):
            h = tn.conv2d(h, self.kernels[i], self.biases[i], dilation=b.dilation, padding="same")
            if use_ms and self.ms[i] is not None:
                h = apply_ms(h, self.ms[i])
            h = tn.sigmoid(h) if i == last else tn.relu(h)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        return enhance(x, self.forward_mask(x))


def enhance(x: Tensor, mask: Tensor) -> Tensor:
    if x.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} differs from spectrogram {x.shape}")
    return tn.mul(x, mask)
