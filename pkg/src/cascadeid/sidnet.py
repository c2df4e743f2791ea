"""Speaker network: residual RES-MS blocks, time pooling and two FC layers."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tn
from .attention import MSParams, apply_ms, kaiming_uniform
from .tensor import Tensor, conv_output_extent


@dataclass(frozen=True)
class ResBlockSpec:
    channels: tuple[int, ...]
    stride: int = 1
    ms: bool = True


# Blocks 4 and 8 print a trailing 3x3x128 conv; the default widens it so the
# pooled map has the printed 512 channels. SID_LAYOUT_LITERAL keeps the 128.
SID_LAYOUT = (
    ResBlockSpec((64, 64, 64), 2),
    ResBlockSpec((128, 128, 128), 2),
    ResBlockSpec((128, 128), 1),
    ResBlockSpec((256, 256, 256), 2),
    ResBlockSpec((256, 256), 1),
    ResBlockSpec((256, 256), 1),
    ResBlockSpec((256, 256), 1),
    ResBlockSpec((512, 512, 512), 2),
)
SID_LAYOUT_LITERAL = SID_LAYOUT[:3] + (ResBlockSpec((256, 256, 128), 2),) + SID_LAYOUT[4:7] + (ResBlockSpec((512, 512, 128), 2),)

SID_SHAPE_TRACE = ((150, 129), (75, 65), (75, 65), (38, 33), (38, 33), (38, 33), (38, 33), (19, 17))


@dataclass(frozen=True)
class SIDNetConfig:
    blocks: tuple[ResBlockSpec, ...] = SID_LAYOUT
    input_shape: tuple[int, int] = (300, 257)
    embedding_dim: int = 512
    num_speakers: int = 1251
    kernel: tuple[int, int] = (3, 3)

    def __post_init__(self):
        if len(self.blocks) != len(SID_LAYOUT):
            raise ValueError(f"SID-Net has {len(SID_LAYOUT)} blocks, config lists {len(self.blocks)}")
        for i, (got, ref) in enumerate(zip(self.blocks, SID_LAYOUT), 1):
            if len(got.channels) != len(ref.channels):
                raise ValueError(f"SID block {i}: {len(got.channels)} convs, the reference layout lists {len(ref.channels)}")
            if got.stride not in (1, 2) or min(got.channels) < 1:
                raise ValueError(f"SID block {i}: invalid stride or width")
        if self.num_speakers < 1 or self.embedding_dim < 1:
            raise ValueError("num_speakers and embedding_dim must be positive")

    def block_shapes(self) -> list[tuple[int, int]]:
        t, f = self.input_shape
        out = []
        for b in self.blocks:
            t = conv_output_extent(t, self.kernel[0], b.stride, 1, "same")
            f = conv_output_extent(f, self.kernel[1], b.stride, 1, "same")
            out.append((t, f))
        return out

    def pooled_shape(self) -> tuple[int, int, int]:
        _, f = self.block_shapes()[-1]
        return 1, f, self.blocks[-1].channels[-1]

    @classmethod
    def scaled(cls, widths: tuple[int, ...], strides: tuple[int, ...] | None = None, **kw) -> "SIDNetConfig":
        """Reference SID structure with one width per block (and optional strides)."""
        strides = strides or tuple(b.stride for b in SID_LAYOUT)
        blocks = tuple(replace(b, channels=(w,) * len(b.channels), stride=s)
                       for b, w, s in zip(SID_LAYOUT, widths, strides))
        return cls(blocks, **kw)


@dataclass
class _Block:
    kernels: list[Tensor]
    biases: list[Tensor]
    proj_kernel: Tensor | None
    proj_bias: Tensor | None
    ms: MSParams | None
    stride: int = 1


class SIDNet:
    def __init__(self, cfg: SIDNetConfig = SIDNetConfig(), ms_enabled: bool = False,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.ms_enabled = ms_enabled
        self.blocks: list[_Block] = []
        kT, kF = cfg.kernel
        cin = 1
        for spec in cfg.blocks:
            kernels, biases = [], []
            c = cin
            for cout in spec.channels:
                kernels.append(Tensor(kaiming_uniform(rng, (kT, kF, c, cout), kT * kF * c), requires_grad=True))
                biases.append(Tensor(np.zeros(cout), requires_grad=True))
                c = cout
            needs_proj = spec.stride != 1 or cin != c
            self.blocks.append(_Block(
                kernels, biases,
                Tensor(kaiming_uniform(rng, (1, 1, cin, c), cin), requires_grad=True) if needs_proj else None,
                Tensor(np.zeros(c), requires_grad=True) if needs_proj else None,
                MSParams.init(c, rng) if ms_enabled and spec.ms else None,
                spec.stride,
            ))
            cin = c
        _, f, c = cfg.pooled_shape()
        self.fc_w = Tensor(kaiming_uniform(rng, (f * c, cfg.embedding_dim), f * c), requires_grad=True)
        self.fc_b = Tensor(np.zeros((1, cfg.embedding_dim)), requires_grad=True)
        self.cls_w = Tensor(kaiming_uniform(rng, (cfg.embedding_dim, cfg.num_speakers), cfg.embedding_dim),
                            requires_grad=True)
        self.cls_b = Tensor(np.zeros((1, cfg.num_speakers)), requires_grad=True)

    def named_parameters(self, prefix: str = "sid") -> dict[str, Tensor]:
        out = {}
        for i, blk in enumerate(self.blocks, 1):
            p = f"{prefix}.block{i}"
            for j, (k, b) in enumerate(zip(blk.kernels, blk.biases), 1):
                out[f"{p}.conv{j}.kernel"] = k
                out[f"{p}.conv{j}.bias"] = b
            if blk.proj_kernel is not None:
                out[f"{p}.proj.kernel"] = blk.proj_kernel
                out[f"{p}.proj.bias"] = blk.proj_bias
            if blk.ms is not None:
                out.update(blk.ms.named(f"{p}.ms"))
        out[f"{prefix}.fc.W"] = self.fc_w
        out[f"{prefix}.fc.b"] = self.fc_b
        out[f"{prefix}.cls.W"] = self.cls_w
        out[f"{prefix}.cls.b"] = self.cls_b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def block_forward(self, h: Tensor, blk: _Block, ms_enabled: bool) -> Tensor:
        x = h
        for j, (k, b) in enumerate(zip(blk.kernels, blk.biases)):
            h = tn.relu(tn.conv2d(h, k, b, stride=blk.stride if j == 0 else 1, padding="same"))
        if ms_enabled and blk.ms is not None:
            h = apply_ms(h, blk.ms)
        skip = x if blk.proj_kernel is None else tn.conv2d(x, blk.proj_kernel, blk.proj_bias,
                                                           stride=blk.stride, padding="same")
        return tn.relu(tn.add(h, skip))

    def features(self, s: Tensor, ms_enabled: bool | None = None, trace: list | None = None) -> Tensor:
        use_ms = self.ms_enabled if ms_enabled is None else ms_enabled
        if use_ms and not self.ms_enabled:
            raise ValueError("this SID-Net was built without attention parameters")
        expected = tuple(self.cfg.input_shape) + (1,)
        if tuple(s.shape[-3:]) != expected:
            raise ValueError(f"SID-Net expects input {expected}, got {s.shape}")
        h = s
        for blk in self.blocks:
            h = self.block_forward(h, blk, use_ms)
            if trace is not None:
                trace.append(h.shape[-3:])
        return h

    def extract_embedding(self, s: Tensor, ms_enabled: bool | None = None) -> Tensor:
        """Pre-classifier embedding, shape (rows, embedding_dim)."""
        h = tn.pool_over(self.features(s, ms_enabled), "T", "avg")
        flat = tn.reshape(h, (-1, h.shape[-2] * h.shape[-1]))
        return tn.fully_connected(flat, self.fc_w, self.fc_b)

    def forward_logits(self, s: Tensor, ms_enabled: bool | None = None) -> Tensor:
        return tn.fully_connected(self.extract_embedding(s, ms_enabled), self.cls_w, self.cls_b)

    __call__ = forward_logits


def cosine_similarity(a, b) -> float:
    a = np.asarray(getattr(a, "data", a), dtype=np.float64).reshape(-1)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
