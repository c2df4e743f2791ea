"""Model variants: SE-Net (optional) cascaded into SID-Net."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .senet import SENet, SENetConfig
from .sidnet import SIDNet, SIDNetConfig
from .tensor import Tensor


@dataclass(frozen=True)
class VariantSpec:
    use_se: bool
    se_ms: bool
    sid_ms: bool
    final_regime: str

    @property
    def ms_placement(self) -> str:
        return {(False, False): "none", (True, False): "se", (False, True): "sid", (True, True): "both"}[
            (self.se_ms, self.sid_ms)]


VARIANTS = {
    "SID": VariantSpec(False, False, False, "pretrain-sid"),
    "SE+SID": VariantSpec(True, False, False, "joint"),
    "SE-MS+SID": VariantSpec(True, True, False, "joint"),
    "SE+SID-MS": VariantSpec(True, False, True, "joint"),
    "SE-MS+SID-MS": VariantSpec(True, True, True, "joint"),
    "frozen-sid": VariantSpec(True, False, False, "frozen-sid"),
}


def variant_spec(name: str) -> VariantSpec:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown model variant {name!r}; expected one of {sorted(VARIANTS)}") from None


class ModelBundle:
    """Parameters and forward paths for one named variant."""

    def __init__(self, variant: str, se_cfg: SENetConfig, sid_cfg: SIDNetConfig, seed: int = 0):
        self.variant = variant
        self.spec = variant_spec(variant)
        ss = np.random.SeedSequence(seed)
        se_seed, sid_seed = ss.spawn(2)
        self.se = SENet(se_cfg, self.spec.se_ms, np.random.default_rng(se_seed)) if self.spec.use_se else None
        self.sid = SIDNet(sid_cfg, self.spec.sid_ms, np.random.default_rng(sid_seed))

    def named_parameters(self, part: str | None = None) -> dict[str, Tensor]:
        out = {}
        if self.se is not None and part in (None, "se"):
            out.update(self.se.named_parameters("se"))
        if part in (None, "sid"):
            out.update(self.sid.named_parameters("sid"))
        return out

    def enhanced(self, x: Tensor) -> Tensor:
        return x if self.se is None else self.se(x)

    def logits(self, x: Tensor, enhance: bool = True) -> Tensor:
        return self.sid.forward_logits(self.enhanced(x) if enhance else x)

    def embedding(self, x: Tensor) -> Tensor:
        return self.sid.extract_embedding(self.enhanced(x))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters().items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(f"checkpoint does not fit variant {self.variant}: "
                             f"missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for k, p in params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arrays[k].shape} != model {p.shape}")
            p.data = np.array(arrays[k], dtype=p.data.dtype)

    def digest(self, part: str | None = None) -> str:
        h = hashlib.sha256()
        for k, p in self.named_parameters(part).items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def predict(fn, arrays: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Run ``fn`` over (n, T, F, 1) spectrograms without tracking gradients."""
    outs = []
    with tn.no_grad():
        for i in range(0, len(arrays), batch_size):
            outs.append(fn(Tensor(arrays[i : i + batch_size])).data)
    return np.concatenate(outs, axis=0)
