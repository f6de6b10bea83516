"""Full deblurring network: head, encoder, reversible decoder stack, tails, classifier."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch import Tensor, nn

from . import checkpoint
from .autodiff import freeze
from .backbone import BackboneConfig, Encoder, Head, Tail, crop, pad_to_multiple
from .decoder import DecoderStack
from .exit_policy import Classifier


@dataclass
class ModelConfig:
    base_channels: int = 8
    levels: int = 5
    encoder_blocks: list[int] = field(default_factory=lambda: [1, 1, 1, 1, 1])
    columns: int = 4
    num_classes: int = 6
    classifier_level: int = 4

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(self.base_channels, self.levels, list(self.encoder_blocks))

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k}={','.join(map(str, v)) if isinstance(v, list) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kinds = {f.name: f for f in fields(cls)}
        kw = {}
        for line in text.strip().splitlines():
            k, v = line.split("=", 1)
            kw[k] = [int(x) for x in v.split(",")] if k == "encoder_blocks" else int(v)
            if k not in kinds:
                raise ValueError(f"unknown model config key {k!r}")
        return cls(**kw)


class DeblurNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        bb = cfg.backbone()
        self.head = Head(bb.base_channels)
        self.enc = Encoder(bb)
        self.dec = DecoderStack(bb, cfg.columns)
        for j in range(1, cfg.columns + 1):
            self.add_module(f"tail{j}", Tail(bb.base_channels))
        self.cls = Classifier(bb.channels(cfg.classifier_level), cfg.num_classes)

    @property
    def columns(self) -> int:
        return self.cfg.columns

    def tail(self, j: int) -> Tail:
        return getattr(self, f"tail{j}")

    def encoder_parameters(self) -> list[nn.Parameter]:
        return list(self.head.parameters()) + list(self.enc.parameters())

    def decoder_parameters(self) -> list[nn.Parameter]:
        params = list(self.dec.parameters())
        for j in range(1, self.columns + 1):
            params += list(self.tail(j).parameters())
        return params

    def freeze_encoder(self, frozen: bool = True) -> None:
        freeze(self.head, frozen)
        freeze(self.enc, frozen)

    @torch.no_grad()
    def copy_tail(self, src: int = 1) -> None:
        """Copy tail ``src`` into every other tail.

        Used after the column-1 warm-up: fresh columns are identity maps, so
        every column then starts from the column-1 restoration.
        """
        state = self.tail(src).state_dict()
        for j in range(1, self.columns + 1):
            if j != src:
                self.tail(j).load_state_dict(state)

    def encode(self, blur: Tensor) -> list[Tensor]:
        return self.enc(self.head(blur))

    def restore_all(self, blur: Tensor, upto: int | None = None, reversible: bool = False) -> list[Tensor]:
        """Restorations of columns ``1..upto`` for a (b, 3, h, w) blur batch."""
        padded, size = pad_to_multiple(blur, self.enc.cfg.multiple)
        d1, _ = self.dec(self.encode(padded), upto, reversible=reversible)
        return [crop(self.tail(j).forward(d, padded), size) for j, d in enumerate(d1, 1)]

    def restore(self, blur: Tensor, exit_column: int | None = None) -> Tensor:
        """Restoration from column ``exit_column`` only (default: last)."""
        j = self.columns if exit_column is None else exit_column
        padded, size = pad_to_multiple(blur, self.enc.cfg.multiple)
        d1, _ = self.dec(self.encode(padded), j)
        return crop(self.tail(j).forward(d1[-1], padded), size)

    def classify_features(self, feats: list[Tensor]) -> Tensor:
        return self.cls(feats[self.cfg.classifier_level - 1])

    def classify(self, blur: Tensor) -> Tensor:
        padded, _ = pad_to_multiple(blur, self.enc.cfg.multiple)
        return self.classify_features(self.encode(padded))

    # checkpoint naming: head.*, enc.level{i}.*, dec{j}.level{i}.*, alpha.{j}.{i}, tail{j}.*, cls.*
    def export_tensors(self) -> dict[str, np.ndarray]:
        out = {"meta.config": np.frombuffer(self.cfg.to_text().encode("utf-8"), dtype=np.uint8)}
        for name, t in self.state_dict().items():
            out[_to_ckpt_name(name)] = t.detach().cpu().numpy()
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray], strict: bool = True) -> None:
        state = {}
        for name, arr in tensors.items():
            if name.startswith("meta."):
                continue
            state[_from_ckpt_name(name)] = torch.from_numpy(np.array(arr))
        self.load_state_dict(state, strict=strict)

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, self.export_tensors())

    @classmethod
    def load(cls, path: str | Path) -> "DeblurNet":
        tensors = checkpoint.load(path)
        if "meta.config" not in tensors:
            raise checkpoint.CheckpointError("checkpoint lacks meta.config")
        cfg = ModelConfig.from_text(tensors["meta.config"].tobytes().decode("utf-8"))
        model = cls(cfg)
        model.load_tensors(tensors)
        return model


def _to_ckpt_name(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "dec":
        parts = parts[1:]
        if parts[1].startswith("alpha"):
            return f"alpha.{parts[0][3:]}.{parts[1][5:]}"
    return ".".join(parts)


def _from_ckpt_name(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "alpha":
        return f"dec.dec{parts[1]}.alpha{parts[2]}"
    if parts[0].startswith("dec") and parts[0][3:].isdigit():
        return "dec." + name
    return name
