"""PAD classifiers, their losses, scoring and checkpoints.

Two networks are provided: an 18-layer residual network with a single
sigmoid output, and a pixel-wise binary supervision network built from the
first two dense blocks of DenseNet-121 that predicts a per-location
bona fide map plus a global score.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
import torchvision
from torch import nn

from .mixstyle import ARCHITECTURES, MixStyle, MixStyleConfig, insertion_points

EPS = 1e-7
SCORE_SOURCES = ("binary_head", "pixel_map_mean")
CHECKPOINT_FORMAT_VERSION = 1

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class PadModelConfig:
    architecture: str = "resnet18_binary"
    pretrained: bool = False
    score_source: Optional[str] = None  # None: binary_head for resnet, pixel_map_mean for pixbis
    mixstyle: Optional[MixStyleConfig] = None
    input_size: int = 224

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        source = self.score_source
        if source is None:
            source = "pixel_map_mean" if self.architecture == "pixbis" else "binary_head"
            object.__setattr__(self, "score_source", source)
        if source not in SCORE_SOURCES:
            raise ValueError(f"unknown score_source {source!r}")
        if source == "pixel_map_mean" and self.architecture != "pixbis":
            raise ValueError("score_source 'pixel_map_mean' requires architecture 'pixbis'")
        if isinstance(self.mixstyle, dict):
            object.__setattr__(self, "mixstyle", MixStyleConfig(**self.mixstyle))
        if self.architecture == "pixbis" and self.input_size % 16:
            raise ValueError("pixbis input_size must be a multiple of 16")
        if self.input_size < 32:
            raise ValueError("input_size must be at least 32")


class PadOutput(NamedTuple):
    score: torch.Tensor  # B, per score_source
    binary_score: torch.Tensor  # B, sigmoid of the binary head
    logit: torch.Tensor  # B
    pixel_map: Optional[torch.Tensor]  # B x h x w, or None
    features: torch.Tensor  # B x D, input of the binary head (pooled for pixbis)


@dataclass
class Prediction:
    score: float
    pixel_map: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = field(default=None, repr=False)


class PadModel(nn.Module):
    """Common plumbing: MixStyle layers keyed by insertion point."""

    feature_dim: int

    def __init__(self, cfg: PadModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.mix = nn.ModuleDict()
        if cfg.mixstyle is not None:
            points = cfg.mixstyle.insertion_points or insertion_points(cfg.architecture)
            valid = set(insertion_points(cfg.architecture)) | set(self._extra_points())
            for i, name in enumerate(points):
                if name not in valid:
                    raise ValueError(f"{cfg.architecture} has no insertion point {name!r}")
                # one independent weight stream per insertion point
                self.mix[name] = MixStyle(cfg.mixstyle, seed=seed * 1000 + i)

    def _extra_points(self) -> Sequence[str]:
        return ()

    def _maybe_mix(self, name, x):
        if name in self.mix:
            return self.mix[name](x)
        return x

    def set_domains(self, mask, mode: str = "da"):
        for layer in self.mix.values():
            layer.set_domains(mask, mode)

    def reseed_mixstyle(self, seed: int):
        for i, layer in enumerate(self.mix.values()):
            layer.reseed(seed * 1000 + i)


class ResNet18Binary(PadModel):
    feature_dim = 512

    def __init__(self, cfg: PadModelConfig, seed: int = 0):
        super().__init__(cfg, seed)
        weights = torchvision.models.ResNet18_Weights.DEFAULT if cfg.pretrained else None
        net = torchvision.models.resnet18(weights=weights)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(self.feature_dim, 1)

    def _extra_points(self):
        return ("layer3",)

    def forward(self, x) -> PadOutput:
        x = self.stem(x)
        x = self._maybe_mix("layer1", self.layer1(x))
        x = self._maybe_mix("layer2", self.layer2(x))
        x = self._maybe_mix("layer3", self.layer3(x))
        x = self.layer4(x)
        feats = torch.flatten(self.pool(x), 1)
        logit = self.fc(feats).squeeze(1)
        prob = torch.sigmoid(logit)
        return PadOutput(prob, prob, logit, None, feats)


class PixBis(PadModel):
    """DenseNet-121 trunk up to the second transition, 1x1 conv map, linear binary head."""

    feature_dim = 256

    def __init__(self, cfg: PadModelConfig, seed: int = 0):
        super().__init__(cfg, seed)
        weights = torchvision.models.DenseNet121_Weights.DEFAULT if cfg.pretrained else None
        f = torchvision.models.densenet121(weights=weights).features
        self.stem = nn.Sequential(f.conv0, f.norm0, f.relu0, f.pool0)
        self.denseblock1, self.transition1 = f.denseblock1, f.transition1
        self.denseblock2, self.transition2 = f.denseblock2, f.transition2
        self.map_size = cfg.input_size // 16
        self.dec = nn.Conv2d(self.feature_dim, 1, kernel_size=1)
        self.linear = nn.Linear(self.map_size * self.map_size, 1)

    def _extra_points(self):
        return ("denseblock2",)

    def forward(self, x) -> PadOutput:
        x = self.stem(x)
        x = self._maybe_mix("denseblock1", self.denseblock1(x))
        x = self.transition1(x)
        x = self._maybe_mix("denseblock2", self.denseblock2(x))
        enc = self.transition2(x)
        pixel_map = torch.sigmoid(self.dec(enc)).squeeze(1)
        logit = self.linear(torch.flatten(pixel_map, 1)).squeeze(1)
        binary = torch.sigmoid(logit)
        feats = enc.mean(dim=(2, 3))
        score = pixel_map.mean(dim=(1, 2)) if self.cfg.score_source == "pixel_map_mean" else binary
        return PadOutput(score, binary, logit, pixel_map, feats)


def build_model(cfg: PadModelConfig, seed: Optional[int] = None) -> PadModel:
    """Instantiate the network for ``cfg``; ``seed`` fixes the weight init."""
    cls = {"resnet18_binary": ResNet18Binary, "pixbis": PixBis}.get(cfg.architecture)
    if cls is None:
        raise ValueError(f"unknown architecture {cfg.architecture!r}")
    if seed is None:
        return cls(cfg)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return cls(cfg, seed=seed)


def ce_loss(p, y, eps: float = EPS):
    """Binary cross-entropy on probabilities, averaged over the batch."""
    p = torch.as_tensor(p)
    if not p.is_floating_point():
        p = p.double()
    y = torch.as_tensor(y, dtype=p.dtype, device=p.device)
    p = p.clamp(eps, 1 - eps)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def pixbis_loss(pixel_map, binary_score, y, map_shape: Optional[tuple[int, int]] = None, eps: float = EPS):
    """Pixel-wise BCE against a constant ``y`` map plus BCE of the binary score, unweighted."""
    pixel_map = torch.as_tensor(pixel_map)
    binary_score = torch.as_tensor(binary_score, dtype=pixel_map.dtype)
    if pixel_map.dim() == 2:
        pixel_map = pixel_map.unsqueeze(0)
    binary_score = binary_score.reshape(-1)
    y = torch.as_tensor(y, dtype=pixel_map.dtype, device=pixel_map.device).reshape(-1)
    if pixel_map.dim() != 3:
        raise ValueError(f"pixel map must be h x w or B x h x w, got shape {tuple(pixel_map.shape)}")
    if map_shape is not None and tuple(pixel_map.shape[1:]) != tuple(map_shape):
        raise ValueError(f"pixel map shape {tuple(pixel_map.shape[1:])}, expected {tuple(map_shape)}")
    if not (pixel_map.shape[0] == binary_score.shape[0] == y.shape[0]):
        raise ValueError("pixel map, binary score and label batch sizes differ")
    target = y[:, None, None].expand_as(pixel_map)
    return ce_loss(pixel_map, target, eps) + ce_loss(binary_score, y, eps)


def model_loss(model: PadModel, out: PadOutput, y) -> torch.Tensor:
    if out.pixel_map is not None:
        return pixbis_loss(out.pixel_map, out.binary_score, y)
    return ce_loss(out.score, y)


def to_tensor(images, size: Optional[int] = None) -> torch.Tensor:
    """uint8 H x W x 3 image(s) to a normalized float B x 3 x H x W batch."""
    if isinstance(images, torch.Tensor):
        return images if images.dim() == 4 else images.unsqueeze(0)
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = images[None]
    arr = np.stack(list(images)) if not isinstance(images, np.ndarray) else images
    if size is not None and arr.shape[1:3] != (size, size):
        raise ValueError(f"expected {size}x{size} images, got {arr.shape[1]}x{arr.shape[2]}")
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 3, 1, 2).float().div_(255.0)
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (t - mean) / std


@torch.no_grad()
def predict(model: PadModel, images) -> list[Prediction]:
    model.eval()
    out = model(to_tensor(images))
    maps = out.pixel_map.cpu().numpy() if out.pixel_map is not None else [None] * len(out.score)
    return [
        Prediction(float(s), m, f)
        for s, m, f in zip(out.score.cpu().numpy(), maps, out.features.cpu().numpy())
    ]


@torch.no_grad()
def predict_score(model: PadModel, images) -> np.ndarray:
    """Bona fide probability per image, with MixStyle inactive."""
    model.eval()
    return model(to_tensor(images)).score.cpu().numpy().astype(np.float64)


def save_checkpoint(model: PadModel, path, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = asdict(model.cfg)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": cfg,
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path, expect_architecture: Optional[str] = None) -> PadModel:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {payload.get('format_version')!r}")
    cfg_dict = dict(payload["config"])
    if cfg_dict.get("mixstyle") is not None:
        cfg_dict["mixstyle"] = MixStyleConfig(**cfg_dict["mixstyle"])
    cfg = PadModelConfig(**cfg_dict)
    if expect_architecture is not None and cfg.architecture != expect_architecture:
        raise ValueError(f"{path}: checkpoint holds {cfg.architecture}, expected {expect_architecture}")
    model = build_model(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model

