"""Training loops for the four training modes and the cross-dataset protocol harness."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import torch

from .data import (
    AugmentationConfig,
    Manifest,
    Sample,
    augment,
    compose_balanced_batches,
    load_manifest,
    load_sample_image,
    sample_rng,
)
from .metrics import (
    ScoreRecord,
    MetricsReport,
    ThresholdPolicy,
    evaluate_scores,
    fuse_video_scores,
    write_report,
)
from .mixstyle import MixStyleConfig
from .models import PadModel, PadModelConfig, PadOutput, build_model, model_loss, to_tensor

log = logging.getLogger(__name__)

MODES = ("source_only", "mixstyle_da", "combined", "combined_mixstyle")

ManifestLike = Union[str, Path, Manifest]


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "source_only"
    source_manifests: list = field(default_factory=list)
    target_manifest: Optional[ManifestLike] = None
    supplement_manifests: list = field(default_factory=list)
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_gamma: float = 0.998
    batch_size: int = 128
    epochs: int = 70
    seed: int = 0
    model: PadModelConfig = field(default_factory=PadModelConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    margin: float = 0.0
    data_root: Optional[str] = None
    cache_images: bool = False
    max_nonfinite_steps: int = 10

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.source_manifests:
            raise ConfigError("source_manifests is empty")
        if self.mode in ("mixstyle_da", "combined_mixstyle") and self.model.mixstyle is None:
            raise ConfigError(f"mode {self.mode} needs model.mixstyle")
        if self.mode == "mixstyle_da" and self.target_manifest is None:
            raise ConfigError("mode mixstyle_da needs target_manifest")
        if self.mode in ("combined", "combined_mixstyle") and not self.supplement_manifests:
            raise ConfigError(f"mode {self.mode} needs supplement_manifests")
        if self.batch_size <= 0 or self.batch_size % 2:
            raise ConfigError("batch_size must be a positive even number")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("source_manifests", "supplement_manifests"):
            d[key] = [str(m) if not isinstance(m, Manifest) else "<in-memory>" for m in getattr(self, key)]
        if isinstance(self.target_manifest, Manifest):
            d["target_manifest"] = "<in-memory>"
        elif self.target_manifest is not None:
            d["target_manifest"] = str(self.target_manifest)
        d["augmentation"]["gamma_range"] = list(self.augmentation.gamma_range)
        if d["model"]["mixstyle"] and d["model"]["mixstyle"]["insertion_points"] is not None:
            d["model"]["mixstyle"]["insertion_points"] = list(d["model"]["mixstyle"]["insertion_points"])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        model = dict(d.pop("model", None) or {})
        mix = model.pop("mixstyle", None)
        if mix is not None and not isinstance(mix, MixStyleConfig):
            mix = MixStyleConfig(**mix)
        aug = d.pop("augmentation", None) or {}
        if not isinstance(aug, AugmentationConfig):
            aug = dict(aug)
            if "gamma_range" in aug:
                aug["gamma_range"] = tuple(aug["gamma_range"])
            aug = AugmentationConfig(**aug)
        try:
            return cls(model=PadModelConfig(mixstyle=mix, **model), augmentation=aug, **d)
        except TypeError as e:
            raise ConfigError(str(e)) from e


def lr_at_epoch(lr0: float, gamma: float, epoch: int) -> float:
    return lr0 * gamma ** epoch


def make_optimizer(model: PadModel, cfg: TrainConfig):
    opt = torch.optim.SGD(model.parameters(), lr=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.lr_gamma)
    return opt, sched


def as_manifest(m: ManifestLike) -> Manifest:
    return m if isinstance(m, Manifest) else load_manifest(m)


def merge_manifests(items: Sequence[ManifestLike]) -> Manifest:
    rows = []
    for m in items:
        rows.extend(as_manifest(m).rows)
    return Manifest(rows)


class ImageSource:
    """Decodes samples to ``input_size`` crops, optionally memoizing them."""

    def __init__(self, size: int, margin: float = 0.0, root=None, cache: bool = False):
        self.size, self.margin, self.root = size, margin, root
        self._cache: Optional[dict] = {} if cache else None

    def __call__(self, sample: Sample) -> np.ndarray:
        if self._cache is None:
            return load_sample_image(sample, self.margin, self.size, self.root)
        key = (sample.media_path, sample.frame_index)
        if key not in self._cache:
            self._cache[key] = load_sample_image(sample, self.margin, self.size, self.root)
        return self._cache[key]


def batch_tensor(samples: Sequence[Sample], images: ImageSource, aug: Optional[AugmentationConfig],
                 seed: int, *stream: int) -> torch.Tensor:
    arrays = []
    for pos, s in enumerate(samples):
        img = images(s)
        if aug is not None and aug.enabled:
            img = augment(img, aug, sample_rng(aug.seed, seed, *stream, pos))
        arrays.append(img)
    return to_tensor(np.stack(arrays))


def select(out: PadOutput, mask: torch.Tensor) -> PadOutput:
    return PadOutput(*(None if t is None else t[mask] for t in out))


def step_loss(model: PadModel, x: torch.Tensor, y: torch.Tensor, source_mask: Optional[torch.Tensor],
              mode: str) -> torch.Tensor:
    """Forward one training batch and return the loss for ``mode``.

    In ``mixstyle_da`` only rows flagged in ``source_mask`` enter the loss; the
    other rows only contribute feature statistics.
    """
    model.train()
    if mode == "mixstyle_da":
        model.set_domains(source_mask, "da")
    elif mode == "combined_mixstyle":
        model.set_domains(source_mask, "combined")
    else:
        model.set_domains(None)
    out = model(x)
    if mode == "mixstyle_da":
        return model_loss(model, select(out, source_mask), y[source_mask])
    return model_loss(model, out, y)


def _epoch_batches(cfg: TrainConfig, labeled: Manifest, domain: np.ndarray, target: Optional[Manifest],
                   rng: np.random.Generator):
    """Yield (samples, source_mask) for one epoch."""
    if cfg.mode == "mixstyle_da":
        # the labeled half drives the epoch length: one pass over the source pool
        half = cfg.batch_size // 2
        for src in compose_balanced_batches(labeled, half, rng):
            tgt = [target.rows[i] for i in rng.integers(0, len(target), size=half)]
            yield src + tgt, np.array([True] * half + [False] * half)
        return
    index = {id(s): i for i, s in enumerate(labeled.rows)}
    for batch in compose_balanced_batches(labeled, cfg.batch_size, rng):
        yield batch, np.array([domain[index[id(s)]] for s in batch])


def train(cfg: TrainConfig, out_dir=None, model: Optional[PadModel] = None):
    """Train a PAD model; returns ``(model, log_records)``.

    SGD with momentum and weight decay, learning rate decayed by ``lr_gamma``
    after every epoch. Raises :class:`TrainingDiverged` after
    ``max_nonfinite_steps`` consecutive non-finite losses.
    """
    cfg.validate()
    labeled = merge_manifests(cfg.source_manifests)
    domain = np.ones(len(labeled), dtype=bool)
    if cfg.mode in ("combined", "combined_mixstyle"):
        extra = merge_manifests(cfg.supplement_manifests)
        labeled = labeled + extra
        domain = np.concatenate([domain, np.zeros(len(extra), dtype=bool)])
    target = as_manifest(cfg.target_manifest) if cfg.mode == "mixstyle_da" else None
    if target is not None and len(target) == 0:
        raise ConfigError("target manifest is empty")

    torch.manual_seed(cfg.seed)
    if model is None:
        model = build_model(cfg.model, seed=cfg.seed)
    opt, sched = make_optimizer(model, cfg)
    images = ImageSource(cfg.model.input_size, cfg.margin, cfg.data_root, cfg.cache_images)
    rng = np.random.default_rng(cfg.seed)

    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.jsonl"
        log_path.write_text("")

    records = []
    bad_steps = 0
    for epoch in range(cfg.epochs):
        lr = opt.param_groups[0]["lr"]
        losses = []
        for b, (samples, mask) in enumerate(_epoch_batches(cfg, labeled, domain, target, rng)):
            x = batch_tensor(samples, images, cfg.augmentation, cfg.seed, epoch, b)
            y = torch.tensor([s.y for s in samples], dtype=torch.float32)
            mask_t = torch.from_numpy(mask)
            opt.zero_grad(set_to_none=True)
            loss = step_loss(model, x, y, mask_t, cfg.mode)
            if not torch.isfinite(loss):
                bad_steps += 1
                if bad_steps >= cfg.max_nonfinite_steps:
                    raise TrainingDiverged(f"non-finite loss for {bad_steps} consecutive steps (epoch {epoch})")
                continue
            bad_steps = 0
            loss.backward()
            opt.step()
            losses.append(loss.item())
        sched.step()
        rec = {"epoch": epoch, "mean_loss": float(np.mean(losses)) if losses else float("nan"), "lr": lr}
        records.append(rec)
        log.info("epoch %d loss %.5f lr %.6g", epoch, rec["mean_loss"], lr)
        if log_path is not None:
            with log_path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")
    model.set_domains(None)
    model.eval()
    return model, records


@torch.no_grad()
def score_manifest(model: PadModel, manifest: Manifest, batch_size: int = 64, margin: float = 0.0,
                   root=None) -> list[ScoreRecord]:
    """Per-frame bona fide scores in inference mode."""
    model.eval()
    images = ImageSource(model.cfg.input_size, margin, root)
    out = []
    rows = manifest.rows
    for i in range(0, len(rows), batch_size):
        chunk = rows[i:i + batch_size]
        x = to_tensor(np.stack([images(s) for s in chunk]))
        scores = model(x).score.double().clamp(0.0, 1.0).numpy()
        out.extend(
            ScoreRecord(s.dataset_id, s.video_id, s.frame_index, s.label, float(v))
            for s, v in zip(chunk, scores)
        )
    return out


def evaluate_model(model: PadModel, manifest: ManifestLike, policy: ThresholdPolicy = "eer",
                   batch_size: int = 64, margin: float = 0.0, root=None):
    """Frame scores, fused video scores and the metrics report on the fused scores."""
    frames = score_manifest(model, as_manifest(manifest), batch_size, margin, root)
    videos = fuse_video_scores(frames)
    return frames, videos, evaluate_scores(videos, policy)


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    train_dataset_ids: tuple[str, ...]
    test_dataset_id: str
    supplement_dataset_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "train_dataset_ids", tuple(self.train_dataset_ids))
        object.__setattr__(self, "supplement_dataset_ids", tuple(self.supplement_dataset_ids))
        if not self.train_dataset_ids:
            raise ValueError(f"protocol {self.name}: no training datasets")
        if self.test_dataset_id in self.train_dataset_ids:
            raise ValueError(f"protocol {self.name}: test dataset {self.test_dataset_id} is also a training dataset")

    @classmethod
    def parse(cls, text: str, supplement: Sequence[str] = ()) -> "ProtocolSpec":
        """``"C->I"``, ``"C→I"`` or ``"C,M->I"``."""
        left, sep, right = text.replace("→", "->").partition("->")
        if not sep:
            raise ValueError(f"protocol {text!r} must look like 'TRAIN->TEST'")
        train_ids = tuple(t.strip() for t in left.split(",") if t.strip())
        return cls(f"{','.join(train_ids)}→{right.strip()}", train_ids, right.strip(), tuple(supplement))


# Cross-dataset scenarios over CASIA (C), Idiap (I), MSU (M) and OULU (O), in reporting order.
STANDARD_PROTOCOLS = tuple(
    ProtocolSpec.parse(p)
    for p in ("C->I", "C->M", "C->O", "I->C", "I->M", "I->O", "M->C", "M->I", "M->O", "O->M", "O->C", "O->I")
)


@dataclass
class ProtocolResult:
    name: str
    status: str  # "ok" or "failed"
    hter: float = float("nan")
    auc: float = float("nan")
    error: str = ""
    report: Optional[MetricsReport] = None


@dataclass
class ProtocolTable:
    rows: list[ProtocolResult]

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.status == "ok"]

    @property
    def failed(self) -> bool:
        return any(r.status != "ok" for r in self.rows)

    def average(self, key: str = "hter") -> tuple[float, float]:
        """Mean and sample standard deviation (0 for a single row) over successful rows."""
        vals = np.array([getattr(r, key) for r in self.ok_rows], dtype=np.float64)
        if vals.size == 0:
            return float("nan"), float("nan")
        return float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0


def protocol_config(spec: ProtocolSpec, template: TrainConfig, datasets: Mapping[str, ManifestLike]) -> TrainConfig:
    def get(i):
        if i not in datasets:
            raise KeyError(f"unknown dataset id {i!r}")
        return datasets[i]

    cfg = replace(template, source_manifests=[get(i) for i in spec.train_dataset_ids])
    test = get(spec.test_dataset_id)
    if template.mode == "mixstyle_da":
        cfg = replace(cfg, target_manifest=test)
    if spec.supplement_dataset_ids:
        cfg = replace(cfg, supplement_manifests=[get(i) for i in spec.supplement_dataset_ids])
    return cfg


def run_protocols(specs: Sequence[ProtocolSpec], template: TrainConfig, datasets: Mapping[str, ManifestLike],
                  policy: ThresholdPolicy = "eer", out_dir=None,
                  train_fn: Callable = train) -> ProtocolTable:
    """Train and evaluate one model per scenario; failures are recorded per row."""
    rows = []
    for spec in specs:
        try:
            cfg = protocol_config(spec, template, datasets)
            run_dir = None
            if out_dir is not None:
                run_dir = Path(out_dir) / spec.name.replace("→", "_to_").replace(",", "+")
            model, _ = train_fn(cfg, out_dir=run_dir)
            _, _, report = evaluate_model(model, datasets[spec.test_dataset_id], policy,
                                          margin=template.margin, root=template.data_root)
            rows.append(ProtocolResult(spec.name, "ok", report.hter, report.auc, report=report))
            if run_dir is not None:
                write_report(report, run_dir / "report.txt")
        except Exception as e:  # one bad scenario must not stop the table
            log.exception("protocol %s failed", spec.name)
            rows.append(ProtocolResult(spec.name, "failed", error=f"{type(e).__name__}: {e}"))
    return ProtocolTable(rows)
