"""Manifest-driven dataset ingestion.

Frame selection, face cropping, augmentation and class-balanced batch
composition. Everything here is a pure function of its inputs and an
explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Protocol, Sequence

import cv2
import numpy as np

BONA_FIDE = "bona_fide"
ATTACK = "attack"
LABELS = (BONA_FIDE, ATTACK)

# on-disk spelling of the labels
_CSV_LABEL = {"bonafide": BONA_FIDE, "attack": ATTACK}
_LABEL_CSV = {v: k for k, v in _CSV_LABEL.items()}

MEDIA_KINDS = ("image", "video")
MANIFEST_HEADER = (
    "media_path",
    "media_kind",
    "label",
    "attack_type",
    "dataset_id",
    "video_id",
    "frame_index",
    "box_x",
    "box_y",
    "box_w",
    "box_h",
)
MANIFEST_FORMAT_VERSION = "1"
CROP_SIZE = 224


class ManifestError(ValueError):
    """Raised for unreadable or invalid manifest content."""


@dataclass(frozen=True)
class Sample:
    media_path: str
    media_kind: str
    label: str
    attack_type: str
    dataset_id: str
    video_id: str
    frame_index: int = 0
    face_box: Optional[tuple[int, int, int, int]] = None

    def __post_init__(self):
        if self.media_kind not in MEDIA_KINDS:
            raise ValueError(f"media_kind must be one of {MEDIA_KINDS}, got {self.media_kind!r}")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.label == BONA_FIDE and self.attack_type:
            raise ValueError(f"bona fide sample carries attack_type {self.attack_type!r}")
        if self.label == ATTACK and not self.attack_type:
            raise ValueError("attack sample without attack_type")
        if not self.dataset_id:
            raise ValueError("empty dataset_id")
        if self.frame_index < 0:
            raise ValueError(f"negative frame_index {self.frame_index}")
        if self.face_box is not None:
            x, y, w, h = self.face_box
            if w <= 0 or h <= 0:
                raise ValueError(f"face box {self.face_box} has non-positive size")
            if x < 0 or y < 0:
                raise ValueError(f"face box {self.face_box} starts outside the image")

    @property
    def y(self) -> int:
        """Binary target: 1 for bona fide, 0 for attack."""
        return 1 if self.label == BONA_FIDE else 0


@dataclass
class Manifest:
    rows: list[Sample] = field(default_factory=list)
    source_format_version: str = MANIFEST_FORMAT_VERSION

    def __post_init__(self):
        seen = set()
        for i, s in enumerate(self.rows):
            key = (s.media_path, s.frame_index)
            if key in seen:
                raise ManifestError(f"row {i}: duplicate (media_path, frame_index) {key}")
            seen.add(key)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def labels(self) -> np.ndarray:
        return np.array([s.y for s in self.rows], dtype=np.int64)

    def dataset_ids(self) -> list[str]:
        return sorted({s.dataset_id for s in self.rows})

    def filter(self, dataset_id: str) -> "Manifest":
        return Manifest([s for s in self.rows if s.dataset_id == dataset_id], self.source_format_version)

    def __add__(self, other: "Manifest") -> "Manifest":
        return Manifest(self.rows + other.rows, self.source_format_version)


def _parse_row(row: dict, line: int) -> Sample:
    def need(name):
        value = row.get(name)
        if value is None:
            raise ManifestError(f"row {line}: missing field {name!r}")
        return value.strip()

    label_raw = need("label")
    if label_raw not in _CSV_LABEL:
        raise ManifestError(f"row {line}: field 'label' has unknown value {label_raw!r}")
    try:
        frame_index = int(need("frame_index") or 0)
    except ValueError as e:
        raise ManifestError(f"row {line}: field 'frame_index' is not an integer") from e

    box_fields = [need(k) for k in ("box_x", "box_y", "box_w", "box_h")]
    if all(box_fields):
        try:
            box = tuple(int(round(float(v))) for v in box_fields)
        except ValueError as e:
            raise ManifestError(f"row {line}: box fields are not numeric") from e
    elif any(box_fields):
        raise ManifestError(f"row {line}: box fields must be all set or all empty")
    else:
        box = None

    media_path = need("media_path")
    video_id = need("video_id") or Path(media_path).stem
    try:
        return Sample(
            media_path=media_path,
            media_kind=need("media_kind"),
            label=_CSV_LABEL[label_raw],
            attack_type=need("attack_type"),
            dataset_id=need("dataset_id"),
            video_id=video_id,
            frame_index=frame_index,
            face_box=box,
        )
    except ValueError as e:
        raise ManifestError(f"row {line}: {e}") from e


def load_manifest(path) -> Manifest:
    """Read and validate a manifest CSV.

    Row numbers in error messages are 1-based and count the header as row 1.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        rows = [_parse_row(row, reader.line_num) for row in reader]
    return Manifest(rows)


def write_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for s in manifest.rows:
            box = list(s.face_box) if s.face_box is not None else ["", "", "", ""]
            writer.writerow(
                [s.media_path, s.media_kind, _LABEL_CSV[s.label], s.attack_type, s.dataset_id,
                 s.video_id, s.frame_index, *box]
            )
    return path


def sample_frame_indices(total_frames: int, k: int) -> list[int]:
    """Evenly spaced frame indices, both endpoints included.

    ``k == 1`` picks the middle frame.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if total_frames < 1:
        raise ValueError(f"total_frames must be positive, got {total_frames}")
    if k > total_frames:
        raise ValueError(f"cannot pick {k} distinct frames from {total_frames}")
    if k == 1:
        return [total_frames // 2]
    step = (total_frames - 1) / (k - 1)
    # round half up; builtin round() is half-to-even
    return [int(math.floor(i * step + 0.5)) for i in range(k)]


def expand_box(box, margin: float, image_shape) -> tuple[int, int, int, int]:
    """Grow ``box`` by ``margin`` of its size on every side and clip to the image.

    Returns the region as ``(x, y, w, h)``.
    """
    height, width = image_shape[:2]
    x, y, w, h = box
    if w <= 0 or h <= 0:
        raise ValueError(f"zero-area box {box}")
    if x < 0 or y < 0 or x + w > width or y + h > height:
        raise ValueError(f"box {box} outside image of size {width}x{height}")
    dx, dy = margin * w, margin * h
    x0 = max(0, int(math.floor(x - dx)))
    y0 = max(0, int(math.floor(y - dy)))
    x1 = min(width, int(math.ceil(x + w + dx)))
    y1 = min(height, int(math.ceil(y + h + dy)))
    return x0, y0, x1 - x0, y1 - y0


def crop_face(image: np.ndarray, box, margin: float = 0.0, size: int = CROP_SIZE) -> np.ndarray:
    x, y, w, h = expand_box(box, margin, image.shape)
    region = image[y:y + h, x:x + w]
    if region.shape[:2] == (size, size):
        return region.copy()
    return cv2.resize(region, (size, size), interpolation=cv2.INTER_LINEAR)


class FaceDetector(Protocol):
    def __call__(self, image: np.ndarray) -> Optional[tuple[int, int, int, int]]: ...


class NullDetector:
    """Detector stand-in: faces are expected to come from the manifest."""

    def __call__(self, image):
        return None


class FrameDecoder(Protocol):
    def frame_count(self, path: str) -> int: ...

    def read_frame(self, path: str, index: int) -> np.ndarray: ...


class OpenCVDecoder:
    """Video access through OpenCV. Frames are returned as RGB uint8."""

    def frame_count(self, path):
        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise OSError(f"cannot open video {path}")
        try:
            n = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        finally:
            cap.release()
        if n <= 0:
            raise OSError(f"video {path} reports no frames")
        return n

    def read_frame(self, path, index):
        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise OSError(f"cannot open video {path}")
        try:
            cap.set(cv2.CAP_PROP_POS_FRAMES, index)
            ok, frame = cap.read()
        finally:
            cap.release()
        if not ok:
            raise OSError(f"cannot read frame {index} of {path}")
        return cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)


def read_image(path) -> np.ndarray:
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise OSError(f"cannot read image {path}")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def load_sample_image(sample: Sample, margin: float = 0.0, size: int = CROP_SIZE,
                      root=None, decoder: Optional[FrameDecoder] = None,
                      detector: Optional[FaceDetector] = None) -> np.ndarray:
    """Decode a sample and return its ``size x size x 3`` face crop.

    Without a face box (and no box from ``detector``) the whole frame is resized.
    """
    path = Path(sample.media_path)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    if sample.media_kind == "video":
        image = (decoder or OpenCVDecoder()).read_frame(str(path), sample.frame_index)
    else:
        image = read_image(path)
    box = sample.face_box
    if box is None and detector is not None:
        box = detector(image)
    if box is None:
        if image.shape[:2] == (size, size):
            return image
        return cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
    return crop_face(image, box, margin, size)


@dataclass(frozen=True)
class AugmentationConfig:
    enabled: bool = True
    hflip_probability: float = 0.5
    shift_scale_rotate_limit: float = 0.1
    gamma_range: tuple[int, int] = (80, 180)
    rgb_shift_limit: int = 20
    color_jitter_limit: float = 0.1
    seed: int = 0

    def __post_init__(self):
        low, high = self.gamma_range
        if low > high:
            raise ValueError(f"gamma_range low {low} exceeds high {high}")
        if low <= 0:
            raise ValueError("gamma_range must be positive")
        if not 0.0 <= self.hflip_probability <= 1.0:
            raise ValueError("hflip_probability must be in [0, 1]")
        for name in ("shift_scale_rotate_limit", "rgb_shift_limit", "color_jitter_limit"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        object.__setattr__(self, "gamma_range", (int(low), int(high)))


def _jitter(image: np.ndarray, brightness: float, contrast: float, saturation: float, hue: float):
    out = image.astype(np.float32)
    if brightness != 1.0:
        out = out * brightness
    if contrast != 1.0:
        gray_mean = cv2.cvtColor(np.clip(out, 0, 255).astype(np.uint8), cv2.COLOR_RGB2GRAY).mean()
        out = (out - gray_mean) * contrast + gray_mean
    if saturation != 1.0:
        gray = cv2.cvtColor(np.clip(out, 0, 255).astype(np.uint8), cv2.COLOR_RGB2GRAY).astype(np.float32)
        out = (out - gray[..., None]) * saturation + gray[..., None]
    out = np.clip(out + 0.5, 0, 255).astype(np.uint8)
    if hue != 0.0:
        hsv = cv2.cvtColor(out, cv2.COLOR_RGB2HSV)
        # OpenCV hue spans [0, 180)
        shift = int(round(hue * 180))
        hsv[..., 0] = ((hsv[..., 0].astype(np.int32) + shift) % 180).astype(np.uint8)
        out = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    return out


def augment(image: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Horizontal flip, shift/scale/rotate, gamma, RGB shift and color jitter.

    Every parameter is drawn on every call, so the generator advances by the
    same amount regardless of which transforms end up being no-ops. Rotation
    is bounded by ``shift_scale_rotate_limit`` radians; the jitter limit bounds
    brightness/contrast/saturation factors around 1 and the hue shift as a
    fraction of the hue circle.
    """
    if not cfg.enabled:
        return image
    lim = cfg.shift_scale_rotate_limit
    jl = cfg.color_jitter_limit
    flip = rng.random() < cfg.hflip_probability
    dx, dy, dscale, angle = rng.uniform(-1.0, 1.0, size=4) * lim
    gamma = rng.uniform(cfg.gamma_range[0], cfg.gamma_range[1]) / 100.0
    shifts = rng.uniform(-1.0, 1.0, size=3) * cfg.rgb_shift_limit
    brightness, contrast, saturation = 1.0 + rng.uniform(-1.0, 1.0, size=3) * jl
    hue = rng.uniform(-1.0, 1.0) * jl
    order = rng.permutation(3)

    out = image
    if flip:
        out = out[:, ::-1]
    if lim > 0:
        h, w = out.shape[:2]
        m = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), math.degrees(angle), 1.0 + dscale)
        m[0, 2] += dx * w
        m[1, 2] += dy * h
        out = cv2.warpAffine(np.ascontiguousarray(out), m, (w, h), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_REFLECT_101)

    def apply_gamma(img):
        if gamma == 1.0:
            return img
        lut = np.clip(((np.arange(256) / 255.0) ** gamma) * 255.0 + 0.5, 0, 255).astype(np.uint8)
        return lut[img]

    def apply_rgb_shift(img):
        if cfg.rgb_shift_limit == 0:
            return img
        return np.clip(img.astype(np.float32) + shifts.astype(np.float32) + 0.5, 0, 255).astype(np.uint8)

    def apply_jitter(img):
        if jl == 0:
            return img
        return _jitter(img, brightness, contrast, saturation, hue)

    pixel_ops = [apply_gamma, apply_rgb_shift, apply_jitter]
    for i in order:
        out = pixel_ops[i](out)
    return np.ascontiguousarray(out)


def sample_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for one (seed, worker/epoch/batch/...) coordinate."""
    return np.random.default_rng([int(seed), *map(int, stream)])


def class_balanced_weights(labels: Sequence[int]) -> np.ndarray:
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("balanced sampling needs both bona fide and attack samples")
    w = np.where(labels == 1, 0.5 / n_pos, 0.5 / n_neg)
    return w / w.sum()


def compose_balanced_batches(manifest: Manifest, batch_size: int,
                             rng: np.random.Generator) -> Iterator[list[Sample]]:
    """One epoch of batches drawn with replacement at an expected 1:1 class ratio."""
    if batch_size <= 0 or batch_size % 2:
        raise ValueError(f"batch_size must be a positive even number, got {batch_size}")
    weights = class_balanced_weights(manifest.labels())
    n_batches = math.ceil(len(manifest) / batch_size)
    for _ in range(n_batches):
        idx = rng.choice(len(manifest), size=batch_size, replace=True, p=weights)
        yield [manifest.rows[i] for i in idx]


def with_frame(sample: Sample, frame_index: int) -> Sample:
    return replace(sample, frame_index=frame_index)
