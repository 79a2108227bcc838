"""Procedurally generated PAD corpora for smoke tests and demos.

Bona fide images are smooth random color fields. Each attack image is the
bona fide image with the same index plus a high-frequency moire grating and
a color shift, mimicking recapture artifacts. A domain is defined by the
global color cast applied to its images: none, a fixed cast, or a cast drawn
per image.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .data import ATTACK, BONA_FIDE, Manifest, Sample, write_manifest


@dataclass(frozen=True)
class ColorCast:
    """Per-channel ``gain * x + offset``; with ``random=True`` gain and offset are
    redrawn per image, uniformly within ``gain +/- gain_spread`` and ``+/- offset``."""

    gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    random: bool = False
    gain_spread: float = 0.0

    def draw(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        gain, offset = np.asarray(self.gain), np.asarray(self.offset)
        if not self.random:
            return gain, offset
        return gain + rng.uniform(-1, 1, 3) * self.gain_spread, rng.uniform(-1, 1, 3) * offset


NO_CAST = ColorCast()
WARM_CAST = ColorCast(gain=(1.25, 0.95, 0.7), offset=(10.0, 0.0, -10.0))
RANDOM_CAST = ColorCast(offset=(25.0, 25.0, 25.0), random=True, gain_spread=0.4)
ATTACK_COLOR_SHIFT = (-15.0, 0.0, 20.0)


def smooth_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency RGB field in [0, 255] (float)."""
    coarse = rng.uniform(0, 1, size=(4, 4, 3)).astype(np.float32)
    field = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC)
    base = rng.uniform(90, 170, size=3)
    spread = rng.uniform(30, 70)
    return np.clip(base + (field - 0.5) * 2 * spread, 0, 255)


def moire_overlay(rng: np.random.Generator, size: int, amplitude: float = 18.0) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    freq = rng.uniform(0.28, 0.42)
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    shift = np.array(ATTACK_COLOR_SHIFT) + rng.normal(0, 2.0, size=3)
    return amplitude * wave[..., None] + shift


def apply_cast(image: np.ndarray, cast: ColorCast, rng: np.random.Generator) -> np.ndarray:
    gain, offset = cast.draw(rng)
    return image * gain + offset


def _to_u8(a: np.ndarray) -> np.ndarray:
    return np.clip(a + 0.5, 0, 255).astype(np.uint8)


def toy_pair(rng: np.random.Generator, size: int, cast: ColorCast = NO_CAST) -> tuple[np.ndarray, np.ndarray]:
    """One (bona fide, attack) uint8 image pair sharing the same base texture.

    A random cast is drawn separately for each of the two images.
    """
    bona = smooth_texture(rng, size)
    attack = bona + moire_overlay(rng, size)
    return _to_u8(apply_cast(bona, cast, rng)), _to_u8(apply_cast(attack, cast, rng))


def make_toy_corpus(root, dataset_id: str, n_pairs: int = 200, size: int = 64,
                    cast: ColorCast = NO_CAST, seed: int = 0) -> Manifest:
    """Write ``n_pairs`` bona fide and ``n_pairs`` attack PNGs under ``root/dataset_id``.

    Returns the manifest (paths relative to ``root``) and writes it to
    ``root/<dataset_id>.csv``.
    """
    root = Path(root)
    out_dir = root / dataset_id
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_pairs):
        bona, attack = toy_pair(rng, size, cast)
        for label, img in ((BONA_FIDE, bona), (ATTACK, attack)):
            name = f"{'bf' if label == BONA_FIDE else 'at'}_{i:05d}.png"
            cv2.imwrite(str(out_dir / name), cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
            rel = f"{dataset_id}/{name}"
            rows.append(Sample(rel, "image", label, "moire" if label == ATTACK else "", dataset_id,
                               Path(name).stem, 0, None))
    manifest = Manifest(rows)
    write_manifest(manifest, root / f"{dataset_id}.csv")
    return manifest
