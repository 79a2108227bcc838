"""Figures and tables: ROC curves, t-SNE feature embeddings, protocol result tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from sklearn.manifold import TSNE  # noqa: E402

from .data import Manifest, Sample  # noqa: E402
from .metrics import MetricsReport  # noqa: E402
from .models import PadModel, to_tensor  # noqa: E402

TSNE_PERPLEXITY = 30.0
TSNE_ITERATIONS = 1000
EMBEDDING_HEADER = ("dataset_id", "video_id", "label", "attack_type", "x", "y")

# PNG metadata that would otherwise carry the matplotlib version
_PNG_METADATA = {"Software": None}


@torch.no_grad()
def extract_features(model: PadModel, samples: Sequence[Sample], images, batch_size: int = 64):
    """Pooled input of the binary head for each sample, in inference mode.

    ``images`` maps a Sample to its uint8 crop (see ``training.ImageSource``).
    """
    model.eval()
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = list(samples[i:i + batch_size])
        x = to_tensor(np.stack([images(s) for s in chunk]))
        feats = model(x).features.double().numpy()
        out.extend(zip(chunk, feats))
    return out


def sample_per_dataset(manifests: Sequence[Manifest], n: int, seed: int) -> list[Sample]:
    """``n`` rows drawn without replacement from each manifest."""
    rng = np.random.default_rng(seed)
    picked = []
    for m in manifests:
        if n > len(m):
            raise ValueError(f"cannot draw {n} samples without replacement from a manifest of {len(m)}")
        picked.extend(m.rows[i] for i in sorted(rng.choice(len(m), size=n, replace=False)))
    return picked


def project_2d(features, seed: int = 0, perplexity: float = TSNE_PERPLEXITY,
               n_iter: int = TSNE_ITERATIONS) -> np.ndarray:
    """t-SNE to two dimensions; perplexity is capped at (n - 1) / 3."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two feature vectors")
    if np.allclose(x, x[0]):
        # all-identical input has no neighbourhood structure
        return np.zeros((x.shape[0], 2))
    perplexity = min(perplexity, (x.shape[0] - 1) / 3)
    tsne = TSNE(n_components=2, perplexity=max(perplexity, 1e-3), max_iter=n_iter, init="pca",
                random_state=seed, method="exact" if x.shape[0] < 200 else "barnes_hut")
    return tsne.fit_transform(x)


def write_embedding(samples: Sequence[Sample], points: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EMBEDDING_HEADER)
        for s, (x, y) in zip(samples, points):
            w.writerow([s.dataset_id, s.video_id, s.label, s.attack_type, repr(float(x)), repr(float(y))])
    return path


def plot_embedding(samples: Sequence[Sample], points: np.ndarray, output_path, color_key: str = "attack_type",
                   marker_datasets: Optional[dict] = None, title: str = "") -> Path:
    """Scatter plot colored by class, attack type or dataset; one marker per dataset."""
    if color_key not in ("class", "attack_type", "dataset"):
        raise ValueError(f"unknown color_key {color_key!r}")

    def color_of(s):
        if color_key == "class":
            return s.label
        if color_key == "dataset":
            return s.dataset_id
        return s.attack_type or "bona fide"

    datasets = sorted({s.dataset_id for s in samples})
    markers = marker_datasets or {d: m for d, m in zip(datasets, "sXo^vD<>")}
    groups = sorted({color_of(s) for s in samples})
    cmap = plt.get_cmap("tab10")
    fig, ax = plt.subplots(figsize=(6, 6))
    pts = np.asarray(points)
    for d in datasets:
        for gi, g in enumerate(groups):
            idx = [i for i, s in enumerate(samples) if s.dataset_id == d and color_of(s) == g]
            if idx:
                ax.scatter(pts[idx, 0], pts[idx, 1], s=10, marker=markers.get(d, "o"), color=cmap(gi % 10),
                           label=f"{d}: {g}", alpha=0.8)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    return _save(fig, output_path)


def roc_figure(reports: Sequence[tuple[str, MetricsReport]]):
    if not reports:
        raise ValueError("no reports to plot")
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, rep in reports:
        if not rep.roc:
            raise ValueError(f"report {name!r} has no ROC points")
        x, y = zip(*rep.roc)
        ax.plot(x, y, drawstyle="default", label=f"{name} (AUC {100 * rep.auc:.2f}%)")
    ax.plot([0, 1], [0, 1], color="0.8", lw=0.8, ls="--")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("APCER")
    ax.set_ylabel("1-BPCER")
    ax.legend(loc="lower right")
    fig.tight_layout()
    return fig


def plot_roc(reports: Sequence[tuple[str, MetricsReport]], output_path) -> Path:
    return _save(roc_figure(reports), output_path)


def _save(fig, output_path) -> Path:
    output_path = Path(output_path)
    try:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(output_path, dpi=100, metadata=_PNG_METADATA if output_path.suffix == ".png" else None)
    finally:
        plt.close(fig)
    return output_path


@dataclass
class TableRow:
    name: str
    hter: Optional[float]  # percent; None marks a failed scenario
    auc: Optional[float] = None  # percent


def _as_row(r) -> TableRow:
    if isinstance(r, TableRow):
        return r
    if hasattr(r, "status"):  # training.ProtocolResult, fractions
        if r.status != "ok":
            return TableRow(r.name, None)
        return TableRow(r.name, 100 * r.hter, 100 * r.auc)
    return TableRow(*r)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation; a single value has spread 0."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def render_results_table(rows) -> str:
    """Fixed-width text table of HTER (%) per scenario with a ``mean ± std`` row."""
    rows = [_as_row(r) for r in rows]
    with_auc = any(r.auc is not None for r in rows)
    header = f"{'Scenario':<12}{'HTER (%)':>18}" + (f"{'AUC (%)':>18}" if with_auc else "")
    lines = [header, "-" * len(header)]
    for r in rows:
        hter = "failed" if r.hter is None else f"{r.hter:.2f}"
        line = f"{r.name:<12}{hter:>18}"
        if with_auc:
            line += f"{'' if r.auc is None else f'{r.auc:.2f}':>18}"
        lines.append(line)
    ok = [r for r in rows if r.hter is not None]
    if ok:
        m, s = mean_std([r.hter for r in ok])
        line = f"{'Average':<12}{f'{m:.2f} ± {s:.2f}':>18}"
        if with_auc:
            aucs = [r.auc for r in ok if r.auc is not None]
            if aucs:
                am, asd = mean_std(aucs)
                line += f"{f'{am:.2f} ± {asd:.2f}':>18}"
        lines.append("-" * len(header))
        lines.append(line)
    return "\n".join(lines) + "\n"
