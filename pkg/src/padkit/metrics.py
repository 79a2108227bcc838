"""ISO/IEC 30107-3 style PAD metrics over per-frame or per-video scores.

Scores are bona fide probabilities: a record is classified bona fide when
its score is at or above the threshold.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.stats import rankdata

BONA_FIDE = "bona_fide"
ATTACK = "attack"

SCORE_HEADER = ("dataset_id", "video_id", "frame_index", "label", "score")
_CSV_LABEL = {"bonafide": BONA_FIDE, "attack": ATTACK}
_LABEL_CSV = {v: k for k, v in _CSV_LABEL.items()}


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreRecord:
    dataset_id: str
    video_id: str
    frame_index: int
    label: str
    score: float

    def __post_init__(self):
        if self.label not in (BONA_FIDE, ATTACK):
            raise ValueError(f"unknown label {self.label!r}")
        if not 0.0 <= self.score <= 1.0 or math.isnan(self.score):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class MetricsReport:
    threshold: float
    threshold_policy: str
    apcer: float
    bpcer: float
    hter: float
    auc: float
    roc: list[tuple[float, float]] = field(default_factory=list)
    roc_thresholds: list[float] = field(default_factory=list)
    n_attack: int = 0
    n_bona_fide: int = 0


def _split(records) -> tuple[np.ndarray, np.ndarray]:
    """Attack and bona fide score arrays; raises unless both classes occur."""
    if isinstance(records, tuple) and len(records) == 2 and not isinstance(records[0], ScoreRecord):
        attack, bona = (np.asarray(r, dtype=np.float64) for r in records)
    else:
        records = list(records)
        attack = np.array([r.score for r in records if r.label == ATTACK], dtype=np.float64)
        bona = np.array([r.score for r in records if r.label == BONA_FIDE], dtype=np.float64)
    if attack.size == 0 or bona.size == 0:
        raise MetricsError("metrics need both attack and bona fide scores")
    return attack, bona


def fuse_video_scores(records: Iterable[ScoreRecord]) -> list[ScoreRecord]:
    """Mean-rule fusion: one record per (dataset_id, video_id), frame_index -1."""
    groups: "OrderedDict[tuple[str, str], list[ScoreRecord]]" = OrderedDict()
    for r in records:
        groups.setdefault((r.dataset_id, r.video_id), []).append(r)
    if not groups:
        raise MetricsError("no records to fuse")
    fused = []
    for (dataset_id, video_id), frames in groups.items():
        labels = {f.label for f in frames}
        if len(labels) > 1:
            raise MetricsError(f"video {dataset_id}/{video_id} mixes bona fide and attack frames")
        score = math.fsum(f.score for f in frames) / len(frames)
        fused.append(ScoreRecord(dataset_id, video_id, -1, frames[0].label, min(1.0, max(0.0, score))))
    return fused


def apcer_bpcer(records, threshold: float) -> tuple[float, float]:
    """``records`` is a sequence of ScoreRecord or an ``(attack, bona_fide)`` score pair."""
    attack, bona = _split(records)
    apcer = np.count_nonzero(attack >= threshold) / attack.size
    bpcer = np.count_nonzero(bona < threshold) / bona.size
    return float(apcer), float(bpcer)


def hter(apcer: float, bpcer: float) -> float:
    return (apcer + bpcer) / 2


def _sweep(attack: np.ndarray, bona: np.ndarray):
    """Error rates at every candidate threshold, thresholds descending.

    Candidates are +inf followed by the distinct scores; -inf gives the same
    rates as the smallest score and is therefore appended explicitly.
    """
    scores = np.unique(np.concatenate([attack, bona]))[::-1]
    thresholds = np.concatenate([[np.inf], scores, [-np.inf]])
    a_sorted = np.sort(attack)
    b_sorted = np.sort(bona)
    # count of scores >= t  ==  n - (count of scores < t)
    apcer = (attack.size - np.searchsorted(a_sorted, thresholds, side="left")) / attack.size
    bpcer = np.searchsorted(b_sorted, thresholds, side="left") / bona.size
    return thresholds, apcer, bpcer


def eer_threshold(records) -> float:
    """Threshold minimizing |APCER - BPCER|.

    Ties go to the smaller APCER + BPCER, then to the smaller threshold.
    """
    attack, bona = _split(records)
    thresholds, apcer, bpcer = _sweep(attack, bona)
    order = np.lexsort((thresholds, apcer + bpcer, np.abs(apcer - bpcer)))
    return float(thresholds[order[0]])


def auc(records) -> float:
    """Probability that a bona fide score beats an attack score, ties counted half."""
    attack, bona = _split(records)
    ranks = rankdata(np.concatenate([bona, attack]))
    u = ranks[: bona.size].sum() - bona.size * (bona.size + 1) / 2
    return float(u / (bona.size * attack.size))


def roc_points(records, with_thresholds: bool = False):
    """(APCER, 1 - BPCER) per distinct threshold, from (0, 0) up to (1, 1)."""
    attack, bona = _split(records)
    thresholds, apcer, bpcer = _sweep(attack, bona)
    # drop the trailing -inf candidate; it repeats the (1, 1) point
    thresholds, apcer, bpcer = thresholds[:-1], apcer[:-1], bpcer[:-1]
    points = [(float(a), float(1.0 - b)) for a, b in zip(apcer, bpcer)]
    if with_thresholds:
        return points, [float(t) for t in thresholds]
    return points


def roc_area(points: Sequence[tuple[float, float]]) -> float:
    """Trapezoidal area under an ROC point list sorted by x."""
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2))


ThresholdPolicy = Union[str, float]


def parse_threshold_policy(text: str) -> ThresholdPolicy:
    """``"eer"`` or ``"fixed:<value>"``."""
    if text in ("eer", "eer_on_test"):
        return "eer"
    if text.startswith("fixed:"):
        try:
            return float(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad fixed threshold in {text!r}") from None
    raise ValueError(f"threshold policy must be 'eer' or 'fixed:<value>', got {text!r}")


def evaluate_scores(records, policy: ThresholdPolicy = "eer") -> MetricsReport:
    attack, bona = _split(records)
    pair = (attack, bona)
    if policy == "eer":
        threshold, policy_name = eer_threshold(pair), "eer_on_test"
    else:
        threshold, policy_name = float(policy), "fixed"
    a, b = apcer_bpcer(pair, threshold)
    points, thresholds = roc_points(pair, with_thresholds=True)
    return MetricsReport(
        threshold=threshold,
        threshold_policy=policy_name,
        apcer=a,
        bpcer=b,
        hter=hter(a, b),
        auc=auc(pair),
        roc=points,
        roc_thresholds=thresholds,
        n_attack=int(attack.size),
        n_bona_fide=int(bona.size),
    )


def write_scores(records: Iterable[ScoreRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for r in records:
            w.writerow([r.dataset_id, r.video_id, r.frame_index, _LABEL_CSV[r.label], repr(float(r.score))])
    return path


def read_scores(path) -> list[ScoreRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCORE_HEADER:
            raise MetricsError(f"{path}: header must be {','.join(SCORE_HEADER)}")
        out = []
        for row in reader:
            try:
                out.append(ScoreRecord(row["dataset_id"], row["video_id"], int(row["frame_index"]),
                                       _CSV_LABEL[row["label"]], float(row["score"])))
            except (KeyError, ValueError) as e:
                raise MetricsError(f"{path}: bad row {reader.line_num}: {e}") from e
    return out


_REPORT_KEYS = ("threshold", "threshold_policy", "apcer", "bpcer", "hter", "auc", "n_attack", "n_bona_fide")


def write_report(report: MetricsReport, path) -> tuple[Path, Path]:
    """``key=value`` lines at ``path`` and the ROC points next to it as ``<stem>_roc.csv``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={getattr(report, k)!r}" if isinstance(getattr(report, k), float)
             else f"{k}={getattr(report, k)}" for k in _REPORT_KEYS]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    roc_path = path.with_name(path.stem + "_roc.csv")
    with roc_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("apcer", "one_minus_bpcer", "threshold"))
        thresholds = report.roc_thresholds or [float("nan")] * len(report.roc)
        for (x, y), t in zip(report.roc, thresholds):
            w.writerow((repr(x), repr(y), repr(t)))
    return path, roc_path


def read_report(path) -> MetricsReport:
    path = Path(path)
    values = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    roc, thresholds = [], []
    roc_path = path.with_name(path.stem + "_roc.csv")
    if roc_path.exists():
        with roc_path.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                roc.append((float(row["apcer"]), float(row["one_minus_bpcer"])))
                thresholds.append(float(row["threshold"]))
    return MetricsReport(
        threshold=float(values["threshold"]),
        threshold_policy=values["threshold_policy"],
        apcer=float(values["apcer"]),
        bpcer=float(values["bpcer"]),
        hter=float(values["hter"]),
        auc=float(values["auc"]),
        roc=roc,
        roc_thresholds=thresholds,
        n_attack=int(values.get("n_attack", 0)),
        n_bona_fide=int(values.get("n_bona_fide", 0)),
    )
