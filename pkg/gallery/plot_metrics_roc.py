"""
Error rates, EER threshold and ROC curves
=========================================

Scores are bona fide probabilities: a presentation is accepted when its
score reaches the threshold. Frame scores of a video are averaged first.
"""

from pathlib import Path

import numpy as np

from padkit.metrics import ScoreRecord, apcer_bpcer, evaluate_scores, fuse_video_scores
from padkit.reporting import plot_roc

out = Path("gallery_output")
rng = np.random.default_rng(0)

# three frames per video; attacks score lower on average
frames = []
for v in range(60):
    label = "attack" if v % 2 else "bona_fide"
    center = 0.35 if label == "attack" else 0.65
    for f in range(3):
        s = float(np.clip(rng.normal(center, 0.15), 0, 1))
        frames.append(ScoreRecord("demo", f"video{v}", f, label, s))

videos = fuse_video_scores(frames)
print(len(frames), "frame scores ->", len(videos), "video scores")

# a fixed threshold
print("APCER, BPCER at 0.5:", apcer_bpcer(videos, 0.5))

# the EER threshold is searched over the observed scores
report = evaluate_scores(videos, "eer")
print(f"EER threshold {report.threshold:.4f}: APCER {report.apcer:.3f} BPCER {report.bpcer:.3f} "
      f"HTER {report.hter:.3f} AUC {report.auc:.3f}")

# a harder second system for comparison
noisy = [ScoreRecord(r.dataset_id, r.video_id, r.frame_index, r.label,
                     float(np.clip(r.score + rng.normal(0, 0.2), 0, 1))) for r in videos]
path = plot_roc([("clean", report), ("noisy", evaluate_scores(noisy))], out / "roc.png")
print("wrote", path)
