"""
Domain shift on a toy corpus
============================

Bona fide images are smooth color fields; attacks add a moire grating and
a small color shift. Domain B applies a random color cast to every image.
A source-only model trained on A is compared with one that also sees
unlabeled B through MixStyle. Then the learned features are embedded
with t-SNE.

Set ``EPOCHS`` higher for a clearer gap (the acceptance suite uses 20).
"""

import os
import tempfile
from pathlib import Path

from padkit.data import AugmentationConfig
from padkit.mixstyle import MixStyleConfig
from padkit.models import PadModelConfig
from padkit.reporting import extract_features, plot_embedding, plot_roc, project_2d, sample_per_dataset
from padkit.toy import NO_CAST, RANDOM_CAST, make_toy_corpus
from padkit.training import ImageSource, TrainConfig, evaluate_model, train

EPOCHS = int(os.environ.get("EPOCHS", "8"))
out = Path("gallery_output")
root = Path(tempfile.mkdtemp())

A = make_toy_corpus(root, "A", n_pairs=200, cast=NO_CAST, seed=1)
B = make_toy_corpus(root, "B", n_pairs=200, cast=RANDOM_CAST, seed=3)
B_test = make_toy_corpus(root, "B_test", n_pairs=100, cast=RANDOM_CAST, seed=4)

common = dict(source_manifests=[A], batch_size=32, epochs=EPOCHS, data_root=str(root), cache_images=True,
              augmentation=AugmentationConfig(enabled=False))
runs = {
    "source only": TrainConfig(mode="source_only", model=PadModelConfig(input_size=64), **common),
    "MixStyle DA": TrainConfig(mode="mixstyle_da", target_manifest=B,
                               model=PadModelConfig(input_size=64, mixstyle=MixStyleConfig()), **common),
}

reports, models = [], {}
for name, cfg in runs.items():
    model, log = train(cfg)
    _, _, rep = evaluate_model(model, B_test, "eer", root=root)
    print(f"{name:12s} final loss {log[-1]['mean_loss']:.3f}  HTER on B {100 * rep.hter:.2f}%")
    reports.append((name, rep))
    models[name] = model

plot_roc(reports, out / "toy_roc.png")

# features of both domains under the adapted model
samples = sample_per_dataset([A, B], 100, seed=0)
feats = extract_features(models["MixStyle DA"], samples, ImageSource(64, root=root))
points = project_2d([f for _, f in feats], seed=0)
plot_embedding(samples, points, out / "toy_embedding.png", color_key="class")
print("wrote", out / "toy_roc.png", "and", out / "toy_embedding.png")
