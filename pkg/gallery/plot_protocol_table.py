"""
Cross-dataset protocol table
============================

Every scenario trains on some datasets and tests on a held-out one. The
table lists HTER per scenario with a mean ± sample-std row. Here four
tiny toy datasets stand in for real ones and training is a single epoch,
so the numbers only show the layout.
"""

import tempfile
from pathlib import Path

from padkit.data import AugmentationConfig
from padkit.models import PadModelConfig
from padkit.reporting import TableRow, render_results_table
from padkit.toy import NO_CAST, WARM_CAST, make_toy_corpus
from padkit.training import STANDARD_PROTOCOLS, TrainConfig, run_protocols

root = Path(tempfile.mkdtemp())
casts = {"C": NO_CAST, "I": WARM_CAST, "M": NO_CAST, "O": WARM_CAST}
datasets = {d: make_toy_corpus(root, d, n_pairs=16, size=32, cast=c, seed=i)
            for i, (d, c) in enumerate(casts.items())}

template = TrainConfig(batch_size=16, epochs=1, data_root=str(root), cache_images=True,
                       model=PadModelConfig(input_size=32), augmentation=AugmentationConfig(enabled=False))
table = run_protocols(STANDARD_PROTOCOLS, template, datasets)
print(render_results_table(table.rows))

# rows can also be given directly, in percent
print(render_results_table([TableRow("C→I", 10.0), TableRow("C→M", 20.0), TableRow("C→O", None)]))
