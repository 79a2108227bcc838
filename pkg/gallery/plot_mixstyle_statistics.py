"""
What MixStyle does to feature statistics
========================================

A source feature map is normalized per channel and re-styled with a blend
of its own mean/std and those of a paired target map. The blend weight
comes from Beta(0.1, 0.1), so most draws sit near 0 or 1.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

from padkit.mixstyle import MixStyleConfig, channel_stats, mixstyle_forward  # noqa: E402

out = Path("gallery_output")
out.mkdir(exist_ok=True)
torch.manual_seed(0)

# one source and one target map, 4 channels, different styles
x_s = torch.randn(1, 4, 14, 14) * 0.5 + 1.0
x_a = torch.randn(1, 4, 14, 14) * 2.0 - 3.0
cfg = MixStyleConfig(apply_probability=1.0)

lams = np.linspace(0, 1, 11)
mus, sigmas = [], []
for lam in lams:
    y = mixstyle_forward(x_s, x_a, cfg, np.random.default_rng(0), lam=lam, force=True)
    st = channel_stats(y, 0.0)
    mus.append(st.mu[0, 0].item())
    sigmas.append(st.sigma[0, 0].item())

# the output statistics move linearly between the two styles
src, tgt = channel_stats(x_s), channel_stats(x_a)
print("source mu/sigma", src.mu[0, 0].item(), src.sigma[0, 0].item())
print("target mu/sigma", tgt.mu[0, 0].item(), tgt.sigma[0, 0].item())

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
ax1.plot(lams, mus, "o-", label="mean of output")
ax1.plot(lams, sigmas, "s-", label="std of output")
ax1.set_xlabel("lambda")
ax1.legend()

# typical mixing weights
draws = np.random.default_rng(1).beta(0.1, 0.1, 5000)
ax2.hist(draws, bins=40)
ax2.set_xlabel("lambda ~ Beta(0.1, 0.1)")
fig.tight_layout()
fig.savefig(out / "mixstyle_statistics.png", dpi=100)

# outside training the layer is the identity
y = mixstyle_forward(x_s, x_a, cfg, np.random.default_rng(0), training=False)
print("identity at inference:", torch.equal(y, x_s))
