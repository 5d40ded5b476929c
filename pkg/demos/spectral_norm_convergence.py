# How fast does one-vector power iteration find the top singular value?
#
# The discriminator divides each kernel by sigma = u^T W v, with (u, v)
# advanced one step per training iteration.  sigma never overshoots the true
# top singular value, so W / sigma has spectral norm >= 1 and approaches 1
# at a rate set by the gap between the two largest singular values.  Random
# Gaussian matrices have a small gap, so a handful of kernels stay above
# 1 + 1e-3 after 50 steps.

import numpy as np
import torch

from wav2pix.networks import spectral_normalize

gen = torch.Generator().manual_seed(0)
print(f"{'kernel':>6} {'s2/s1':>7} " + " ".join(f"{n:>9}" for n in (1, 10, 50, 200, 1000)))
for k in range(20):
    w = torch.randn(64, 4, 4, 4, generator=gen, dtype=torch.float64) * 0.02
    u0 = torch.randn(64, generator=gen, dtype=torch.float64)
    u0 = u0 / u0.norm()
    s = np.linalg.svd(w.reshape(64, -1).numpy(), compute_uv=False)
    errs = []
    for n in (1, 10, 50, 200, 1000):
        out, _, _ = spectral_normalize(w, u0, n_iter=n)
        errs.append(np.linalg.svd(out.reshape(64, -1).numpy(), compute_uv=False)[0] - 1)
    print(f"{k:>6} {s[1] / s[0]:7.4f} " + " ".join(f"{e:9.2e}" for e in errs))
