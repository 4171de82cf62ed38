"""
Checking gradients of the full objective
========================================

The model and every loss are built on a small reverse-mode engine. This
script builds one random video, runs the forward pass, and compares the
analytic gradient of the weighted total loss with central differences.
"""

import numpy as np

from hamloc import autodiff as ad
from hamloc.losses import label_vector, total_loss
from hamloc.model import HamNetParams, forward

rng = np.random.default_rng(0)
params = HamNetParams.init(feature_dim=8, num_classes=3, seed=0)
x = rng.normal(size=(12, 8))
y = label_vector([1], 3)

# one forward pass gives the CAS, the attention and four video-level distributions
out = forward(x, params, gamma=0.2, k=3)
for name in ("p_base", "p_attn", "p_semisoft", "p_hard"):
    print(f"{name:11s}", np.round(getattr(out, name).data, 3))

losses = total_loss(out, y)
print({k: round(v, 4) for k, v in losses.values().items()})

# semi-soft values are detached during training; let them carry gradient here
# so backward and the finite differences see the same function
report = ad.grad_check(lambda: total_loss(forward(x, params, gamma=0.2, k=3, semisoft_grad=True), y).total,
                       params.tensors())
print(f"worst relative error {report.worst:.2e} -> {'ok' if report.ok else 'MISMATCH'}")
