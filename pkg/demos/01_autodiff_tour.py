"""
A short tour of the tape
========================

Build a tiny graph by hand, run it backwards, and compare against
central differences.
"""

import numpy as np

from tpa import autodiff as ad
from tpa.autodiff import Tape, Tensor
from tpa.gradcheck import grad_check

rng = np.random.default_rng(0)

# a linear layer, a relu and a mean: the smallest useful "network"
x = rng.standard_normal((4, 3))
W = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)

with Tape() as tape:
    out = ad.mean(ad.relu(ad.linear(x, W, b)))
    tape.backward(out)

print("loss      ", out.item())
print("dL/dW\n", W.grad)
print("dL/db     ", b.grad)

# the same thing checked numerically; relu kinks would be skipped automatically
res = grad_check(lambda w: ad.mean(ad.relu(ad.linear(x, w, b.data))), W.data.copy())
print(f"\ngrad_check passed={res.passed} max_rel_error={res.max_rel_error:.2e}")

# %%
# Temporal convolution is just another op. A causal kernel never looks ahead,
# which shows up directly in the gradient of the first output step.
X = Tensor(rng.standard_normal((10, 3)), requires_grad=True)
K = rng.standard_normal((3, 3, 5))
with Tape() as tape:
    Y = ad.conv1d(X, K, padding="causal", dilation=2)
    tape.backward(ad.sum(Y[4]))
print("\ninput frames that influence output step 4:", np.flatnonzero(np.abs(X.grad).sum(axis=1)))

# %%
# The registered checks cover every op plus both model losses.
from tpa.checks import format_table, timed_suite

rows, elapsed = timed_suite(seeds=range(2))
print()
print(format_table(rows, elapsed))
