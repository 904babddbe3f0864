"""
Checking backprop against finite differences
============================================

Every layer in ``reskws.nn`` has a hand-written backward pass. Here we compare
one of them, a dilated residual block, against central differences.
"""

import numpy as np

from reskws import nn

rng = np.random.default_rng(3)
block = nn.ResidualBlock(2, dilations=(2, 4), rng=rng)
for p in block.parameters():
    p.data = p.data.astype(np.float64)

x = rng.normal(size=(2, 2, 16, 12))
r = rng.normal(size=x.shape)


def loss():
    return float(np.sum(block.forward(x, train=True) * r))


loss()
analytic = block.backward(r)

h = 1e-5
numeric = np.zeros_like(x)
for idx in np.ndindex(x.shape):
    old = x[idx]
    x[idx] = old + h
    up = loss()
    x[idx] = old - h
    down = loss()
    x[idx] = old
    numeric[idx] = (up - down) / (2 * h)

rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
print("max relative error:", rel.max())

# the block really is F(x) + x
body = block.body.forward(x, train=True)
print("identity path exact:", np.array_equal(block.forward(x, train=True), body + x))
