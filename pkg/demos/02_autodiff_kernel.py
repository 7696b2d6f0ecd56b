# coding: utf-8

# # A small reverse-mode autodiff kernel
#
# Every model in the package is trained with this kernel: numpy arrays
# wrapped in Tensors, a handful of differentiable ops, and Adam.

import numpy as np

from conceptrec import numkernel as nk

rng = np.random.default_rng(0)


# ## Gradients by hand and by the kernel
#
# f(W, x) = sum(tanh(W @ x)) has gradient (1 - tanh^2) x^T with respect to W.

W = nk.parameter(rng.standard_normal((3, 4)))
x = nk.Tensor(rng.standard_normal(4))
f = nk.sum(nk.tanh(nk.matmul(W, x)))
(gW,) = nk.grad(f, [W])

by_hand = np.outer(1 - np.tanh(W.data @ x.data) ** 2, x.data)
print("max difference:", np.abs(gW - by_hand).max())


# ## Central differences
#
# The same check the test-suite runs for every op, written out once.

def numeric(fn, v, h=1e-6):
    g = np.zeros_like(v)
    for i in np.ndindex(v.shape):
        up, down = v.copy(), v.copy()
        up[i] += h
        down[i] -= h
        g[i] = (fn(up) - fn(down)) / (2 * h)
    return g


logits = rng.standard_normal((2, 5))
target = np.array([1, 3])


def loss_of(values):
    z = nk.Tensor(values) if not isinstance(values, nk.Tensor) else values
    return nk.scale(nk.sum(nk.pick(nk.log_softmax(z), target)), -0.5)


Z = nk.parameter(logits)
(analytic,) = nk.grad(loss_of(Z), [Z])
print("softmax cross-entropy gradient error:", np.abs(analytic - numeric(lambda v: loss_of(v).item(), logits)).max())


# ## Fitting a line with Adam

xs = np.linspace(-1, 1, 50)
ys = 2.5 * xs - 0.7 + 0.05 * rng.standard_normal(50)
a, b = nk.parameter(0.0), nk.parameter(0.0)
opt = nk.Adam([a, b], lr=0.05)
for step in range(400):
    resid = nk.sub(nk.add(nk.mul(nk.Tensor(xs), a), b), nk.Tensor(ys))
    loss = nk.mean(nk.mul(resid, resid))
    opt.zero_grad()
    nk.backward(loss)
    opt.step()
print(f"slope {a.item():.3f}, intercept {b.item():.3f}")

# Non-finite values are caught where they appear rather than propagating.
try:
    nk.exp(nk.Tensor([1000.0]))
except nk.NonFiniteError as err:
    print("caught:", err)
