"""A tour of the reverse-mode autodiff engine.

Build tensors, compose the ops the traffic model uses, check an analytic
gradient against central finite differences, and run a few Adam steps on
a tiny least-squares problem.
"""

import numpy as np

from t4c import autodiff as ad
from t4c.autodiff import ParamStore, Tensor

# --- tensors and a few ops ---------------------------------------------------

x = Tensor([[1.0, -2.0], [0.5, 3.0]])
w = Tensor(np.array([[0.3, -0.1], [0.8, 0.4]]), requires_grad=True)
h = ad.relu(ad.matmul(x, w))
print("relu(x @ w) =\n", h.data)

# softmax rows sum to one, stabilized against large logits
logits = Tensor([[100.0, 101.0, 99.0]])
print("softmax:", ad.softmax(logits).data, "sum:", ad.softmax(logits).data.sum())

# mean aggregation over a neighbor list; empty neighborhoods give zeros
feats = Tensor(np.arange(8.0).reshape(4, 2))
neighbors = [(1, 2), (0,), (), (0, 1, 2)]
print("neighbor means:\n", ad.mean_neighbor_aggregate(feats, neighbors).data)

# --- gradients vs finite differences -----------------------------------------

loss = ad.reduce_mean(ad.mul(h, h))
loss.backward()
analytic = w.grad.copy()

h_step = 1e-5
numeric = np.zeros_like(w.data)
for i in range(w.data.shape[0]):
    for j in range(w.data.shape[1]):
        orig = w.data[i, j]
        w.data[i, j] = orig + h_step
        up = ad.reduce_mean(ad.mul(ad.relu(ad.matmul(x, w)), ad.relu(ad.matmul(x, w)))).item()
        w.data[i, j] = orig - h_step
        down = ad.reduce_mean(ad.mul(ad.relu(ad.matmul(x, w)), ad.relu(ad.matmul(x, w)))).item()
        w.data[i, j] = orig
        numeric[i, j] = (up - down) / (2 * h_step)
print("max |analytic - numeric|:", np.abs(analytic - numeric).max())

# --- masked losses ------------------------------------------------------------

ce_logits = Tensor(np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), requires_grad=True)
labels = np.array([0, -1])  # second row masked out
ce, n_rows = ad.weighted_cross_entropy(ce_logits, labels, np.array([2.0, 1.0, 1.0]))
print(f"weighted CE over {n_rows} row(s): {ce.item():.6f}")

# --- Adam on a one-parameter fit ----------------------------------------------

store = ParamStore()
slope = store.add("slope", np.array([0.0]))
xs = np.linspace(-1, 1, 20)
ys = 2.5 * xs
for step in range(200):
    pred = ad.mul(slope, Tensor(xs))
    fit, _ = ad.mse(pred, ys)
    store.zero_grad()
    fit.backward()
    ad.adam_step(store, lr=0.05)
print("fitted slope (target 2.5):", slope.data[0])
