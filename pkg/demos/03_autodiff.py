"""
Gradients by hand and by tape
=============================

The tensor library records each op and replays it backwards.
"""

import numpy as np

import kuridiom.numcore as nc

rng = np.random.default_rng(0)
x = nc.Tensor(rng.normal(size=(4, 3)))
w = nc.Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="w")
b = nc.Tensor(np.zeros(2), requires_grad=True, name="b")
y = np.array([0, 1, 1, 0])

loss = nc.cross_entropy(nc.linear(x, w, b), y)
gw, gb = nc.backward(loss, [w, b])
print("loss", loss.item())

# same gradient from the closed form: x.T @ (softmax - onehot) / n
z = x.data @ w.data + b.data
p = np.exp(z - z.max(1, keepdims=True))
p /= p.sum(1, keepdims=True)
p[np.arange(4), y] -= 1
print(np.abs(gw - x.data.T @ p / 4).max(), np.abs(gb - p.mean(0)).max())

# and from central differences on one entry
h = 1e-6
w.data[1, 0] += h
up = nc.cross_entropy(nc.linear(x, w, b), y).item()
w.data[1, 0] -= 2 * h
down = nc.cross_entropy(nc.linear(x, w, b), y).item()
w.data[1, 0] += h
print(gw[1, 0], (up - down) / (2 * h))

# an LSTM step, masked so padded rows keep their old state
h0 = nc.Tensor(np.zeros((2, 3)))
c0 = nc.Tensor(np.zeros((2, 3)))
wi = nc.Tensor(rng.normal(size=(4, 12)) * 0.3, requires_grad=True)
wh = nc.Tensor(rng.normal(size=(3, 12)) * 0.3, requires_grad=True)
bias = nc.Tensor(np.zeros(12), requires_grad=True)
h1, c1 = nc.lstm_cell(nc.Tensor(rng.normal(size=(2, 4))), h0, c0, wi, wh, bias)
keep = np.array([[True], [False]])
h1 = nc.where(keep, h1, h0)
print(h1.data)
grads = nc.backward(nc.sum(nc.mul(h1, h1)), [wi, wh, bias])
print([g.shape for g in grads])
