"""Independent numpy forward pass for the golden TiDE vector.

Parameters are filled by formula in the flat layout order used by the
library: each residual block stores hidden.w, hidden.b, output.w, output.b,
skip.w, skip.b and (when normalized) gamma, beta; blocks appear as
projection, encoder0, decoder0, temporal, then the global skip w, b.
Weights are stored row-major with shape (inputs, outputs).
"""
import numpy as np

L, H, R, S = 8, 4, 2, 1
HID, Q, PD, TH = 256, 4, 4, 32
EPS = 1e-5


class Params:
    def __init__(self):
        self.i = 0

    def take(self, rows, cols):
        idx = np.arange(self.i, self.i + rows * cols)
        self.i += rows * cols
        return (0.05 * np.sin(0.37 * idx + 0.1)).reshape(rows, cols)


def block(p, n_in, n_hid, n_out, norm):
    w1, b1 = p.take(n_in, n_hid), p.take(1, n_hid)
    w2, b2 = p.take(n_hid, n_out), p.take(1, n_out)
    ws, bs = p.take(n_in, n_out), p.take(1, n_out)
    g, b = (p.take(1, n_out), p.take(1, n_out)) if norm else (None, None)

    def f(x):
        z = np.maximum(x @ w1 + b1, 0.0) @ w2 + b2 + x @ ws + bs
        if norm:
            mu = z.mean(axis=1, keepdims=True)
            var = ((z - mu) ** 2).mean(axis=1, keepdims=True)
            z = (z - mu) / np.sqrt(var + EPS) * g + b
        return z

    return f


p = Params()
proj = block(p, R, HID, Q, True)
enc = block(p, L + (L + H) * Q + S + 1, HID, HID, True)
dec = block(p, HID, HID, PD * H, True)
temporal = block(p, PD + Q, TH, 1, False)
gw, gb = p.take(L, H), p.take(1, H)

y = np.cos(0.3 * np.arange(L))[None, :]
x = np.array([[np.sin(0.2 * t + c) for c in range(R)] for t in range(L + H)])
statics = np.array([[0.25, 4 / 48]])

mu = y.mean()
sigma = np.sqrt(((y - mu) ** 2).mean() + 1e-10)
yn = (y - mu) / sigma
px = proj(x)
e = enc(np.concatenate([yn, px.reshape(1, -1), statics], axis=1))
g = dec(e).reshape(H, PD)
td = temporal(np.concatenate([g, px[L:]], axis=1)).reshape(1, H)
out = (td + yn @ gw + gb) * sigma + mu
print(p.i)
print(", ".join(f"{v:.15e}" for v in out.ravel()))
