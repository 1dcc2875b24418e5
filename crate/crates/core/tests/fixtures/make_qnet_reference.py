"""Prints reference action values for tests/golden.rs from a plain numpy forward pass."""
import numpy as np

N = 9
FEAT, D1, D2, HID = 5, 4, 3, 2


def params(n):
    return 0.5 * np.sin(0.7 * np.arange(n) + 0.3)


def state():
    feats = np.cos(1.3 * np.arange(FEAT))
    rows = np.ones((9, N))
    for r, a in enumerate([3, 0, 8]):  # newest first
        rows[r] = np.eye(N)[a]
    return np.concatenate([feats, rows.ravel()]), rows


def take(p, shapes):
    out, o = [], 0
    for s in shapes:
        k = int(np.prod(s))
        out.append(p[o:o + k].reshape(s))
        o += k
    assert o == len(p)
    return out


def sig(x):
    return 1 / (1 + np.exp(-x))


def lstm_fcn():
    shapes = [(FEAT, D1), (D1,), (D1, D2), (D2,), (N, 4 * HID), (HID, 4 * HID), (4 * HID,), (D2 + HID, N), (N,)]
    n = sum(int(np.prod(s)) for s in shapes)
    w1, b1, w2, b2, wx, wh, bl, wo, bo = take(params(n), shapes)
    x, rows = state()
    h2 = np.maximum(np.maximum(x[:FEAT] @ w1 + b1, 0) @ w2 + b2, 0)
    h, c = np.zeros(HID), np.zeros(HID)
    for row in rows[::-1]:
        z = row @ wx + h @ wh + bl
        i, f, g, o = sig(z[:HID]), sig(z[HID:2 * HID]), np.tanh(z[2 * HID:3 * HID]), sig(z[3 * HID:])
        c = f * c + i * g
        h = o * np.tanh(c)
    return np.concatenate([h2, h]) @ wo + bo


def mlp(hidden=3):
    x, _ = state()
    shapes = [(len(x), hidden), (hidden,), (hidden, N), (N,)]
    n = sum(int(np.prod(s)) for s in shapes)
    w1, b1, w2, b2 = take(params(n), shapes)
    return np.maximum(x @ w1 + b1, 0) @ w2 + b2


for name, q in [("LSTM_FCN", lstm_fcn()), ("MLP", mlp())]:
    print(f"const {name}: [f64; 9] = [{', '.join(f'{v:.15e}' for v in q)}];")
