"""NumPy implementation of the classifier kernels.

Fallback backend; the Cython extension in ``_kernels.pyx`` provides the same
four entry points. Parameter vectors are flat float64 arrays laid out as
[hidden weights (in x h, row-major), hidden bias, output weights (h x c,
row-major), output bias].
"""

import numpy as np

BACKEND_NAME = "numpy"

PROB_FLOOR = 1e-12


def _unpack(w, input_dim, hidden_dim, num_classes):
    n1 = input_dim * hidden_dim
    w1 = w[:n1].reshape(input_dim, hidden_dim)
    b1 = w[n1 : n1 + hidden_dim]
    n2 = n1 + hidden_dim
    w2 = w[n2 : n2 + hidden_dim * num_classes].reshape(hidden_dim, num_classes)
    b2 = w[n2 + hidden_dim * num_classes :]
    return w1, b1, w2, b2


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def forward_probs(w, x, input_dim, hidden_dim, num_classes):
    w1, b1, w2, b2 = _unpack(w, input_dim, hidden_dim, num_classes)
    a1 = np.tanh(x @ w1 + b1)
    return _softmax(a1 @ w2 + b2)


def loss_value(w, x, y, input_dim, hidden_dim, num_classes):
    probs = forward_probs(w, x, input_dim, hidden_dim, num_classes)
    p_true = probs[np.arange(x.shape[0]), y]
    return float(-np.mean(np.log(np.maximum(p_true, PROB_FLOOR))))


def loss_and_grad(w, x, y, input_dim, hidden_dim, num_classes):
    n = x.shape[0]
    w1, b1, w2, b2 = _unpack(w, input_dim, hidden_dim, num_classes)
    a1 = np.tanh(x @ w1 + b1)
    probs = _softmax(a1 @ w2 + b2)
    p_true = probs[np.arange(n), y]
    loss = float(-np.mean(np.log(np.maximum(p_true, PROB_FLOOR))))

    d2 = probs.copy()
    d2[np.arange(n), y] -= 1.0
    d2 /= n
    g_w2 = a1.T @ d2
    g_b2 = d2.sum(axis=0)
    d1 = (d2 @ w2.T) * (1.0 - a1 * a1)
    g_w1 = x.T @ d1
    g_b1 = d1.sum(axis=0)

    grad = np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])
    return loss, grad


def fisher_diag(w, x, y, input_dim, hidden_dim, num_classes):
    """Mean per-sample squared gradient of log p(y|x, w), coordinate-wise."""
    n = x.shape[0]
    w1, b1, w2, b2 = _unpack(w, input_dim, hidden_dim, num_classes)
    a1 = np.tanh(x @ w1 + b1)
    probs = _softmax(a1 @ w2 + b2)

    # Per-sample output-layer gradient of -log p; squares match +log p.
    g2 = probs.copy()
    g2[np.arange(n), y] -= 1.0
    f_w2 = (a1 * a1).T @ (g2 * g2) / n
    f_b2 = np.mean(g2 * g2, axis=0)
    g1 = (g2 @ w2.T) * (1.0 - a1 * a1)
    f_w1 = (x * x).T @ (g1 * g1) / n
    f_b1 = np.mean(g1 * g1, axis=0)

    return np.concatenate([f_w1.ravel(), f_b1, f_w2.ravel(), f_b2])
