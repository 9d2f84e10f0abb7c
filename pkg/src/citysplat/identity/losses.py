"""Closed-form 2D cross-entropy and 3D neighbour-KL losses with their gradients.

The classifier head maps a D-dimensional code to K logits as
``logits = code @ weight.T + bias``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DEFAULT_CHUNK = 65536


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class Grads:
    codes: np.ndarray
    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def zeros(cls, codes, weight, bias) -> "Grads":
        return cls(np.zeros_like(codes), np.zeros_like(weight), np.zeros_like(bias))

    def add(self, other: "Grads", scale: float = 1.0) -> "Grads":
        return Grads(self.codes + scale * other.codes, self.weight + scale * other.weight,
                     self.bias + scale * other.bias)


def loss_2d(W: sp.csr_matrix, codes: np.ndarray, weight: np.ndarray, bias: np.ndarray,
            labels: np.ndarray, valid: np.ndarray, chunk: int = DEFAULT_CHUNK):
    """Mean cross-entropy over valid pixels of one view.

    ``labels`` holds class indices per pixel (row-major); ``valid`` selects
    the pixels in the loss. Chunking bounds memory and does not change the
    value beyond summation-order rounding.
    """
    k = weight.shape[0]
    rows = np.flatnonzero(valid)
    grads = Grads.zeros(codes, weight, bias)
    if rows.size == 0:
        return 0.0, grads
    lab = labels[rows]
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError(f"label index outside [0, {k})")
    n = rows.size
    total = 0.0
    for s in range(0, n, chunk):
        r = rows[s : s + chunk]
        y = lab[s : s + chunk]
        Wc = W[r]
        E = Wc @ codes
        logits = E @ weight.T + bias
        lsm = log_softmax(logits)
        total += -lsm[np.arange(r.size), y].sum()
        g = np.exp(lsm)
        g[np.arange(r.size), y] -= 1.0
        g /= n
        grads.weight += g.T @ E
        grads.bias += g.sum(axis=0)
        grads.codes += Wc.T @ (g @ weight)
    return total / n, grads


def kl_rows(logits_p: np.ndarray, logits_q: np.ndarray) -> np.ndarray:
    lp, lq = log_softmax(logits_p), log_softmax(logits_q)
    return (np.exp(lp) * (lp - lq)).sum(axis=-1)


def loss_3d(codes: np.ndarray, weight: np.ndarray, bias: np.ndarray, sample: np.ndarray,
            neighbors: np.ndarray):
    """``sum_j sum_i KL(p_j || p_{j_i}) / (m k K)`` over sampled Gaussians and their neighbours."""
    sample = np.asarray(sample, dtype=np.int64)
    nbr = np.asarray(neighbors, dtype=np.int64)[sample]  # (m, k)
    m, k = nbr.shape
    K = weight.shape[0]
    norm = 1.0 / (m * k * K)

    zj = codes[sample] @ weight.T + bias  # (m, K)
    zn = codes[nbr.ravel()] @ weight.T + bias  # (m*k, K)
    lp = np.repeat(log_softmax(zj), k, axis=0)
    lq = log_softmax(zn)
    p = np.exp(lp)
    q = np.exp(lq)
    kl = (p * (lp - lq)).sum(axis=1)
    loss = float(kl.sum() * norm)

    # dKL/dz_p = p * (log p - log q - KL);  dKL/dz_q = q - p
    gzp = norm * (p * (lp - lq - kl[:, None]))
    gzq = norm * (q - p)
    gzj = gzp.reshape(m, k, K).sum(axis=1)

    grads = Grads.zeros(codes, weight, bias)
    grads.weight = gzj.T @ codes[sample] + gzq.T @ codes[nbr.ravel()]
    grads.bias = gzj.sum(axis=0) + gzq.sum(axis=0)
    np.add.at(grads.codes, sample, gzj @ weight)
    np.add.at(grads.codes, nbr.ravel(), gzq @ weight)
    return loss, grads
