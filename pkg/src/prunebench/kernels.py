"""Hot inner loops: MLP loss/gradient, fused SGD steps, top-M selection.

Every kernel exists twice: a ``*_nb`` version compiled with numba and a
``*_np`` version in plain numpy. The unsuffixed names are bound to one of the
two at import time according to :mod:`prunebench._accel`.

Parameter vectors use the canonical flat layout ``W1 (h, d) row-major, b1 (h),
W2 (C, h) row-major, b2 (C)``; with ``h == 0`` it collapses to ``W (C, d), b (C)``.
"""
import math

import numpy as np

from prunebench._accel import USE_NUMBA, njit

# reassociation lets LLVM vectorise the dot-product reductions; NaN/inf semantics stay intact
_FM = {"reassoc", "contract"}


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------

def unpack_np(theta, d, h, C):
    if h == 0:
        W = theta[: C * d].reshape(C, d)
        b = theta[C * d : C * d + C]
        return None, None, W, b
    o1 = h * d
    o2 = o1 + h
    o3 = o2 + C * h
    return (
        theta[:o1].reshape(h, d),
        theta[o1:o2],
        theta[o2:o3].reshape(C, h),
        theta[o3 : o3 + C],
    )


def logits_np(theta, d, h, C, X):
    W1, b1, W2, b2 = unpack_np(theta, d, h, C)
    if h == 0:
        return X @ W2.T + b2
    A1 = np.maximum(X @ W1.T + b1, 0.0)
    return A1 @ W2.T + b2


def loss_grad_np(theta, d, h, C, X, y, idx, grad):
    """Per-sample losses of rows ``idx``; writes the mean-loss gradient into ``grad``."""
    Xb = X[idx]
    yb = y[idx]
    B = Xb.shape[0]
    W1, b1, W2, b2 = unpack_np(theta, d, h, C)
    if h == 0:
        A1 = Xb
    else:
        Z1 = Xb @ W1.T + b1
        A1 = np.maximum(Z1, 0.0)
    Z2 = A1 @ W2.T + b2
    m = Z2.max(axis=1, keepdims=True)
    E = np.exp(Z2 - m)
    S = E.sum(axis=1, keepdims=True)
    rows = np.arange(B)
    losses = (np.log(S[:, 0]) + m[:, 0]) - Z2[rows, yb]
    G = E / S
    G[rows, yb] -= 1.0
    G /= B
    gW1, gb1, gW2, gb2 = unpack_np(grad, d, h, C)
    gW2[...] = G.T @ A1
    gb2[...] = G.sum(axis=0)
    if h > 0:
        D1 = (G @ W2) * (Z1 > 0.0)
        gW1[...] = D1.T @ Xb
        gb1[...] = D1.sum(axis=0)
    return losses


def sgd_steps_np(theta, d, h, C, X, y, order, starts, lrs, loss_sum, counts):
    """Plain SGD over consecutive slices of ``order``; accumulates pre-update losses."""
    grad = np.empty_like(theta)
    for s in range(lrs.shape[0]):
        idx = order[starts[s] : starts[s + 1]]
        losses = loss_grad_np(theta, d, h, C, X, y, idx, grad)
        loss_sum[idx] += losses
        counts[idx] += 1
        theta -= lrs[s] * grad


def topm_mask_np(scores, M):
    """Top-M under (score desc, index asc) via one ``np.partition`` threshold."""
    N = scores.shape[0]
    mask = np.zeros(N, dtype=np.bool_)
    if M == N:
        mask[:] = True
        return mask
    thr = np.partition(scores, N - M)[N - M]
    above = scores > thr
    mask[above] = True
    need = M - int(above.sum())
    ties = np.flatnonzero(scores == thr)
    mask[ties[:need]] = True
    return mask


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True, fastmath=_FM)
def _linear_loss_grad_nb(theta, d, C, X, y, idx, grad):
    B = idx.shape[0]
    losses = np.empty(B)
    inv_b = 1.0 / B
    ob = C * d
    z = np.empty(C)
    for r in range(B):
        i = idx[r]
        m = -np.inf
        for c in range(C):
            acc = theta[ob + c]
            base = c * d
            for k in range(d):
                acc += theta[base + k] * X[i, k]
            z[c] = acc
            if acc > m:
                m = acc
        s = 0.0
        for c in range(C):
            s += math.exp(z[c] - m)
        yi = y[i]
        losses[r] = (math.log(s) + m) - z[yi]
        for c in range(C):
            g = math.exp(z[c] - m) / s
            if c == yi:
                g -= 1.0
            g *= inv_b
            base = c * d
            for k in range(d):
                grad[base + k] += g * X[i, k]
            grad[ob + c] += g
    return losses


@njit(cache=True, nogil=True, fastmath=_FM)
def loss_grad_nb(theta, d, h, C, X, y, idx, grad):
    grad[:] = 0.0
    if h == 0:
        return _linear_loss_grad_nb(theta, d, C, X, y, idx, grad)
    B = idx.shape[0]
    losses = np.empty(B)
    inv_b = 1.0 / B
    o1 = h * d
    o2 = o1 + h
    o3 = o2 + C * h
    z1 = np.empty(h)
    a1 = np.empty(h)
    dz1 = np.empty(h)
    z2 = np.empty(C)
    for r in range(B):
        i = idx[r]
        for j in range(h):
            acc = theta[o1 + j]
            base = j * d
            for k in range(d):
                acc += theta[base + k] * X[i, k]
            z1[j] = acc
            a1[j] = acc if acc > 0.0 else 0.0
        m = -np.inf
        for c in range(C):
            acc = theta[o3 + c]
            base = o2 + c * h
            for j in range(h):
                acc += theta[base + j] * a1[j]
            z2[c] = acc
            if acc > m:
                m = acc
        s = 0.0
        for c in range(C):
            s += math.exp(z2[c] - m)
        yi = y[i]
        losses[r] = (math.log(s) + m) - z2[yi]
        for j in range(h):
            dz1[j] = 0.0
        for c in range(C):
            g = math.exp(z2[c] - m) / s
            if c == yi:
                g -= 1.0
            g *= inv_b
            base = o2 + c * h
            for j in range(h):
                grad[base + j] += g * a1[j]
                dz1[j] += theta[base + j] * g
            grad[o3 + c] += g
        for j in range(h):
            if z1[j] > 0.0:
                gj = dz1[j]
                base = j * d
                for k in range(d):
                    grad[base + k] += gj * X[i, k]
                grad[o1 + j] += gj
    return losses


@njit(cache=True, nogil=True)
def sgd_steps_nb(theta, d, h, C, X, y, order, starts, lrs, loss_sum, counts):
    grad = np.empty_like(theta)
    for s in range(lrs.shape[0]):
        idx = order[starts[s] : starts[s + 1]]
        losses = loss_grad_nb(theta, d, h, C, X, y, idx, grad)
        for r in range(idx.shape[0]):
            loss_sum[idx[r]] += losses[r]
            counts[idx[r]] += 1
        lr = lrs[s]
        for p in range(theta.shape[0]):
            theta[p] -= lr * grad[p]


@njit(cache=True, nogil=True)
def _before(scores, a, b):
    # strict total order: higher score first, lower index on ties
    sa = scores[a]
    sb = scores[b]
    return sa > sb or (sa == sb and a < b)


@njit(cache=True, nogil=True)
def topm_mask_nb(scores, M):
    """Quickselect on an index array under the (score desc, index asc) order."""
    N = scores.shape[0]
    mask = np.zeros(N, dtype=np.bool_)
    if M == N:
        mask[:] = True
        return mask
    perm = np.arange(N)
    lo = 0
    hi = N - 1
    k = M - 1
    # deterministic pseudo-random pivots (LCG) keep expected O(N) on adversarial input
    state = np.uint64(0x9E3779B97F4A7C15)
    while lo < hi:
        state = state * np.uint64(6364136223846793005) + np.uint64(1442695040888963407)
        p = lo + int((state >> np.uint64(33)) % np.uint64(hi - lo + 1))
        pivot = perm[p]
        perm[p] = perm[hi]
        perm[hi] = pivot
        store = lo
        for i in range(lo, hi):
            if _before(scores, perm[i], pivot):
                tmp = perm[store]
                perm[store] = perm[i]
                perm[i] = tmp
                store += 1
        perm[hi] = perm[store]
        perm[store] = pivot
        if store == k:
            break
        elif store < k:
            lo = store + 1
        else:
            hi = store - 1
    for i in range(M):
        mask[perm[i]] = True
    return mask


if USE_NUMBA:
    loss_grad = loss_grad_nb
    sgd_steps = sgd_steps_nb
    topm_mask = topm_mask_nb
else:
    loss_grad = loss_grad_np
    sgd_steps = sgd_steps_np
    topm_mask = topm_mask_np

logits = logits_np
