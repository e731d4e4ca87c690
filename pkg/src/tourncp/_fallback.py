"""Pure-numpy implementations of the win-counting kernels."""
import numpy as np

_CHUNK_CELLS = 1 << 20


def count_affine_wins(A, B, C, D, ys, margin=0.0):
    """Per probe ``y``: number of games with ``|A y + B| > |C y + D| + margin``."""
    A, B, C, D = (np.ascontiguousarray(v, dtype=float) for v in (A, B, C, D))
    ys = np.ascontiguousarray(ys, dtype=float)
    out = np.empty(ys.size, dtype=np.int64)
    step = max(1, _CHUNK_CELLS // max(A.size, 1))
    for s in range(0, ys.size, step):
        y = ys[s:s + step, None]
        test = np.abs(A * y + B)
        train = np.abs(C * y + D) + margin
        out[s:s + step] = np.count_nonzero(test > train, axis=1)
    return out


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def count_lse_wins(mu, loglik, ys, sigma, test_y, test_l, train_l, train_y,
                   margin=0.0):
    """Win counts for Monte Carlo likelihood-product scores.

    For game ``i`` with draws ``k`` the test score is
    ``-sum_k exp(test_y * lf_ik(y) + test_l * loglik_ik)`` and the training
    score is ``-sum_k exp(train_l * loglik_ik + train_y * lf_ik(y))`` where
    ``lf_ik(y)`` is the Gaussian log density of ``y`` around ``mu_ik``.
    """
    mu = np.ascontiguousarray(mu, dtype=float)
    loglik = np.ascontiguousarray(loglik, dtype=float)
    ys = np.ascontiguousarray(ys, dtype=float)
    n, K = mu.shape
    c0 = -0.5 * np.log(2.0 * np.pi * sigma * sigma)
    inv = 1.0 / (2.0 * sigma * sigma)
    out = np.empty(ys.size, dtype=np.int64)
    step = max(1, _CHUNK_CELLS // max(n * K, 1))
    for s in range(0, ys.size, step):
        y = ys[s:s + step, None, None]
        lf = c0 - (y - mu) ** 2 * inv
        lt = _lse(test_y * lf + test_l * loglik, axis=2)
        ls = _lse(train_l * loglik + train_y * lf, axis=2)
        if margin == 0.0:
            wins = lt < ls
        else:
            wins = np.exp(ls) - np.exp(lt) > margin
        out[s:s + step] = np.count_nonzero(wins, axis=1)
    return out
