"""Brute-force reference implementations used only by the test-suite.

None of these share code with the package; they are deliberately slow and
literal so they can be trusted as independent checks.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def mirror(i: int, n: int) -> int:
    """Whole-sample symmetric index into a signal of length ``n``."""
    if n == 1:
        return 0
    period = 2 * n - 2
    i %= period
    return period - i if i >= n else i


def filter_bank_1d(x):
    """Integer 5/3 analysis by filtering the extended signal and downsampling.

    The high-pass response at an odd position p is
    ceil(x(p) - (x(p-1) + x(p+1)) / 2); the low-pass response at an even
    position is floor(x(p) + (h(p-1) + h(p+1)) / 4 + 1/2), where h is the
    high-pass response evaluated on the extended signal.
    """
    x = [int(v) for v in x]
    n = len(x)

    def xe(p):
        return x[mirror(p, n)]

    def high(p):
        return math.ceil(Fraction(xe(p)) - Fraction(xe(p - 1) + xe(p + 1), 2))

    def low(p):
        return math.floor(Fraction(xe(p)) + Fraction(high(p - 1) + high(p + 1), 4)
                          + Fraction(1, 2))

    lows = [low(p) for p in range(0, n, 2)]
    highs = [high(p) for p in range(1, n, 2)]
    return lows, highs


def filter_bank_2d_level(a):
    """One 2-D level: columns first, then rows. Returns LL, HL, LH, HH."""
    a = np.asarray(a, dtype=np.int64)
    h, w = a.shape
    lo_rows, hi_rows = (h + 1) // 2, h // 2
    L = np.zeros((lo_rows, w), dtype=np.int64)
    H = np.zeros((hi_rows, w), dtype=np.int64)
    for c in range(w):
        lo, hi = filter_bank_1d(a[:, c])
        L[:, c] = lo
        H[:, c] = hi

    def rows(band):
        lo_cols, hi_cols = (w + 1) // 2, w // 2
        lo_out = np.zeros((band.shape[0], lo_cols), dtype=np.int64)
        hi_out = np.zeros((band.shape[0], hi_cols), dtype=np.int64)
        for r in range(band.shape[0]):
            lo, hi = filter_bank_1d(band[r, :])
            lo_out[r, :] = lo
            hi_out[r, :] = hi
        return lo_out, hi_out

    LL, HL = rows(L)
    LH, HH = rows(H)
    return LL, HL, LH, HH


def filter_bank_2d(a, levels):
    """Multi-level oracle; returns (LL, [(HL, LH, HH) per depth, finest first])."""
    details = []
    ll = np.asarray(a, dtype=np.int64)
    for _ in range(levels):
        ll, hl, lh, hh = filter_bank_2d_level(ll)
        details.append((hl, lh, hh))
    return ll, details


def conv2d_naive(x, k, b):
    """Same-padded stride-1 convolution, NHWC input and (k, k, Cin, Cout) kernel."""
    B, H, W, C = x.shape
    kk, _, _, O = k.shape
    pad = kk // 2
    out = np.zeros((B, H, W, O), dtype=np.float64)
    for n in range(B):
        for y in range(H):
            for xx in range(W):
                for o in range(O):
                    acc = float(b[o])
                    for dy in range(kk):
                        for dx in range(kk):
                            yy, xc = y + dy - pad, xx + dx - pad
                            if 0 <= yy < H and 0 <= xc < W:
                                for c in range(C):
                                    acc += x[n, yy, xc, c] * k[dy, dx, c, o]
                    out[n, y, xx, o] = acc
    return out


def pair_count_metrics(true_labels, pred_labels, n):
    """Per-class (tp, fp, fn, tn) by counting (true, predicted) pairs one by one."""
    out = []
    for i in range(n):
        tp = fp = fn = tn = 0
        for t, p in zip(true_labels, pred_labels):
            if t == i and p == i:
                tp += 1
            elif t != i and p == i:
                fp += 1
            elif t == i and p != i:
                fn += 1
            else:
                tn += 1
        out.append((tp, fp, fn, tn))
    return out


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Norm-wise relative error, robust to individual near-zero entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
