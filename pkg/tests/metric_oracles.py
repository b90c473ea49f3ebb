"""Independent, deliberately naive reimplementations of the evaluation metrics.

Written with explicit loops and the textbook formulas so that they share no
code path with the package: the DCT is a cosine sum, the standard deviation
is computed from its definition, and DTW enumerates predecessors by hand.
"""
from __future__ import annotations

import math


def _mutual(ref, hyp):
    return [(r, h) for r, h in zip(ref, hyp) if r > 0 and h > 0]


def gpe(ref, hyp, threshold=0.2):
    pairs = _mutual(ref, hyp)
    gross = sum(1 for r, h in pairs if abs(h - r) / r > threshold)
    return 100.0 * gross / len(pairs)


def fpe(ref, hyp, threshold=0.2):
    cents = [1200.0 * math.log2(h / r) for r, h in _mutual(ref, hyp) if abs(h - r) / r <= threshold]
    mu = sum(cents) / len(cents)
    return math.sqrt(sum((c - mu) ** 2 for c in cents) / len(cents))


def pitch_mse(ref, hyp):
    pairs = _mutual(ref, hyp)
    return 100.0 * sum(((h - r) / r) ** 2 for r, h in pairs) / len(pairs)


def cepstra(mel_rows, order=13):
    out = []
    for row in mel_rows:
        n = len(row)
        coeffs = []
        for k in range(order):
            s = sum(row[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
            coeffs.append(s * math.sqrt((1.0 if k == 0 else 2.0) / n))
        out.append(coeffs)
    return out


def frame_mcd(a, b):
    return 10.0 / math.log(10.0) * math.sqrt(2.0 * sum((x - y) ** 2 for x, y in zip(a[1:], b[1:])))


def mcd(ref_cep, hyp_cep):
    return sum(frame_mcd(a, b) for a, b in zip(ref_cep, hyp_cep)) / len(ref_cep)


def dtw_total(ref_cep, hyp_cep):
    """Minimum total cost and the length of one optimal path."""
    n, m = len(ref_cep), len(hyp_cep)
    inf = float("inf")
    best = [[(inf, 0)] * (m + 1) for _ in range(n + 1)]
    best[0][0] = (0.0, 0)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            c = frame_mcd(ref_cep[i - 1], hyp_cep[j - 1])
            prev = min(best[i - 1][j - 1], best[i - 1][j], best[i][j - 1])
            best[i][j] = (prev[0] + c, prev[1] + 1)
    return best[n][m]
