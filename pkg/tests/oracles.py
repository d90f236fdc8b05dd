"""Independent slow reference implementations used to cross-check lmpkit."""
import math

import numpy as np


def brute_layers(bin_index, magnitude, cfg):
    """Plain-loop magnitude layering: returns ``(3, B)`` band histograms.

    A sample belongs to layer ``k`` when ``mag >= k * step`` (with the same
    1e-9 layer-unit slack); each layer's bins are normalized by magnitude
    mass, bins under the minimum share are dropped, and each surviving
    ``(layer, bin)`` contributes its per-band sample count (or 1 in
    ``layers`` mode when that count is positive).
    """
    B = cfg.bins
    mags = [min(float(m), cfg.mag_cap) for m in magnitude]
    third = cfg.mag_cap / 3.0
    ml = [[0.0] * B for _ in range(3)]
    for k in range(cfg.n_layers):
        members = [(int(b), m) for b, m in zip(bin_index, mags) if m / cfg.layer_step + 1e-9 >= k]
        mass = [0.0] * B
        for b, m in members:
            mass[b] += m
        total = sum(mass)
        for b in range(B):
            if total <= 0 or mass[b] / total < cfg.min_bin_fraction - 1e-12:
                continue
            for p in range(3):
                lo = -math.inf if p == 0 else p * third
                hi = math.inf if p == 2 else (p + 1) * third
                n = sum(1 for bb, m in members if bb == b and lo < m <= hi)
                if cfg.ml_count == "layers":
                    ml[p][b] += 1 if n > 0 else 0
                else:
                    ml[p][b] += n
    return np.array(ml, dtype=np.float64)


def brute_circular_runs(values, alpha):
    """Maximal circular runs of entries strictly above ``alpha``, each listed
    from its first bin in increasing circular order."""
    n = len(values)
    above = [v > alpha for v in values]
    if all(above):
        return [tuple(range(n))]
    runs = []
    for start in range(n):
        if above[start] and not above[start - 1]:
            run, i = [], start
            while above[i % n]:
                run.append(i % n)
                i += 1
            runs.append(tuple(run))
    return runs


def brute_coherent_runs(values, alpha, max_len, variation):
    kept = []
    for run in brute_circular_runs(values, alpha):
        if len(run) >= max_len:
            continue
        vals = [values[i] for i in run]
        tol = variation / 10.0 * max(vals)
        if all(abs(a - b) < tol for a, b in zip(vals, vals[1:])):
            kept.append(run)
    return kept


def brute_bhattacharyya(a, b):
    sa, sb = sum(a), sum(b)
    if sa == 0 or sb == 0:
        return 0.0
    return sum(math.sqrt((x / sa) * (y / sb)) for x, y in zip(a, b))
