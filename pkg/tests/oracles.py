"""Brute-force references used to check the package, written independently
of its implementation."""

import itertools
import math

import numpy as np


def acc_bruteforce(truth, pred):
    """Best fraction matched over every injective relabeling of ``pred``."""
    truth = list(map(int, truth))
    pred = list(map(int, pred))
    t_ids = sorted(set(truth))
    p_ids = sorted(set(pred))
    size = max(len(t_ids), len(p_ids))
    targets = t_ids + [-1 - i for i in range(size - len(t_ids))]
    best = 0
    for perm in itertools.permutations(targets, len(p_ids)):
        mapping = dict(zip(p_ids, perm))
        hit = sum(mapping[p] == t for t, p in zip(truth, pred))
        best = max(best, hit)
    return best / len(truth)


def ari_pairs(truth, pred):
    """Adjusted Rand index from explicit counting over all point pairs."""
    n = len(truth)
    same_t = same_p = both = 0
    for i in range(n):
        for j in range(i + 1, n):
            st = truth[i] == truth[j]
            sp = pred[i] == pred[j]
            same_t += st
            same_p += sp
            both += st and sp
    pairs = n * (n - 1) / 2
    expected = same_t * same_p / pairs
    maximum = (same_t + same_p) / 2
    if maximum == expected:
        return 1.0
    return (both - expected) / (maximum - expected)


def nmi_entropy(truth, pred):
    """MI / sqrt(H(T) H(P)) from direct probability sums (natural log)."""
    n = len(truth)
    ct, cp, cj = {}, {}, {}
    for t, p in zip(truth, pred):
        ct[t] = ct.get(t, 0) + 1
        cp[p] = cp.get(p, 0) + 1
        cj[(t, p)] = cj.get((t, p), 0) + 1
    pt = {k: c / n for k, c in ct.items()}
    pp = {k: c / n for k, c in cp.items()}
    pj = {k: c / n for k, c in cj.items()}
    ht = -sum(q * math.log(q) for q in pt.values())
    hp = -sum(q * math.log(q) for q in pp.values())
    mi = sum(q * math.log(q / (pt[t] * pp[p])) for (t, p), q in pj.items())
    if ht == 0 or hp == 0:
        return 1.0 if ht == hp else 0.0
    return mi / math.sqrt(ht * hp)


def central_diff(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at array ``x`` (not modified)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric, floor=1e-5):
    """Max entrywise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den))
