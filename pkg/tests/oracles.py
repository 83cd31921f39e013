"""Independent reference implementations used as test oracles.

Deliberately naive: loops, exhaustive enumeration, no shared code with the
package beyond plain data.
"""
import math

import numpy as np


def has_cycle_by_paths(adj) -> bool:
    """True if some node reaches itself, by enumerating every simple path."""
    n = len(adj)

    def walk(start, node, visited):
        for nxt in range(n):
            if adj[node][nxt]:
                if nxt == start:
                    return True
                if nxt not in visited and walk(start, nxt, visited | {nxt}):
                    return True
        return False

    return any(walk(s, s, {s}) for s in range(n))


def brute_valid(adj, ops, names) -> bool:
    """Accept iff the cell could be a valid (re-indexable) CellGraph."""
    adj = np.asarray(adj)
    ops = np.asarray(ops)
    n = adj.shape[0]
    if adj.shape != (n, n) or n < 2 or ops.shape != (n, len(names)):
        return False
    if any(v not in (0, 1) for v in adj.ravel()) or any(v not in (0, 1) for v in ops.ravel()):
        return False
    if any(sum(row) != 1 for row in ops.tolist()):
        return False
    labels = [names[list(row).index(1)] for row in ops.tolist()]
    if labels.count("input") != 1 or labels.count("output") != 1:
        return False
    if has_cycle_by_paths(adj.tolist()):
        return False
    i, o = labels.index("input"), labels.index("output")
    return sum(adj[:, i]) == 0 and sum(adj[o]) == 0


def average_ranks_quadratic(x):
    """1-based ranks, ties sharing the mean of their block, in O(n^2)."""
    x = list(x)
    ranks = []
    for xi in x:
        less = sum(1 for xj in x if xj < xi)
        equal = sum(1 for xj in x if xj == xi)
        ranks.append(less + (equal + 1) / 2.0)
    return ranks


def pearson_loops(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((a[i] - ma) * (b[i] - mb) for i in range(n))
    va = sum((a[i] - ma) ** 2 for i in range(n))
    vb = sum((b[i] - mb) ** 2 for i in range(n))
    return cov / math.sqrt(va * vb)


def spearman_oracle(x, y):
    return pearson_loops(average_ranks_quadratic(x), average_ranks_quadratic(y))


def row_normalize_loops(a):
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    out = np.zeros_like(a)
    for i in range(n):
        row = [a[i, j] + (1.0 if i == j else 0.0) for j in range(n)]
        s = sum(row)
        for j in range(n):
            out[i, j] = row[j] / s
    return out


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def topk_by_full_sort(scores, k):
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:k]
