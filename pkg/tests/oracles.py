"""Independent reference implementations the tests compare against.

Everything here is deliberately naive: python loops, no shared code with the
package beyond plain numpy arrays.
"""

import math

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), floor))


def gelu_scalar(x):
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def layer_norm_row(row, eps=1e-5):
    n = len(row)
    mu = sum(row) / n
    var = sum((v - mu) ** 2 for v in row) / n
    return [(v - mu) / math.sqrt(var + eps) for v in row]


def flood_fill_regions(mask):
    """4-connected components by BFS over python lists; raster-ordered seeds.
    Returns a list of pixel lists [(y, x), ...]."""
    h, w = len(mask), len(mask[0])
    seen = [[False] * w for _ in range(h)]
    comps = []
    for y in range(h):
        for x in range(w):
            if mask[y][x] and not seen[y][x]:
                seen[y][x] = True
                queue = [(y, x)]
                k = 0
                while k < len(queue):
                    cy, cx = queue[k]
                    k += 1
                    for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                        if 0 <= ny < h and 0 <= nx < w and mask[ny][nx] and not seen[ny][nx]:
                            seen[ny][nx] = True
                            queue.append((ny, nx))
                comps.append(queue)
    return comps


def ranks_average(xs):
    """Average-tie ranks (1-based) by brute-force counting."""
    out = []
    for v in xs:
        less = sum(1 for u in xs if u < v)
        equal = sum(1 for u in xs if u == v)
        out.append(less + (equal + 1) / 2.0)
    return out


def pearson_loop(a, b):
    n = len(a)
    ma = sum(a) / n
    mb = sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def auc_judd_bruteforce(sal, gt, thresh=0.5):
    """Exhaustive sweep: for every distinct saliency value at a fixation,
    count hits and false alarms with explicit loops, then trapezoid."""
    sal = list(np.asarray(sal, dtype=float).ravel())
    fix = [g >= thresh for g in np.asarray(gt, dtype=float).ravel()]
    pos = [s for s, f in zip(sal, fix) if f]
    neg = [s for s, f in zip(sal, fix) if not f]
    thresholds = sorted(set(pos), reverse=True)
    tp = [0.0]
    fp = [0.0]
    for t in thresholds:
        tp.append(sum(1 for s in pos if s >= t) / len(pos))
        fp.append(sum(1 for s in neg if s >= t) / len(neg) if neg else 0.0)
    tp.append(1.0)
    fp.append(1.0)
    return sum((fp[i] - fp[i - 1]) * (tp[i] + tp[i - 1]) / 2 for i in range(1, len(tp)))


def kld_loop(p, g, eps=1e-7):
    p = list(np.asarray(p, dtype=float).ravel())
    g = list(np.asarray(g, dtype=float).ravel())
    sp, sg = sum(p), sum(g)
    return sum((gi / sg) * math.log(eps + (gi / sg) / (eps + pi / sp)) for pi, gi in zip(p, g))


def sim_loop(p, g):
    p = list(np.asarray(p, dtype=float).ravel())
    g = list(np.asarray(g, dtype=float).ravel())
    sp, sg = sum(p), sum(g)
    return sum(min(pi / sp, gi / sg) for pi, gi in zip(p, g))


def golden_section_min(f, lo, hi, tol=1e-12, iters=400):
    """Minimize a unimodal scalar function on [lo, hi]."""
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (a + b) / 2
