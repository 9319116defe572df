"""Loop-heavy kernels with a numba path and a pure-numpy fallback.

Set ``IMPEVAL_NO_NUMBA=1`` to force the numpy implementations (also used
automatically when numba is not importable). Both paths produce identical
results; ``benchmarks/bench_kernels.py`` times them against each other.
"""

import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the dev env
    numba = None
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and os.environ.get("IMPEVAL_NO_NUMBA", "") not in ("1", "true", "yes")


# -- scatter-add (backward of gather / im2col) --------------------------------

def scatter_add_np(values, idx, size):
    """out[b, idx[m]] += values[b, m]; entries with idx < 0 are dropped."""
    nb = values.shape[0]
    keep = idx >= 0
    flat_idx = (np.arange(nb)[:, None] * size + idx[None, keep]).ravel()
    out = np.bincount(flat_idx, weights=values[:, keep].ravel(), minlength=nb * size)
    return out.reshape(nb, size)


def _scatter_add_loop(values, idx, size):
    nb, m = values.shape
    out = np.zeros((nb, size))
    for b in range(nb):
        for j in range(m):
            k = idx[j]
            if k >= 0:
                out[b, k] += values[b, j]
    return out


# -- 4-connected component labeling --------------------------------------------

def _label4_loop(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    stack = np.empty(h * w, dtype=np.int64)
    n = 0
    for y0 in range(h):
        for x0 in range(w):
            if not mask[y0, x0] or labels[y0, x0] != 0:
                continue
            n += 1
            labels[y0, x0] = n
            top = 0
            stack[top] = y0 * w + x0
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                y = p // w
                x = p - y * w
                if y > 0 and mask[y - 1, x] and labels[y - 1, x] == 0:
                    labels[y - 1, x] = n
                    stack[top] = p - w
                    top += 1
                if y < h - 1 and mask[y + 1, x] and labels[y + 1, x] == 0:
                    labels[y + 1, x] = n
                    stack[top] = p + w
                    top += 1
                if x > 0 and mask[y, x - 1] and labels[y, x - 1] == 0:
                    labels[y, x - 1] = n
                    stack[top] = p - 1
                    top += 1
                if x < w - 1 and mask[y, x + 1] and labels[y, x + 1] == 0:
                    labels[y, x + 1] = n
                    stack[top] = p + 1
                    top += 1
    return labels, n


def label4_np(mask):
    """Label 4-connected foreground components, numbered in raster order of
    each component's first pixel. Returns (labels, count)."""
    return _label4_loop(np.ascontiguousarray(mask, dtype=np.bool_))


# -- AUC-Judd threshold sweep --------------------------------------------------

def auc_judd_np(sal, fix):
    """ROC area with thresholds at the distinct saliency values of fixation
    pixels. ``sal`` flat float array, ``fix`` flat bool array (non-empty)."""
    pos = np.sort(sal[fix])
    neg = np.sort(sal[~fix])
    thresholds = np.unique(pos)[::-1]
    # counts of values >= t
    tp = (pos.size - np.searchsorted(pos, thresholds, side="left")) / pos.size
    if neg.size:
        fp = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    else:
        fp = np.zeros_like(tp)
    tp = np.concatenate(([0.0], tp, [1.0]))
    fp = np.concatenate(([0.0], fp, [1.0]))
    area = 0.0
    for i in range(1, tp.size):
        area += (fp[i] - fp[i - 1]) * (tp[i] + tp[i - 1]) * 0.5
    return area


def _auc_judd_loop(sal, fix):
    npos = 0
    for i in range(sal.size):
        if fix[i]:
            npos += 1
    nneg = sal.size - npos
    pos = np.empty(npos)
    neg = np.empty(nneg)
    a = 0
    b = 0
    for i in range(sal.size):
        if fix[i]:
            pos[a] = sal[i]
            a += 1
        else:
            neg[b] = sal[i]
            b += 1
    pos = np.sort(pos)[::-1]
    neg = np.sort(neg)[::-1]
    area = 0.0
    tp_prev = 0.0
    fp_prev = 0.0
    i = 0
    j = 0
    while i < npos:
        t = pos[i]
        while i < npos and pos[i] >= t:
            i += 1
        while j < nneg and neg[j] >= t:
            j += 1
        tp = i / npos
        fp = j / nneg if nneg > 0 else 0.0
        area += (fp - fp_prev) * (tp + tp_prev) * 0.5
        tp_prev = tp
        fp_prev = fp
    area += (1.0 - fp_prev) * (1.0 + tp_prev) * 0.5
    return area


if HAVE_NUMBA:
    scatter_add_nb = numba.njit(cache=True)(_scatter_add_loop)
    _label4_nb = numba.njit(cache=True)(_label4_loop)
    _auc_judd_nb = numba.njit(cache=True)(_auc_judd_loop)

    def label4_nb(mask):
        return _label4_nb(np.ascontiguousarray(mask, dtype=np.bool_))

    def auc_judd_nb(sal, fix):
        return _auc_judd_nb(np.ascontiguousarray(sal, dtype=np.float64),
                            np.ascontiguousarray(fix, dtype=np.bool_))
else:  # pragma: no cover
    scatter_add_nb = label4_nb = auc_judd_nb = None


if NUMBA_ENABLED:
    scatter_add = scatter_add_nb
    label4 = label4_nb
    auc_judd = auc_judd_nb
else:
    scatter_add = scatter_add_np
    label4 = label4_np
    auc_judd = auc_judd_np
