"""Loop-heavy numeric kernels, each with a numba and a pure-numpy version.

The public names (``im2col``, ``col2im``, ...) dispatch to the numba versions
unless the numpy fallback was selected through ``ICAN_NUMBA=0``. Both versions
are importable explicitly (``*_nb`` / ``*_np``) for testing and benchmarking.
"""

import numpy as np

from ._accel import USE_NUMBA, njit


# --------------------------------------------------------------------------
# im2col / col2im


def im2col_np(xp, k, stride, ho, wo):
    c = xp.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (C, Ho, Wo, k, k) -> (C, k, k, Ho, Wo)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, ho * wo)


def col2im_np(cols, c, hp, wp, k, stride, ho, wo):
    out = np.zeros((c, hp, wp))
    cols = cols.reshape(c, k, k, ho, wo)
    for di in range(k):
        for dj in range(k):
            out[:, di : di + (ho - 1) * stride + 1 : stride, dj : dj + (wo - 1) * stride + 1 : stride] += cols[:, di, dj]
    return out


@njit(cache=True)
def im2col_nb(xp, k, stride, ho, wo):
    c = xp.shape[0]
    cols = np.empty((c * k * k, ho * wo))
    for ch in range(c):
        for di in range(k):
            for dj in range(k):
                row = (ch * k + di) * k + dj
                for i in range(ho):
                    src_i = i * stride + di
                    for j in range(wo):
                        cols[row, i * wo + j] = xp[ch, src_i, j * stride + dj]
    return cols


@njit(cache=True)
def col2im_nb(cols, c, hp, wp, k, stride, ho, wo):
    out = np.zeros((c, hp, wp))
    for ch in range(c):
        for di in range(k):
            for dj in range(k):
                row = (ch * k + di) * k + dj
                for i in range(ho):
                    dst_i = i * stride + di
                    for j in range(wo):
                        out[ch, dst_i, j * stride + dj] += cols[row, i * wo + j]
    return out


# --------------------------------------------------------------------------
# ROI max pooling over precomputed integer bins


def roi_max_pool_np(fmap, hbins, wbins):
    c, _, w = fmap.shape
    out_h, out_w = hbins.shape[0], wbins.shape[0]
    out = np.empty((c, out_h, out_w))
    arg = np.empty((c, out_h, out_w), dtype=np.int64)
    for p in range(out_h):
        h0, h1 = hbins[p]
        for q in range(out_w):
            w0, w1 = wbins[q]
            patch = fmap[:, h0:h1, w0:w1].reshape(c, -1)
            # argmax returns the first maximum: ties go to the lower index
            local = np.argmax(patch, axis=1)
            out[:, p, q] = patch[np.arange(c), local]
            pw = w1 - w0
            arg[:, p, q] = (h0 + local // pw) * w + (w0 + local % pw)
    return out, arg


@njit(cache=True)
def roi_max_pool_nb(fmap, hbins, wbins):
    c, _, w = fmap.shape
    out_h, out_w = hbins.shape[0], wbins.shape[0]
    out = np.empty((c, out_h, out_w))
    arg = np.empty((c, out_h, out_w), dtype=np.int64)
    for ch in range(c):
        for p in range(out_h):
            for q in range(out_w):
                best = -np.inf
                best_idx = -1
                for i in range(hbins[p, 0], hbins[p, 1]):
                    for j in range(wbins[q, 0], wbins[q, 1]):
                        v = fmap[ch, i, j]
                        if v > best or best_idx < 0:
                            best = v
                            best_idx = i * w + j
                out[ch, p, q] = best
                arg[ch, p, q] = best_idx
    return out, arg


def scatter_argmax_np(grad, arg, h, w):
    c = grad.shape[0]
    out = np.zeros((c, h * w))
    np.add.at(out, (np.repeat(np.arange(c), arg[0].size), arg.reshape(-1)), grad.reshape(-1))
    return out.reshape(c, h, w)


@njit(cache=True)
def scatter_argmax_nb(grad, arg, h, w):
    c = grad.shape[0]
    out = np.zeros((c, h * w))
    for ch in range(c):
        for p in range(grad.shape[1]):
            for q in range(grad.shape[2]):
                out[ch, arg[ch, p, q]] += grad[ch, p, q]
    return out.reshape(c, h, w)


# --------------------------------------------------------------------------
# 2x2-style max pooling (kernel == stride, trailing rows/cols dropped)


def max_pool_np(x, size):
    c, h, w = x.shape
    ho, wo = h // size, w // size
    blocks = x[:, : ho * size, : wo * size].reshape(c, ho, size, wo, size).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, size * size)
    local = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[None, :, None] * size + local // size
    cols = np.arange(wo)[None, None, :] * size + local % size
    return out, (rows * w + cols).astype(np.int64)


@njit(cache=True)
def max_pool_nb(x, size):
    c, h, w = x.shape
    ho, wo = h // size, w // size
    out = np.empty((c, ho, wo))
    arg = np.empty((c, ho, wo), dtype=np.int64)
    for ch in range(c):
        for p in range(ho):
            for q in range(wo):
                best = x[ch, p * size, q * size]
                best_idx = (p * size) * w + q * size
                for i in range(p * size, p * size + size):
                    for j in range(q * size, q * size + size):
                        if x[ch, i, j] > best:
                            best = x[ch, i, j]
                            best_idx = i * w + j
                out[ch, p, q] = best
                arg[ch, p, q] = best_idx
    return out, arg


# --------------------------------------------------------------------------
# pairwise IoU between two box arrays (x1, y1, x2, y2)


def iou_matrix_np(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0.0, None) * np.clip(iy2 - iy1, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


@njit(cache=True)
def iou_matrix_nb(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1]) - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def _iou_matrix_nb_entry(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    return iou_matrix_nb(a, b)


if USE_NUMBA:
    im2col = im2col_nb
    col2im = col2im_nb
    roi_max_pool = roi_max_pool_nb
    scatter_argmax = scatter_argmax_nb
    max_pool = max_pool_nb
    iou_matrix = _iou_matrix_nb_entry
    BACKEND = "numba"
else:
    im2col = im2col_np
    col2im = col2im_np
    roi_max_pool = roi_max_pool_np
    scatter_argmax = scatter_argmax_np
    max_pool = max_pool_np
    iou_matrix = iou_matrix_np
    BACKEND = "numpy"
