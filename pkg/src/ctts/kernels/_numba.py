"""numba-compiled kernels, bit-compatible with ``_numpy``.

Loops are ordered so the innermost index runs over independent outputs; the
reduction index is never reordered (no fastmath), which keeps results equal
to the left-to-right naive loop while still letting LLVM vectorise.
"""

import numpy as np
from numba import njit

F32 = np.float32

_jit = njit(cache=True, nogil=True)


@_jit
def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float32)
    if m < 4:
        for i in range(m):
            row = out[i]
            for kk in range(k):
                av = a[i, kk]
                for j in range(n):
                    row[j] += av * b[kk, j]
        return out
    # column tiles keep the output panel cache-resident; k order is unchanged
    for j0 in range(0, n, 256):
        j1 = min(n, j0 + 256)
        for kk in range(k):
            brow = b[kk, j0:j1]
            for i in range(m):
                av = a[i, kk]
                orow = out[i, j0:j1]
                for j in range(j1 - j0):
                    orow[j] += av * brow[j]
    return out


@_jit
def qmatmul(a, q, scale):
    m, k = a.shape
    n = q.shape[1]
    out = np.zeros((m, n), dtype=np.float32)
    for i in range(m):
        row = out[i]
        for kk in range(k):
            av = a[i, kk]
            for j in range(n):
                row[j] += av * (np.float32(q[kk, j]) * scale)
    return out


@_jit
def conv1d(x, w):
    t, c_in = x.shape
    ksize, _, c_out = w.shape
    pad = ksize // 2
    out = np.zeros((t, c_out), dtype=np.float32)
    for ti in range(t):
        row = out[ti]
        for k in range(ksize):
            src = ti + k - pad
            if src < 0 or src >= t:
                continue
            for ci in range(c_in):
                xv = x[src, ci]
                for co in range(c_out):
                    row[co] += xv * w[k, ci, co]
    return out


@_jit
def qconv1d(x, q, scale):
    t, c_in = x.shape
    ksize, _, c_out = q.shape
    pad = ksize // 2
    out = np.zeros((t, c_out), dtype=np.float32)
    for ti in range(t):
        row = out[ti]
        for k in range(ksize):
            src = ti + k - pad
            if src < 0 or src >= t:
                continue
            for ci in range(c_in):
                xv = x[src, ci]
                for co in range(c_out):
                    row[co] += xv * (np.float32(q[k, ci, co]) * scale)
    return out


@_jit
def bsr_matvec(data, kept_rows, kept_cols, rows, x):
    nk, br, bc = data.shape
    y = np.zeros(rows, dtype=np.float32)
    if bc == 1:
        # column blocks: one contiguous br-long axpy per kept block
        d2 = data.reshape(nk, br)
        for b in range(nk):
            xv = x[kept_cols[b]]
            r0 = kept_rows[b] * br
            yy = y[r0:r0 + br]
            db = d2[b]
            for ri in range(br):
                yy[ri] += db[ri] * xv
        return y
    for b in range(nk):
        r0 = kept_rows[b] * br
        c0 = kept_cols[b] * bc
        yy = y[r0:r0 + br]
        db = data[b]
        for ci in range(bc):
            xv = x[c0 + ci]
            for ri in range(br):
                yy[ri] += db[ri, ci] * xv
    return y


@_jit
def _matvec_t(x, dense_t):
    k, n = dense_t.shape
    y = np.zeros(n, dtype=np.float32)
    for kk in range(k):
        xv = x[kk]
        for j in range(n):
            y[j] += xv * dense_t[kk, j]
    return y


@_jit
def _mv(x, spec):
    if spec[5]:
        return bsr_matvec(spec[1], spec[2], spec[3], spec[4], x)
    return _matvec_t(x, spec[0])


@_jit
def _sigmoid(v):
    return np.float32(1.0) / (np.float32(1.0) + np.exp(-v))


@_jit
def sample_categorical(logits, u):
    n = logits.shape[0]
    mx = logits[0]
    for i in range(1, n):
        if logits[i] > mx:
            mx = logits[i]
    cum = np.empty(n, dtype=np.float32)
    total = np.float32(0.0)
    for i in range(n):
        total += np.exp(logits[i] - mx)
        cum[i] = total
    thresh = np.float32(u) * total
    for i in range(n):
        if cum[i] > thresh:
            return i
    return n - 1


@_jit
def vocoder_loop(cond_gx, iters_per_frame, start_iter, n_iter, emb, w_ih_emb,
                 b_ih, hh, a1, a2, b1, b2, proj_b, proj_b_bias, uniforms,
                 h, prev, out_classes):
    hdim = h.shape[0]
    e = emb.shape[1]
    g3 = cond_gx.shape[1]
    gx = np.empty(g3, dtype=np.float32)
    hn = np.empty(hdim, dtype=np.float32)
    for it in range(n_iter):
        g = start_iter + it
        base = cond_gx[g // iters_per_frame]
        for j in range(g3):
            gx[j] = base[j]
        for s in range(2):
            p = prev[s]
            for kk in range(e):
                ev = emb[p, kk]
                wrow = w_ih_emb[s * e + kk]
                for j in range(g3):
                    gx[j] += ev * wrow[j]
        for j in range(g3):
            gx[j] += b_ih[j]
        gh = _mv(h, hh)
        finite = True
        for j in range(hdim):
            z = _sigmoid(gx[j] + gh[j])
            r = _sigmoid(gx[hdim + j] + gh[hdim + j])
            n = np.tanh(gx[2 * hdim + j] + r * gh[2 * hdim + j])
            v = (np.float32(1.0) - z) * h[j] + z * n
            if not np.isfinite(v):
                finite = False
            hn[j] = v
        if not finite:
            return g
        for j in range(hdim):
            h[j] = hn[j]
        ha = _mv(h, a1)
        for j in range(ha.shape[0]):
            ha[j] = max(ha[j] + a1[6][j], np.float32(0.0))
        la = _mv(ha, a2)
        for j in range(la.shape[0]):
            la[j] += a2[6][j]
        ca = sample_categorical(la, uniforms[2 * it])
        pb = _matvec_t(emb[ca], proj_b)
        hb = np.empty(hdim, dtype=np.float32)
        for j in range(hdim):
            hb[j] = h[j] + (pb[j] + proj_b_bias[j])
        hb2 = _mv(hb, b1)
        for j in range(hb2.shape[0]):
            hb2[j] = max(hb2[j] + b1[6][j], np.float32(0.0))
        lb = _mv(hb2, b2)
        for j in range(lb.shape[0]):
            lb[j] += b2[6][j]
        cb = sample_categorical(lb, uniforms[2 * it + 1])
        out_classes[2 * it] = ca
        out_classes[2 * it + 1] = cb
        prev[0] = ca
        prev[1] = cb
    return -1
