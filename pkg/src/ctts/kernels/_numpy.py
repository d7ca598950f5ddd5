"""Pure-numpy kernels.

Every reduction walks its summation index left to right starting from 0.0,
so results are bit-identical to the naive loop and to the numba backend.
"""

import numpy as np

F32 = np.float32


def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=F32)
    for kk in range(k):
        out += a[:, kk : kk + 1] * b[kk]
    return out


def qmatmul(a, q, scale):
    # Dequantise row by row; identical bits to matmul(a, q * scale).
    m, k = a.shape
    n = q.shape[1]
    out = np.zeros((m, n), dtype=F32)
    for kk in range(k):
        out += a[:, kk : kk + 1] * (q[kk].astype(F32) * scale)
    return out


def qconv1d(x, q, scale):
    return conv1d(x, q.astype(F32) * scale)


def conv1d(x, w):
    t, c_in = x.shape
    ksize, _, c_out = w.shape
    pad = ksize // 2
    out = np.zeros((t, c_out), dtype=F32)
    for k in range(ksize):
        shift = k - pad
        lo, hi = max(0, -shift), min(t, t - shift)
        if lo >= hi:
            continue
        dst = out[lo:hi]
        src = x[lo + shift : hi + shift]
        wk = w[k]
        for ci in range(c_in):
            dst += src[:, ci : ci + 1] * wk[ci]
    return out


def _rank_groups(kept_rows):
    # Position of each block within its block-row. Blocks sharing a rank hit
    # disjoint output rows, so one scatter-add per rank keeps the per-element
    # summation order equal to ascending column order.
    nk = kept_rows.shape[0]
    if nk == 0:
        return []
    starts = np.searchsorted(kept_rows, kept_rows, side="left")
    rank = np.arange(nk) - starts
    order = np.argsort(rank, kind="stable")
    counts = np.bincount(rank)
    return np.split(order, np.cumsum(counts)[:-1])


def bsr_matvec(data, kept_rows, kept_cols, rows, x):
    nk, br, bc = data.shape
    y = np.zeros(rows, dtype=F32)
    yb = y.reshape(rows // br, br)
    for idx in _rank_groups(kept_rows):
        brow = kept_rows[idx]
        for ci in range(bc):
            xv = x[kept_cols[idx] * bc + ci]
            yb[brow] += data[idx, :, ci] * xv[:, None]
    return y


def sigmoid(x):
    return (F32(1.0) / (F32(1.0) + np.exp(-x))).astype(F32)


def sample_categorical(logits, u):
    z = logits - logits.max()
    e = np.exp(z)
    total = F32(0.0)
    cum = np.empty_like(e)
    for i in range(e.shape[0]):
        total = F32(total + e[i])
        cum[i] = total
    thresh = F32(u) * total
    c = int(np.searchsorted(cum, thresh, side="right"))
    return min(c, e.shape[0] - 1)


def _mv(x, spec):
    dense_t, data, kr, kc, rows, sparse = spec[:6]
    if sparse:
        return bsr_matvec(data, kr, kc, rows, x)
    return matmul(x[None, :], dense_t)[0]


def vocoder_loop(cond_gx, iters_per_frame, start_iter, n_iter, emb, w_ih_emb,
                 b_ih, hh, a1, a2, b1, b2, proj_b, proj_b_bias, uniforms,
                 h, prev, out_classes):
    """Run ``n_iter`` two-sample iterations, mutating ``h``/``prev`` in place.

    Matrix specs are ``(dense_t, data, kept_rows, kept_cols, rows, sparse)``
    tuples; post-net specs carry the bias as a seventh entry. Returns -1, or
    the global iteration index at which the hidden state went non-finite.
    """
    hdim = h.shape[0]
    e = emb.shape[1]
    for it in range(n_iter):
        g = start_iter + it
        gx = cond_gx[g // iters_per_frame].copy()
        for s in range(2):
            ev = emb[prev[s]]
            for kk in range(e):
                gx += ev[kk] * w_ih_emb[s * e + kk]
        gx += b_ih
        gh = _mv(h, hh)
        z = sigmoid(gx[:hdim] + gh[:hdim])
        r = sigmoid(gx[hdim:2 * hdim] + gh[hdim:2 * hdim])
        n = np.tanh(gx[2 * hdim:] + r * gh[2 * hdim:])
        hn = (F32(1.0) - z) * h + z * n
        if not np.all(np.isfinite(hn)):
            return g
        h[:] = hn
        ha = np.maximum(_mv(h, a1) + a1[6], F32(0.0))
        ca = sample_categorical(_mv(ha, a2) + a2[6], uniforms[2 * it])
        hb = h + (matmul(emb[ca][None, :], proj_b)[0] + proj_b_bias)
        hb = np.maximum(_mv(hb, b1) + b1[6], F32(0.0))
        cb = sample_categorical(_mv(hb, b2) + b2[6], uniforms[2 * it + 1])
        out_classes[2 * it] = ca
        out_classes[2 * it + 1] = cb
        prev[0] = ca
        prev[1] = cb
    return -1
