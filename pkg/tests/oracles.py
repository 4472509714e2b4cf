"""Independent reference computations used by the tests.

Nothing here imports the code under test except plain data containers.
"""
import itertools
import math

import numpy as np

MASK = -100.0


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def two_pass_layer_norm(x, gamma, beta, eps):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat, fo = x.reshape(-1, x.shape[-1]), out.reshape(-1, x.shape[-1])
    for r in range(flat.shape[0]):
        row = flat[r]
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        fo[r] = [(v - mu) / math.sqrt(var + eps) * g + b for v, g, b in zip(row, gamma, beta)]
    return out


def erf_gelu(v):
    return v * 0.5 * (1.0 + math.erf(v / math.sqrt(2.0)))


def brute_relpos_index(p, m):
    """Pairwise displacement index over a p x m x m window, by enumeration."""
    coords = list(itertools.product(range(p), range(m), range(m)))
    span = 2 * m - 1
    n = len(coords)
    out = np.zeros((n, n), dtype=np.int64)
    for i, (ti, hi, wi) in enumerate(coords):
        for j, (tj, hj, wj) in enumerate(coords):
            dt, dh, dw = ti - tj + p - 1, hi - hj + m - 1, wi - wj + m - 1
            out[i, j] = (dt * span + dh) * span + dw
    return out


def effective(dims, window, shift):
    win = tuple(min(w, d) for w, d in zip(window, dims))
    sh = tuple(0 if w >= d else s for w, d, s in zip(window, dims, shift))
    return win, sh


def true_region(u, w, s):
    """Region of original coordinate ``u`` when windows start at offset ``s``."""
    if s == 0:
        return u // w
    return -1 if u < s else (u - s) // w


def region_map(dims, window, shift):
    """Token coordinate -> region key for the shifted partition of a grid."""
    win, sh = effective(dims, window, shift)
    regions = {}
    for c in itertools.product(*(range(d) for d in dims)):
        key = tuple(true_region(u, w, s) for u, w, s in zip(c, win, sh))
        regions.setdefault(key, []).append(c)
    return regions


def mha(x, wq, bq, wk, bk, wv, bv, wo, bo, heads, bias=None):
    """Plain multi-head attention over a token sequence x (n, C).

    ``bias`` is an optional (heads, n, n) additive score term.
    """
    x = np.asarray(x, dtype=np.float64)
    n, c = x.shape
    d = c // heads
    q, k, v = x @ wq + bq, x @ wk + bk, x @ wv + bv
    out = np.zeros((n, c))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(d)
        if bias is not None:
            s = s + bias[h]
        s = s - s.max(axis=1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=1, keepdims=True)
        out[:, sl] = a @ v[:, sl]
    return out @ wo + bo


def split_qkv(qkv_w, qkv_b):
    c = qkv_w.shape[0]
    return (qkv_w[:, :c], qkv_b[:c], qkv_w[:, c:2 * c], qkv_b[c:2 * c], qkv_w[:, 2 * c:], qkv_b[2 * c:])


def region_attention(x, qkv_w, qkv_b, out_w, out_b, relpos, table, window, shift):
    """Shifted-window attention computed region by region on the raw grid.

    ``table`` is the (p, m) extent of the bias table; ``window``/``shift`` are
    the requested window and offsets before clamping to the grid.
    """
    x = np.asarray(x, dtype=np.float64)
    dims = x.shape[:3]
    heads = relpos.shape[1]
    p, m = table
    span = 2 * m - 1
    wq, bq, wk, bk, wv, bv = split_qkv(np.asarray(qkv_w, np.float64), np.asarray(qkv_b, np.float64))
    out = np.zeros_like(x)
    for coords in region_map(dims, window, shift).values():
        pts = np.array(coords)
        toks = x[pts[:, 0], pts[:, 1], pts[:, 2]]
        rel = pts[:, None, :] - pts[None, :, :]
        idx = ((rel[..., 0] + p - 1) * span + rel[..., 1] + m - 1) * span + rel[..., 2] + m - 1
        bias = np.asarray(relpos, np.float64)[idx].transpose(2, 0, 1)
        res = mha(toks, wq, bq, wk, bk, wv, bv, np.asarray(out_w, np.float64), np.asarray(out_b, np.float64), heads, bias)
        out[pts[:, 0], pts[:, 1], pts[:, 2]] = res
    return out


def layer_norm_np(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def gelu_np(x):
    from scipy.special import erf

    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def block_oracle(x, blk, attention):
    """One pre-norm block given an ``attention(tokens) -> tokens`` routine (numpy)."""
    y = attention(layer_norm_np(x, blk["ln1.gamma"], blk["ln1.beta"]))
    x = x + y
    h = gelu_np(layer_norm_np(x, blk["ln2.gamma"], blk["ln2.beta"]) @ blk["mlp.fc1.w"] + blk["mlp.fc1.b"])
    return x + h @ blk["mlp.fc2.w"] + blk["mlp.fc2.b"]


def block_arrays(bw):
    """Numpy copy of a BlockWeights' tensors keyed like the checkpoint suffixes."""
    a = bw.attn
    return {
        "ln1.gamma": bw.ln1_gamma.data.astype(np.float64),
        "ln1.beta": bw.ln1_beta.data.astype(np.float64),
        "attn.qkv.w": a.qkv_w.data.astype(np.float64),
        "attn.qkv.b": a.qkv_b.data.astype(np.float64),
        "attn.out.w": a.out_w.data.astype(np.float64),
        "attn.out.b": a.out_b.data.astype(np.float64),
        "attn.relpos": a.relpos.data.astype(np.float64),
        "ln2.gamma": bw.ln2_gamma.data.astype(np.float64),
        "ln2.beta": bw.ln2_beta.data.astype(np.float64),
        "mlp.fc1.w": bw.fc1_w.data.astype(np.float64),
        "mlp.fc1.b": bw.fc1_b.data.astype(np.float64),
        "mlp.fc2.w": bw.fc2_w.data.astype(np.float64),
        "mlp.fc2.b": bw.fc2_b.data.astype(np.float64),
    }


def shape_walk(clip, embed_dim):
    """Token grid and width after the embed and each stage, by arithmetic."""
    t, h, w = clip
    grid = (t // 2, h // 4, w // 4)
    trace = []
    c = embed_dim
    for s in range(4):
        trace.append((grid, c))
        grid = (grid[0], grid[1] // 2, grid[2] // 2)
        c *= 2
    return trace


def hand_param_count(c, depths, d, classes, p, m, alpha=4):
    """Closed-form parameter count written out term by term."""
    total = 96 * c + c + 2 * c  # embed kernel, bias, norm
    table = (2 * p - 1) * (2 * m - 1) ** 2
    for s, depth in enumerate(depths):
        cs = c * 2 ** s
        heads = cs // d
        per_block = (
            2 * cs  # ln1
            + cs * 3 * cs + 3 * cs  # qkv
            + cs * cs + cs  # out
            + table * heads  # bias table
            + 2 * cs  # ln2
            + cs * alpha * cs + alpha * cs  # fc1
            + alpha * cs * cs + cs  # fc2
        )
        total += depth * per_block
        if s < 3:
            total += 2 * 4 * cs + 4 * cs * 2 * cs
    cf = c * 8
    total += 2 * cf + cf * classes + classes
    return total
