"""3D window multi-head self-attention and the Video Swin block."""
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError
from .tensor import (
    Tensor,
    add,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    pad_end,
    permute,
    reshape,
    scale,
    softmax_lastdim,
    take,
    crop,
)
from .windowing import (
    ShiftSpec,
    cyclic_shift,
    needs_mask,
    padded_dims,
    relative_position_index,
    resolve,
    shift_attention_mask,
    window_partition,
    window_reverse,
)


def trunc_normal(rng, shape, std=0.02):
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


@dataclass
class MsaWeights:
    qkv_w: Tensor  # (C, 3C), columns q | k | v, head-major inside each
    qkv_b: Tensor  # (3C,)
    out_w: Tensor  # (C, C)
    out_b: Tensor  # (C,)
    relpos: Tensor  # ((2p-1)(2m-1)^2, heads)

    @property
    def dim(self):
        return self.qkv_w.shape[0]

    @property
    def num_heads(self):
        return self.relpos.shape[1]

    @classmethod
    def init(cls, dim, num_heads, spec, rng, dtype=np.float32):
        mk = lambda a: Tensor(a, dtype=dtype)  # noqa: E731
        return cls(
            qkv_w=mk(trunc_normal(rng, (dim, 3 * dim))),
            qkv_b=mk(np.zeros(3 * dim)),
            out_w=mk(trunc_normal(rng, (dim, dim))),
            out_b=mk(np.zeros(dim)),
            relpos=mk(trunc_normal(rng, (spec.table_size, num_heads))),
        )

    def named(self, prefix):
        return {
            f"{prefix}.qkv.w": self.qkv_w,
            f"{prefix}.qkv.b": self.qkv_b,
            f"{prefix}.out.w": self.out_w,
            f"{prefix}.out.b": self.out_b,
            f"{prefix}.relpos": self.relpos,
        }

    @classmethod
    def from_named(cls, params, prefix):
        return cls(*(params[f"{prefix}.{k}"] for k in ("qkv.w", "qkv.b", "out.w", "out.b", "relpos")))


@dataclass
class BlockWeights:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    attn: MsaWeights
    ln2_gamma: Tensor
    ln2_beta: Tensor
    fc1_w: Tensor  # (C, alpha*C)
    fc1_b: Tensor
    fc2_w: Tensor  # (alpha*C, C)
    fc2_b: Tensor

    @classmethod
    def init(cls, dim, num_heads, spec, rng, mlp_ratio=4, dtype=np.float32):
        hidden = mlp_ratio * dim
        mk = lambda a: Tensor(a, dtype=dtype)  # noqa: E731
        return cls(
            ln1_gamma=mk(np.ones(dim)),
            ln1_beta=mk(np.zeros(dim)),
            attn=MsaWeights.init(dim, num_heads, spec, rng, dtype),
            ln2_gamma=mk(np.ones(dim)),
            ln2_beta=mk(np.zeros(dim)),
            fc1_w=mk(trunc_normal(rng, (dim, hidden))),
            fc1_b=mk(np.zeros(hidden)),
            fc2_w=mk(trunc_normal(rng, (hidden, dim))),
            fc2_b=mk(np.zeros(dim)),
        )

    def named(self, prefix):
        out = {f"{prefix}.ln1.gamma": self.ln1_gamma, f"{prefix}.ln1.beta": self.ln1_beta}
        out.update(self.attn.named(f"{prefix}.attn"))
        out.update(
            {
                f"{prefix}.ln2.gamma": self.ln2_gamma,
                f"{prefix}.ln2.beta": self.ln2_beta,
                f"{prefix}.mlp.fc1.w": self.fc1_w,
                f"{prefix}.mlp.fc1.b": self.fc1_b,
                f"{prefix}.mlp.fc2.w": self.fc2_w,
                f"{prefix}.mlp.fc2.b": self.fc2_b,
            }
        )
        return out

    @classmethod
    def from_named(cls, params, prefix):
        return cls(
            params[f"{prefix}.ln1.gamma"],
            params[f"{prefix}.ln1.beta"],
            MsaWeights.from_named(params, f"{prefix}.attn"),
            params[f"{prefix}.ln2.gamma"],
            params[f"{prefix}.ln2.beta"],
            params[f"{prefix}.mlp.fc1.w"],
            params[f"{prefix}.mlp.fc1.b"],
            params[f"{prefix}.mlp.fc2.w"],
            params[f"{prefix}.mlp.fc2.b"],
        )

    def tensors(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, MsaWeights):
                yield from (getattr(v, g.name) for g in fields(v))
            else:
                yield v


def relative_position_bias(relpos, spec, window):
    """Gather the (heads, n, n) bias for an effective window from the table."""
    idx = relative_position_index(spec, window)
    bias = take(relpos, idx, axis=0)  # (n, n, heads)
    return permute(bias, (2, 0, 1))


def window_msa(tokens, w, spec, offsets=None, head_dim=None):
    """Window attention over a (T, H, W, C) or (B, T, H, W, C) token grid.

    ``offsets`` of zero gives the regular partition; non-zero offsets give
    the shifted one, computed by cyclic shift plus a region mask so the
    window count does not grow.
    """
    unbatched = tokens.ndim == 4
    x = reshape(tokens, (1,) + tokens.shape) if unbatched else tokens
    b, *dims, c = x.shape
    dims = tuple(dims)
    heads = w.num_heads
    if c != w.dim:
        raise ConfigError(f"token width {c} does not match attention width {w.dim}")
    if head_dim is not None and (c % head_dim or c // head_dim != heads):
        raise ConfigError(f"channels {c} not divisible into {heads} heads of dim {head_dim}")
    if c % heads:
        raise ConfigError(f"channels {c} not divisible by {heads} heads")
    d = c // heads
    if isinstance(offsets, ShiftSpec):
        offsets.check(spec)
    window, shift = resolve(dims, spec, offsets)
    pdims = padded_dims(dims, window)

    x = pad_end(x, (0,) + tuple(p - q for p, q in zip(pdims, dims)) + (0,))
    x = cyclic_shift(x, shift, "forward")
    wins = window_partition(x, window)  # (b*nw, n, c)
    bw, n, _ = wins.shape
    nw = bw // b

    qkv = linear(wins, w.qkv_w, w.qkv_b)
    qkv = permute(reshape(qkv, (bw, n, 3, heads, d)), (2, 0, 3, 1, 4))  # (3, bw, h, n, d)
    q = scale(take(qkv, 0, axis=0), 1.0 / np.sqrt(d))
    k = take(qkv, 1, axis=0)
    v = take(qkv, 2, axis=0)

    scores = matmul(q, permute(k, (0, 1, 3, 2)))  # (bw, h, n, n)
    scores = add(scores, relative_position_bias(w.relpos, spec, window))
    mask = None
    if needs_mask(dims, window, shift):
        mask = shift_attention_mask(dims, window, shift)[None, :, None]  # (1, nw, 1, n, n)
        scores = reshape(scores, (b, nw, heads, n, n))
    attn = softmax_lastdim(scores, mask)
    attn = reshape(attn, (bw, heads, n, n))

    ctx = matmul(attn, v)  # (bw, h, n, d)
    ctx = reshape(permute(ctx, (0, 2, 1, 3)), (bw, n, c))
    out = linear(ctx, w.out_w, w.out_b)

    out = window_reverse(out, window, pdims, batch=b)
    out = cyclic_shift(out, shift, "inverse")
    out = crop(out, (b,) + dims + (c,))
    return reshape(out, dims + (c,)) if unbatched else out


def mlp(x, w):
    return linear(gelu(linear(x, w.fc1_w, w.fc1_b)), w.fc2_w, w.fc2_b)


def _drop_path(branch, rate, rng):
    """Zero whole residual branches per sample, rescaling the survivors."""
    if rate <= 0.0 or rng is None:
        return branch
    keep = 1.0 - rate
    b = branch.shape[0]
    m = (rng.random(b) < keep).astype(branch.dtype) / keep
    return mul(branch, Tensor(m.reshape((b,) + (1,) * (branch.ndim - 1)), dtype=branch.dtype))


def block_forward(x, w, spec, shifted, head_dim=None, drop_rate=0.0, rng=None):
    """One block: attention and MLP, each pre-normed with a residual.

    ``rng`` enables stochastic depth at ``drop_rate``; without it (inference)
    both branches are always kept. Stochastic depth needs a batch axis.
    """
    offsets = ShiftSpec.half(spec) if shifted else ShiftSpec()
    y = window_msa(layer_norm(x, w.ln1_gamma, w.ln1_beta), w.attn, spec, offsets, head_dim)
    x = add(x, _drop_path(y, drop_rate, rng))
    y = mlp(layer_norm(x, w.ln2_gamma, w.ln2_beta), w)
    return add(x, _drop_path(y, drop_rate, rng))


def block_pair_forward(x, w1, w2, spec, head_dim=None):
    """Regular-window block followed by the shifted-window block."""
    x = block_forward(x, w1, spec, shifted=False, head_dim=head_dim)
    return block_forward(x, w2, spec, shifted=True, head_dim=head_dim)
