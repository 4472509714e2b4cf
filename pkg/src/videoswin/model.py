"""3D Swin video backbone: patch embedding, four hierarchical stages with
patch merging, final norm and a linear classification head.

Parameters live in a flat ordered ``dict`` of named tensors that uses the
checkpoint naming scheme (see ``checkpoint.py``):

    patch_embed.kernel            (2, 4, 4, 3, C), flattened (t, h, w, rgb)
    patch_embed.bias / patch_embed.norm.{gamma,beta}
    stage{i}.block{j}.{ln1,ln2}.{gamma,beta}          i = 1..4, j = 0..
    stage{i}.block{j}.attn.{qkv.w,qkv.b,out.w,out.b,relpos}
    stage{i}.block{j}.mlp.{fc1,fc2}.{w,b}
    stage{i}.merge.norm.{gamma,beta}, stage{i}.merge.linear.w     i = 1..3
    final_norm.{gamma,beta}, head.{w,b}
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import BlockWeights, block_forward, trunc_normal
from .errors import ConfigError
from .tensor import Tensor, layer_norm, linear, mean, permute, reshape
from .windowing import WindowSpec

PATCH = (2, 4, 4)
PATCH_DIM = PATCH[0] * PATCH[1] * PATCH[2] * 3


@dataclass(frozen=True)
class ArchConfig:
    embed_dim: int = 96
    depths: tuple = (2, 2, 6, 2)
    window: WindowSpec = field(default_factory=WindowSpec)
    head_dim: int = 32
    mlp_ratio: int = 4
    num_classes: int = 400
    clip: tuple = (32, 224, 224)
    drop_path: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "clip", tuple(int(d) for d in self.clip))
        if len(self.depths) != 4:
            raise ConfigError(f"need 4 stage depths, got {self.depths}")
        if any(d < 2 or d % 2 for d in self.depths):
            raise ConfigError(f"stage depths must be even and positive (blocks come in pairs): {self.depths}")
        if self.embed_dim % self.head_dim:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by head_dim {self.head_dim}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if not 0.0 <= self.drop_path < 1.0:
            raise ConfigError("drop_path must lie in [0, 1)")
        t, h, w = self.clip
        if t % PATCH[0] or h % PATCH[1] or w % PATCH[2]:
            raise ConfigError(f"clip {self.clip} not divisible into {PATCH} patches")
        gt, gh, gw = self.token_grid(0)
        if gh % 8 or gw % 8:
            raise ConfigError(f"token grid {self.token_grid(0)} cannot be halved spatially three times")

    def channels(self, stage):
        """Width of stage ``stage`` (0-based)."""
        return self.embed_dim * 2 ** stage

    def heads(self, stage):
        return self.channels(stage) // self.head_dim

    def token_grid(self, stage):
        t, h, w = self.clip
        f = 2 ** stage
        return (t // PATCH[0], h // PATCH[1] // f, w // PATCH[2] // f)

    @property
    def num_features(self):
        return self.channels(3)

    def drop_rates(self):
        """Stochastic-depth rate per block, rising linearly to ``drop_path``."""
        total = sum(self.depths)
        return list(np.linspace(0.0, self.drop_path, total)) if total > 1 else [self.drop_path]

    def to_dict(self):
        return {
            "embed_dim": self.embed_dim,
            "depths": list(self.depths),
            "window": [self.window.p, self.window.m],
            "head_dim": self.head_dim,
            "mlp_ratio": self.mlp_ratio,
            "num_classes": self.num_classes,
            "clip": list(self.clip),
            "drop_path": self.drop_path,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "window" in d and not isinstance(d["window"], WindowSpec):
            d["window"] = WindowSpec(*d["window"])
        return cls(**d)


VARIANTS = {
    "t": dict(embed_dim=96, depths=(2, 2, 6, 2)),
    "s": dict(embed_dim=96, depths=(2, 2, 18, 2)),
    "b": dict(embed_dim=128, depths=(2, 2, 18, 2)),
    "l": dict(embed_dim=192, depths=(2, 2, 18, 2)),
}


def build_variant(name, **overrides):
    """Preset Swin-T/S/B/L config with P=8, M=7, d=32, alpha=4.

    ``overrides`` replace any :class:`ArchConfig` field, e.g.
    ``window=WindowSpec(16, 7)`` or ``clip=(32, 384, 384)``.
    """
    key = str(name).lower().removeprefix("swin-")
    if key not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of T, S, B, L")
    unknown = set(overrides) - {f for f in ArchConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown override(s): {sorted(unknown)}")
    if isinstance(overrides.get("window"), str):
        overrides["window"] = WindowSpec.parse(overrides["window"])
    return ArchConfig(**{**VARIANTS[key], **overrides})


def patch_embed(clip, kernel, bias, gamma, beta):
    """Tokenize a (T, H, W, 3) or batched clip into (T/2, H/4, W/4, C) tokens.

    Each 2x4x4x3 patch is flattened in (t, h, w, rgb) order, mapped by the
    96 x C kernel and layer-normed.
    """
    unbatched = clip.ndim == 4
    x = reshape(clip, (1,) + clip.shape) if unbatched else clip
    if x.ndim != 5 or x.shape[-1] != 3:
        raise ConfigError(f"clip must be (T, H, W, 3) or (B, T, H, W, 3), got {clip.shape}")
    b, t, h, w, _ = x.shape
    pt, ph, pw = PATCH
    if t % pt or h % ph or w % pw:
        raise ConfigError(f"clip dims {(t, h, w)} not divisible by patch {PATCH}")
    c = kernel.shape[-1]
    x = reshape(x, (b, t // pt, pt, h // ph, ph, w // pw, pw, 3))
    x = permute(x, (0, 1, 3, 5, 2, 4, 6, 7))
    x = reshape(x, (b, t // pt, h // ph, w // pw, PATCH_DIM))
    x = linear(x, reshape(kernel, (PATCH_DIM, c)), bias)
    x = layer_norm(x, gamma, beta)
    return reshape(x, x.shape[1:]) if unbatched else x


def patch_merge(x, gamma, beta, weight):
    """Concatenate 2x2 spatial neighbours (h0w0, h1w0, h0w1, h1w1), norm, project 4c -> 2c."""
    unbatched = x.ndim == 4
    x = reshape(x, (1,) + x.shape) if unbatched else x
    b, t, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"patch merging needs even spatial dims, got {(h, w)}")
    x = reshape(x, (b, t, h // 2, 2, w // 2, 2, c))
    x = permute(x, (0, 1, 2, 4, 5, 3, 6))  # (.., w-offset, h-offset, c)
    x = reshape(x, (b, t, h // 2, w // 2, 4 * c))
    x = linear(layer_norm(x, gamma, beta), weight)
    return reshape(x, x.shape[1:]) if unbatched else x


def init_params(cfg, seed=0, dtype=np.float32):
    """Fresh parameters in canonical order."""
    rng = np.random.default_rng(seed)
    mk = lambda a: Tensor(a, dtype=dtype)  # noqa: E731
    c = cfg.embed_dim
    params = {
        "patch_embed.kernel": mk(trunc_normal(rng, PATCH + (3, c))),
        "patch_embed.bias": mk(np.zeros(c)),
        "patch_embed.norm.gamma": mk(np.ones(c)),
        "patch_embed.norm.beta": mk(np.zeros(c)),
    }
    for s in range(4):
        dim = cfg.channels(s)
        for j in range(cfg.depths[s]):
            blk = BlockWeights.init(dim, cfg.heads(s), cfg.window, rng, cfg.mlp_ratio, dtype)
            params.update(blk.named(f"stage{s + 1}.block{j}"))
        if s < 3:
            params[f"stage{s + 1}.merge.norm.gamma"] = mk(np.ones(4 * dim))
            params[f"stage{s + 1}.merge.norm.beta"] = mk(np.zeros(4 * dim))
            params[f"stage{s + 1}.merge.linear.w"] = mk(trunc_normal(rng, (4 * dim, 2 * dim)))
    nf = cfg.num_features
    params["final_norm.gamma"] = mk(np.ones(nf))
    params["final_norm.beta"] = mk(np.zeros(nf))
    params["head.w"] = mk(trunc_normal(rng, (nf, cfg.num_classes)))
    params["head.b"] = mk(np.zeros(cfg.num_classes))
    return params


def expected_shapes(cfg):
    """Canonical parameter names mapped to their shapes."""
    shapes = {}
    c = cfg.embed_dim
    shapes["patch_embed.kernel"] = PATCH + (3, c)
    shapes["patch_embed.bias"] = (c,)
    shapes["patch_embed.norm.gamma"] = (c,)
    shapes["patch_embed.norm.beta"] = (c,)
    for s in range(4):
        dim, hidden = cfg.channels(s), cfg.mlp_ratio * cfg.channels(s)
        for j in range(cfg.depths[s]):
            p = f"stage{s + 1}.block{j}"
            shapes.update(
                {
                    f"{p}.ln1.gamma": (dim,),
                    f"{p}.ln1.beta": (dim,),
                    f"{p}.attn.qkv.w": (dim, 3 * dim),
                    f"{p}.attn.qkv.b": (3 * dim,),
                    f"{p}.attn.out.w": (dim, dim),
                    f"{p}.attn.out.b": (dim,),
                    f"{p}.attn.relpos": (cfg.window.table_size, cfg.heads(s)),
                    f"{p}.ln2.gamma": (dim,),
                    f"{p}.ln2.beta": (dim,),
                    f"{p}.mlp.fc1.w": (dim, hidden),
                    f"{p}.mlp.fc1.b": (hidden,),
                    f"{p}.mlp.fc2.w": (hidden, dim),
                    f"{p}.mlp.fc2.b": (dim,),
                }
            )
        if s < 3:
            shapes[f"stage{s + 1}.merge.norm.gamma"] = (4 * dim,)
            shapes[f"stage{s + 1}.merge.norm.beta"] = (4 * dim,)
            shapes[f"stage{s + 1}.merge.linear.w"] = (4 * dim, 2 * dim)
    nf = cfg.num_features
    shapes["final_norm.gamma"] = (nf,)
    shapes["final_norm.beta"] = (nf,)
    shapes["head.w"] = (nf, cfg.num_classes)
    shapes["head.b"] = (cfg.num_classes,)
    return shapes


class VideoSwin:
    """A config plus its named parameters.

    ``forward`` accepts one clip (T, H, W, 3) and returns (num_classes,)
    logits, or a batch (B, T, H, W, 3) and returns (B, num_classes).
    """

    def __init__(self, cfg, params=None, seed=0, dtype=np.float32):
        self.cfg = cfg
        self.params = init_params(cfg, seed, dtype) if params is None else dict(params)
        want = expected_shapes(cfg)
        missing = [k for k in want if k not in self.params]
        if missing:
            raise ConfigError(f"missing parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        for k, shape in want.items():
            if tuple(self.params[k].shape) != shape:
                raise ConfigError(f"parameter {k} has shape {self.params[k].shape}, expected {shape}")

    @property
    def dtype(self):
        return self.params["head.w"].dtype

    def astype(self, dtype):
        return VideoSwin(self.cfg, {k: Tensor(v.data, dtype=dtype) for k, v in self.params.items()})

    def backbone_names(self):
        return [k for k in self.params if not k.startswith("head.")]

    def head_names(self):
        return [k for k in self.params if k.startswith("head.")]

    def blocks(self, stage):
        return [BlockWeights.from_named(self.params, f"stage{stage + 1}.block{j}") for j in range(self.cfg.depths[stage])]

    def features(self, clip, rng=None, trace=None):
        """Backbone output before pooling, (B, T', H', W', 8C) for batched input."""
        cfg, p = self.cfg, self.params
        x = clip if isinstance(clip, Tensor) else Tensor(clip, dtype=self.dtype)
        if tuple(x.shape[-4:-1]) != cfg.clip:
            raise ConfigError(f"clip dims {tuple(x.shape[-4:-1])} do not match config {cfg.clip}")
        x = patch_embed(
            x, p["patch_embed.kernel"], p["patch_embed.bias"], p["patch_embed.norm.gamma"], p["patch_embed.norm.beta"]
        )
        if trace is not None:
            trace.append(("patch_embed", tuple(x.shape[-4:])))
        rates = iter(cfg.drop_rates())
        for s in range(4):
            for j, blk in enumerate(self.blocks(s)):
                x = block_forward(
                    x, blk, cfg.window, shifted=j % 2 == 1, head_dim=cfg.head_dim, drop_rate=next(rates), rng=rng
                )
            if trace is not None:
                trace.append((f"stage{s + 1}", tuple(x.shape[-4:])))
            if s < 3:
                pre = f"stage{s + 1}.merge"
                x = patch_merge(x, p[f"{pre}.norm.gamma"], p[f"{pre}.norm.beta"], p[f"{pre}.linear.w"])
                if trace is not None:
                    trace.append((pre, tuple(x.shape[-4:])))
        return layer_norm(x, p["final_norm.gamma"], p["final_norm.beta"])

    def forward(self, clip, rng=None, trace=None):
        """Logits for a clip. Passing ``rng`` turns on stochastic depth (training)."""
        x = self.features(clip, rng=rng, trace=trace)
        pooled = mean(x, axis=(-4, -3, -2))
        return linear(pooled, self.params["head.w"], self.params["head.b"])

    __call__ = forward


def forward(model, clip):
    return model.forward(clip)
