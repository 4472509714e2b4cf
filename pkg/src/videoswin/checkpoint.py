"""Named-tensor checkpoint container and 2D -> 3D weight inflation.

File layout (all integers little-endian)::

    bytes 0..3    magic b"VSWT"
    bytes 4..7    format version, u32 (currently 1)
    bytes 8..15   manifest length in bytes, u64
    manifest      UTF-8 JSON: {"tensors": [{"name", "shape", "dtype",
                  "offset", "nbytes"}, ...], "meta": {...}}
    payload       packed tensor bytes; offsets are relative to its start

``dtype`` is ``"f32"`` or ``"f64"``. Tensors appear in insertion order.

Converting an external 2D Swin dump means renaming its entries to the
names below (the 2D store uses the same names as the 3D model)::

    patch_embed.proj.weight (C, 3, 4, 4)  -> patch_embed.kernel (4, 4, 3, C), i.e. permute (2, 3, 1, 0)
    patch_embed.proj.bias                 -> patch_embed.bias
    patch_embed.norm.{weight,bias}        -> patch_embed.norm.{gamma,beta}
    layers.{i-1}.blocks.{j}.norm1.*       -> stage{i}.block{j}.ln1.{gamma,beta}
    layers.{i-1}.blocks.{j}.attn.qkv.*    -> stage{i}.block{j}.attn.qkv.{w,b}    (weight transposed)
    layers.{i-1}.blocks.{j}.attn.proj.*   -> stage{i}.block{j}.attn.out.{w,b}    (weight transposed)
    layers.{i-1}.blocks.{j}.attn.relative_position_bias_table -> stage{i}.block{j}.attn.relpos
    layers.{i-1}.blocks.{j}.norm2.*       -> stage{i}.block{j}.ln2.{gamma,beta}
    layers.{i-1}.blocks.{j}.mlp.fc{k}.*   -> stage{i}.block{j}.mlp.fc{k}.{w,b}   (weight transposed)
    layers.{i-1}.downsample.norm.*        -> stage{i}.merge.norm.{gamma,beta}
    layers.{i-1}.downsample.reduction.weight -> stage{i}.merge.linear.w           (transposed)
    norm.{weight,bias}                    -> final_norm.{gamma,beta}

Merge inputs must be concatenated in (h0w0, h1w0, h0w1, h1w1) order, which
is the usual 2D Swin order.
"""
import json
import re
import struct
from dataclasses import dataclass

import numpy as np

from .attention import trunc_normal
from .errors import ConfigError, FormatError
from .model import PATCH, ArchConfig, expected_shapes
from .windowing import WindowSpec

MAGIC = b"VSWT"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_CODES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

CENTER_MASK_VALUE = -4.6


class NamedTensorStore:
    """Ordered mapping of name -> float32/float64 array, plus a JSON-able ``meta`` dict."""

    def __init__(self, tensors=None, meta=None):
        self._tensors = {}
        self.meta = dict(meta or {})
        for k, v in (tensors or {}).items():
            self[k] = v

    def __setitem__(self, name, value):
        arr = np.asarray(getattr(value, "data", value))
        if arr.dtype not in _CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        self._tensors[str(name)] = np.ascontiguousarray(arr)

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def equals(self, other):
        """Bitwise equality including name order, dtypes and meta."""
        if self.names() != other.names() or self.meta != other.meta:
            return False
        for k, a in self.items():
            b = other[k]
            if a.dtype != b.dtype or a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True

    def to_bytes(self):
        entries, chunks, offset = [], [], 0
        for name, arr in self._tensors.items():
            code = _CODES[arr.dtype]
            raw = arr.astype(_DTYPES[code], copy=False).tobytes()
            entries.append(
                {"name": name, "shape": list(arr.shape), "dtype": code, "offset": offset, "nbytes": len(raw)}
            )
            chunks.append(raw)
            offset += len(raw)
        manifest = json.dumps({"tensors": entries, "meta": self.meta}, separators=(",", ":")).encode()
        return _HEADER.pack(MAGIC, VERSION, len(manifest)) + manifest + b"".join(chunks)

    @classmethod
    def from_bytes(cls, buf):
        buf = memoryview(buf)
        if len(buf) < _HEADER.size:
            raise FormatError("truncated header", len(buf))
        magic, version, mlen = _HEADER.unpack_from(buf, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {bytes(magic)!r}", 0)
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 4)
        start = _HEADER.size
        if len(buf) < start + mlen:
            raise FormatError("truncated manifest", len(buf))
        try:
            manifest = json.loads(bytes(buf[start:start + mlen]).decode())
            entries = manifest["tensors"]
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"unreadable manifest: {exc}", start) from exc
        base = start + mlen
        store = cls(meta=manifest.get("meta", {}))
        for e in entries:
            try:
                name, shape, code = e["name"], tuple(e["shape"]), e["dtype"]
                off, nbytes = int(e["offset"]), int(e["nbytes"])
                dt = _DTYPES[code]
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad manifest entry {e!r}", start) from exc
            if nbytes != dt.itemsize * int(np.prod(shape, dtype=np.int64)):
                raise FormatError(f"{name}: byte length {nbytes} does not match shape {shape}", start)
            if name in store:
                raise FormatError(f"duplicate tensor name {name!r}", start)
            lo = base + off
            if lo + nbytes > len(buf):
                raise FormatError(f"{name}: payload truncated", min(lo, len(buf)))
            arr = np.frombuffer(buf[lo:lo + nbytes], dtype=dt).reshape(shape)
            store[name] = arr.astype(dt.newbyteorder("="), copy=True)
        return store

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def save(store, path):
    store.save(path)


def load(path):
    return NamedTensorStore.load(path)


def store_from_model(model):
    return NamedTensorStore(
        {k: v.data for k, v in model.params.items()}, meta={"arch": model.cfg.to_dict()}
    )


def model_from_store(store, cfg=None, dtype=None):
    """Build a :class:`~videoswin.model.VideoSwin` from a store.

    The architecture comes from ``cfg`` or the store's ``meta["arch"]``.
    """
    from .model import VideoSwin
    from .tensor import Tensor

    if cfg is None:
        if "arch" not in store.meta:
            raise ConfigError("store has no architecture metadata; pass cfg")
        cfg = ArchConfig.from_dict(store.meta["arch"])
    params = {k: Tensor(store[k], dtype=dtype or store[k].dtype) for k in expected_shapes(cfg) if k in store}
    return VideoSwin(cfg, params)


# ---------------------------------------------------------------------------
# inflation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitMode:
    embed: str = "inflate"  # inflate | center
    relpos: str = "duplicate"  # duplicate | center
    center_mask_value: float = CENTER_MASK_VALUE

    def __post_init__(self):
        if self.embed not in ("inflate", "center"):
            raise ConfigError(f"embed mode must be inflate or center, got {self.embed!r}")
        if self.relpos not in ("duplicate", "center"):
            raise ConfigError(f"relpos mode must be duplicate or center, got {self.relpos!r}")
        if not self.center_mask_value < 0:
            raise ConfigError("center_mask_value must be negative")


def inflate_patch_embed(w2d, mode="inflate"):
    """(4, 4, 3, C) image kernel -> (2, 4, 4, 3, C) video kernel.

    ``inflate`` copies the kernel to both temporal slices at half weight, so
    a clip whose paired frames are equal embeds exactly as one frame would.
    ``center`` puts the kernel in slice 0 and zeros slice 1.
    """
    w2d = np.asarray(w2d)
    if w2d.ndim != 4 or w2d.shape[:3] != PATCH[1:] + (3,):
        raise ConfigError(f"expected a (4, 4, 3, C) kernel, got {w2d.shape}")
    if mode == "inflate":
        return np.stack([w2d, w2d]) * w2d.dtype.type(0.5)
    if mode == "center":
        return np.stack([w2d, np.zeros_like(w2d)])
    raise ConfigError(f"unknown embed init mode {mode!r}")


def init_relative_position_bias(b2d, p, mode="duplicate", center_mask_value=CENTER_MASK_VALUE):
    """((2M-1)^2, heads) table -> ((2p-1)(2M-1)^2, heads).

    ``duplicate`` repeats the table for every temporal displacement.
    ``center`` keeps it at zero displacement and fills every other temporal
    slab with ``center_mask_value``.
    """
    b2d = np.asarray(b2d)
    if b2d.ndim != 2:
        raise ConfigError(f"expected a 2D bias table, got shape {b2d.shape}")
    span = int(round(np.sqrt(b2d.shape[0])))
    if span * span != b2d.shape[0] or span % 2 == 0:
        raise ConfigError(f"bias table rows {b2d.shape[0]} are not (2M-1)^2")
    slabs = 2 * p - 1
    if mode == "duplicate":
        return np.concatenate([b2d] * slabs, axis=0)
    if mode == "center":
        out = np.full((slabs * b2d.shape[0], b2d.shape[1]), center_mask_value, dtype=b2d.dtype)
        out[(p - 1) * b2d.shape[0]:p * b2d.shape[0]] = b2d
        return out
    raise ConfigError(f"unknown relpos init mode {mode!r}")


_RELPOS = re.compile(r"^stage(\d)\.block(\d+)\.attn\.relpos$")


def arch_from_2d_store(store2d, window_p=8, num_classes=400, clip=(32, 224, 224), head_dim=None):
    """Derive an :class:`ArchConfig` from the tensor shapes of a 2D store."""
    if "patch_embed.kernel" not in store2d:
        raise ConfigError("missing tensor 'patch_embed.kernel'")
    c = store2d["patch_embed.kernel"].shape[-1]
    depths = [0, 0, 0, 0]
    heads1 = None
    rows = None
    for name in store2d:
        m = _RELPOS.match(name)
        if m:
            s, j = int(m.group(1)), int(m.group(2))
            depths[s - 1] = max(depths[s - 1], j + 1)
            if s == 1:
                heads1 = store2d[name].shape[1]
                rows = store2d[name].shape[0]
    if heads1 is None:
        raise ConfigError("missing tensor 'stage1.block0.attn.relpos'")
    span = int(round(np.sqrt(rows)))
    if head_dim is None:
        head_dim = c // heads1
    return ArchConfig(
        embed_dim=c,
        depths=tuple(depths),
        window=WindowSpec(window_p, (span + 1) // 2),
        head_dim=head_dim,
        num_classes=num_classes,
        clip=tuple(clip),
    )


def inflate_checkpoint(store2d, arch, mode=InitMode(), seed=0):
    """Turn a 2D Swin store into a store for the 3D model ``arch``.

    Everything is copied verbatim except the patch-embed kernel and the
    relative-bias tables. Head weights are copied when present with the
    right shape, otherwise drawn fresh (truncated normal, std 0.02; zero bias).
    """
    want = expected_shapes(arch)
    rng = np.random.default_rng(seed)
    out = NamedTensorStore(meta={"arch": arch.to_dict(), "init": {"embed": mode.embed, "relpos": mode.relpos}})
    m = arch.window.m
    for name, shape in want.items():
        if name.startswith("head."):
            src = store2d[name] if name in store2d else None
            if src is not None and src.shape == shape:
                out[name] = src
            elif name == "head.w":
                out[name] = trunc_normal(rng, shape).astype(store2d["patch_embed.kernel"].dtype)
            else:
                out[name] = np.zeros(shape, dtype=store2d["patch_embed.kernel"].dtype)
            continue
        if name not in store2d:
            raise ConfigError(f"missing tensor {name!r} in 2D checkpoint")
        src = store2d[name]
        if name == "patch_embed.kernel":
            val = inflate_patch_embed(src, mode.embed)
        elif _RELPOS.match(name):
            if src.shape != ((2 * m - 1) ** 2, shape[1]):
                raise ConfigError(
                    f"{name}: 2D table {src.shape} incompatible with M={m} and {shape[1]} heads"
                )
            val = init_relative_position_bias(src, arch.window.p, mode.relpos, mode.center_mask_value)
        else:
            val = src
        if val.shape != shape:
            raise ConfigError(f"{name}: shape {val.shape} does not match expected {shape}")
        out[name] = val
    return out
