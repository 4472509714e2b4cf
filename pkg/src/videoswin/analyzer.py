"""Static parameter and FLOP accounting.

One multiply-accumulate counts as one FLOP. Counted: patch embedding,
QKV/output projections, the two window-local products per head
(scores and score-weighted values), MLPs, patch merging and the head.
Softmax, GELU, layer norm and pooling are left out of the FLOP total (their
parameters are still counted). Attention projections run on the padded
grid, as in execution.

Designs:

* ``joint``: the regular 3D window model.
* ``split``: spatial-only windows (1 x M x M) followed by two full temporal
  transformer layers at the last stage's width, attending over the whole
  temporal axis at each spatial position.
* ``factorized``: spatial-only windows, each spatial attention followed by
  a temporal-only attention layer (norm, QKV, output projection, a temporal
  bias table and a scalar gate) over P x 1 x 1 windows.
"""
import json
from dataclasses import dataclass, field

from .model import PATCH_DIM, PATCH
from .windowing import WindowSpec, padded_dims, resolve

DESIGNS = ("joint", "split", "factorized")


@dataclass
class CostRow:
    name: str
    params: int
    flops: int
    grid: tuple = ()  # (T', H', W', C) after this layer


@dataclass
class CostReport:
    design: str
    clip: tuple
    rows: list = field(default_factory=list)

    @property
    def params(self):
        return sum(r.params for r in self.rows)

    @property
    def flops(self):
        return sum(r.flops for r in self.rows)

    @property
    def gflops(self):
        return self.flops / 1e9

    @property
    def mparams(self):
        return self.params / 1e6

    def add(self, name, params, flops, grid=()):
        self.rows.append(CostRow(name, int(params), int(flops), tuple(grid)))

    def shape_trace(self):
        """(layer, grid) pairs for stage boundaries, comparable to a forward trace."""
        keep = ("patch_embed",)
        out = []
        for r in self.rows:
            if r.name in keep or r.name.endswith(".merge"):
                out.append((r.name, r.grid))
            elif r.name.endswith(".end"):
                out.append((r.name[: -len(".end")], r.grid))
        return out


def linear_macs(tokens, c_in, c_out):
    """MACs of a dense layer applied to ``tokens`` vectors."""
    return tokens * c_in * c_out


def _attn_flops(dims, c, window, shift=(0, 0, 0)):
    win, _ = resolve(dims, window, shift)
    pd = padded_dims(dims, win)
    n_pad = pd[0] * pd[1] * pd[2]
    n = win[0] * win[1] * win[2]
    proj = linear_macs(n_pad, c, 3 * c) + linear_macs(n_pad, c, c)
    products = 2 * n_pad * n * c  # q.k^T and attn.v over all heads
    return proj + products


def _msa_params(c, heads, table_rows):
    return 3 * c * c + 3 * c + c * c + c + table_rows * heads


def _block_rows(rep, prefix, dims, c, heads, window, mlp_ratio, spatial_only, factorized_p=None):
    n_tok = dims[0] * dims[1] * dims[2]
    hidden = mlp_ratio * c
    win = WindowSpec(1, window.m) if spatial_only else window
    rep.add(f"{prefix}.attn", 2 * c + _msa_params(c, heads, win.table_size), _attn_flops(dims, c, win.size), dims + (c,))
    if factorized_p is not None:
        twin = (factorized_p, 1, 1)
        rep.add(
            f"{prefix}.temporal_attn",
            2 * c + _msa_params(c, heads, 2 * factorized_p - 1) + 1,
            _attn_flops(dims, c, twin),
            dims + (c,),
        )
    rep.add(f"{prefix}.mlp", 2 * c + c * hidden + hidden + hidden * c + c, linear_macs(n_tok, c, hidden) + linear_macs(n_tok, hidden, c), dims + (c,))


def analyze(arch, design="joint", clip=None):
    """Full per-layer :class:`CostReport` for ``arch`` on one view of ``clip``.

    ``clip`` defaults to ``arch.clip`` and only affects FLOPs.
    """
    if design not in DESIGNS:
        raise ValueError(f"unknown design {design!r}; expected one of {DESIGNS}")
    clip = tuple(arch.clip if clip is None else clip)
    rep = CostReport(design=design, clip=clip)
    t, h, w = clip
    dims = (t // PATCH[0], h // PATCH[1], w // PATCH[2])
    c = arch.embed_dim
    n_tok = dims[0] * dims[1] * dims[2]
    rep.add("patch_embed", PATCH_DIM * c + c + 2 * c, linear_macs(n_tok, PATCH_DIM, c), dims + (c,))

    spatial_only = design != "joint"
    fp = arch.window.p if design == "factorized" else None
    for s in range(4):
        c = arch.channels(s)
        heads = arch.heads(s)
        for j in range(arch.depths[s]):
            _block_rows(rep, f"stage{s + 1}.block{j}", dims, c, heads, arch.window, arch.mlp_ratio, spatial_only, fp)
        rep.add(f"stage{s + 1}.end", 0, 0, dims + (c,))
        if s < 3:
            out = (dims[0], dims[1] // 2, dims[2] // 2)
            n_out = out[0] * out[1] * out[2]
            rep.add(f"stage{s + 1}.merge", 8 * c + 8 * c * c, linear_macs(n_out, 4 * c, 2 * c), out + (2 * c,))
            dims = out

    c = arch.num_features
    if design == "split":
        heads = arch.heads(3)
        twin = WindowSpec(dims[0], 1)
        n_tok = dims[0] * dims[1] * dims[2]
        for j in range(2):
            rep.add(
                f"temporal.layer{j}.attn",
                2 * c + _msa_params(c, heads, 0),
                _attn_flops(dims, c, twin.size),
                dims + (c,),
            )
            hidden = arch.mlp_ratio * c
            rep.add(
                f"temporal.layer{j}.mlp",
                2 * c + 2 * c * hidden + hidden + c,
                linear_macs(n_tok, c, hidden) + linear_macs(n_tok, hidden, c),
                dims + (c,),
            )
    rep.add("final_norm", 2 * c, 0, dims + (c,))
    rep.add("head", c * arch.num_classes + arch.num_classes, linear_macs(1, c, arch.num_classes), (arch.num_classes,))
    return rep


def count_params(arch, design="joint"):
    """Exact parameter total and per-layer ``(name, count)`` rows."""
    rep = analyze(arch, design)
    return rep.params, [(r.name, r.params) for r in rep.rows if r.params or not r.name.endswith(".end")]


def count_flops(arch, design="joint", clip=None):
    """Exact MAC total for one view and per-layer ``(name, flops)`` rows."""
    rep = analyze(arch, design, clip)
    return rep.flops, [(r.name, r.flops) for r in rep.rows if not r.name.endswith(".end")]


def analyze_design(arch, design):
    return analyze(arch, design)


def emit_report(report, fmt="table"):
    """Render a report as an aligned text table or as JSON lines.

    JSON lines carry exact integers, one object per layer in execution order
    and a final ``"total"`` object.
    """
    rows = [r for r in report.rows if not r.name.endswith(".end")]
    if fmt in ("json-lines", "jsonl", "json"):
        lines = [json.dumps({"name": r.name, "params": r.params, "flops": r.flops}) for r in rows]
        lines.append(json.dumps({"name": "total", "params": report.params, "flops": report.flops}))
        return "\n".join(lines) + "\n"
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    width = max([len(r.name) for r in rows] + [5])
    clip = "x".join(str(v) for v in report.clip)
    out = [f"design: {report.design}   view: {clip}", f"{'layer':<{width}}  {'params':>12}  {'GFLOPs':>10}"]
    out.append("-" * len(out[-1]))
    for r in rows:
        out.append(f"{r.name:<{width}}  {r.params:>12d}  {r.flops / 1e9:>10.3f}")
    out.append("-" * len(out[1]))
    out.append(f"{'total':<{width}}  {report.params:>12d}  {report.flops / 1e9:>10.3f}")
    out.append(f"Param {report.mparams:.1f}M  FLOPs {report.gflops:.1f}G")
    return "\n".join(out) + "\n"


def summary_table(named_reports):
    """One line per model, ``name  FLOPs(G)  Param(M)``, in the given order."""
    out = [f"{'model':<20} {'FLOPs(G)':>9} {'Param(M)':>9}"]
    for name, rep in named_reports:
        out.append(f"{name:<20} {rep.gflops:>9.1f} {rep.mparams:>9.1f}")
    return "\n".join(out) + "\n"
