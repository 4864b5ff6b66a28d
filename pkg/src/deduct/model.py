"""Recurrent transformer over lattice states, with exact hand-written
gradients.

A fixed stack of pre-norm attention blocks is unrolled for a configurable
number of internal iterations with shared weights; the embedded input is
re-injected additively before every iteration.  Each iteration is read out
through shared heads into per-cell candidate logits plus a single conflict
logit taken from a distinguished CLS position.

Candidates that are already dead in the input get their logit forced to a
large negative constant, so a thresholded output can never resurrect an
eliminated candidate; per-step monotonicity is structural, not learned.

Everything runs on numpy.  Gradients are exact (the test suite checks
every coordinate against central finite differences in float64).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .lattice import LatticeShape

NEG_LOGIT = -1.0e4  # "minus infinity" for dead candidates; sigmoid(x) == 0.0
_LN_EPS = 1e-5
_ROPE_BASE = 10000.0


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    shape: LatticeShape
    embed_dim: int = 128
    num_layers: int = 4
    num_heads: int = 4
    iterations: int = 16
    ffn_multiplier: float = 4.0
    dropout: float = 0.1
    use_rope2d: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.iterations < 1:
            raise ValueError("need at least one internal iteration")
        if self.use_rope2d and (self.embed_dim // self.num_heads) % 4 != 0:
            raise ValueError("2D rotary encoding needs head_dim divisible by 4")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def ffn_dim(self) -> int:
        return int(round(self.embed_dim * self.ffn_multiplier))

    @property
    def seq_len(self) -> int:
        return self.shape.num_cells + 1  # CLS at index 0

    def to_dict(self) -> dict:
        return {"rows": self.shape.rows, "cols": self.shape.cols,
                "vocab_size": self.shape.vocab_size,
                "embed_dim": self.embed_dim, "num_layers": self.num_layers,
                "num_heads": self.num_heads, "iterations": self.iterations,
                "ffn_multiplier": self.ffn_multiplier, "dropout": self.dropout,
                "use_rope2d": self.use_rope2d, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        shape = LatticeShape(d["rows"], d["cols"], d["vocab_size"])
        kw = {k: d[k] for k in ("embed_dim", "num_layers", "num_heads",
                                "iterations", "ffn_multiplier", "dropout",
                                "use_rope2d", "seed")}
        return cls(shape=shape, **kw)


def param_order(cfg: ModelConfig) -> list[str]:
    names = ["embed.w", "embed.b", "pos.row", "pos.col", "cls"]
    for i in range(cfg.num_layers):
        p = f"blocks.{i}."
        names += [p + s for s in (
            "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
            "attn.wv", "attn.bv", "attn.wo", "attn.bo",
            "ln2.g", "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2")]
    names += ["ln_f.g", "ln_f.b", "head.cand.w", "head.cand.b",
              "head.conflict.w", "head.conflict.b"]
    return names


def init_params(cfg: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    """Deterministic scaled-normal init; biases and layernorm offsets zero."""
    rng = np.random.default_rng(cfg.seed)
    d, f, v = cfg.embed_dim, cfg.ffn_dim, cfg.shape.vocab_size

    def w(shape, fan_in):
        return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)

    def z(shape=()):
        return np.zeros(shape, dtype=dtype)

    params: dict[str, np.ndarray] = {
        "embed.w": w((v + 1, d), v + 1),
        "embed.b": z(d),
        "pos.row": (0.02 * rng.standard_normal((cfg.shape.rows, d))).astype(dtype),
        "pos.col": (0.02 * rng.standard_normal((cfg.shape.cols, d))).astype(dtype),
        "cls": (0.02 * rng.standard_normal(d)).astype(dtype),
    }
    for i in range(cfg.num_layers):
        p = f"blocks.{i}."
        params[p + "ln1.g"] = np.ones(d, dtype=dtype)
        params[p + "ln1.b"] = z(d)
        for nm in ("wq", "wk", "wv", "wo"):
            params[p + "attn." + nm] = w((d, d), d)
        for nm in ("bq", "bk", "bv", "bo"):
            params[p + "attn." + nm] = z(d)
        params[p + "ln2.g"] = np.ones(d, dtype=dtype)
        params[p + "ln2.b"] = z(d)
        params[p + "ffn.w1"] = w((d, f), d)
        params[p + "ffn.b1"] = z(f)
        params[p + "ffn.w2"] = w((f, d), f)
        params[p + "ffn.b2"] = z(d)
    params["ln_f.g"] = np.ones(d, dtype=dtype)
    params["ln_f.b"] = z(d)
    params["head.cand.w"] = w((d, v), d)
    params["head.cand.b"] = z(v)
    params["head.conflict.w"] = w((d,), d)
    params["head.conflict.b"] = z()
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(p.size for p in params.values()))


# -- primitive layers ------------------------------------------------------


def _layernorm_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu_fwd(u):
    c = erf(u / np.sqrt(2.0))
    return 0.5 * u * (1.0 + c), c


def _gelu_bwd(du_out, u, c):
    pdf = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    return du_out * (0.5 * (1.0 + c) + u * pdf)


# -- 2D rotary encoding ----------------------------------------------------


def _rope_tables(cfg: ModelConfig, dtype) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape (seq_len, head_dim/2): first half rotates by
    row angle, second half by column angle.  CLS sits at coordinate (0, 0)."""
    hd = cfg.head_dim
    pairs = hd // 4
    freqs = _ROPE_BASE ** (-np.arange(pairs) / pairs)
    k = cfg.shape.num_cells
    rows = np.concatenate([[0], np.arange(k) // cfg.shape.cols])
    cols = np.concatenate([[0], np.arange(k) % cfg.shape.cols])
    ang = np.concatenate([rows[:, None] * freqs[None, :],
                          cols[:, None] * freqs[None, :]], axis=1)
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def _rope_apply(x, cos, sin):
    """Rotate pairs of x (..., T, hd) by per-position angles (T, hd/2)."""
    xe, xo = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos
    return out


def rope2d(x: np.ndarray, rows: np.ndarray, cols: np.ndarray,
           base: float = _ROPE_BASE) -> np.ndarray:
    """Standalone 2D rotary transform of vectors x (..., n, hd) located at
    integer grid coordinates (rows, cols); hd must be divisible by 4.

    The first half of the vector is rotated by row-dependent angles, the
    second half by column-dependent ones, so dot products of rotated
    query/key pairs depend only on coordinate differences.
    """
    hd = x.shape[-1]
    if hd % 4 != 0:
        raise ValueError("last dimension must be divisible by 4")
    pairs = hd // 4
    freqs = base ** (-np.arange(pairs) / pairs)
    ang = np.concatenate([np.asarray(rows)[:, None] * freqs[None, :],
                          np.asarray(cols)[:, None] * freqs[None, :]], axis=1)
    return _rope_apply(x, np.cos(ang), np.sin(ang))


# -- forward / backward ----------------------------------------------------


@dataclass
class ModelOutput:
    cand_logits: np.ndarray     # (L, B, k, V), dead inputs forced to NEG_LOGIT
    conflict_logits: np.ndarray  # (L, B)
    cache: dict | None = None


def _dropout_masks(cfg: ModelConfig, batch: int, rate: float, rng, row_rngs, dtype):
    """Inverted-dropout masks for every (iteration, layer, sublayer) site.

    With ``row_rngs``, each batch row draws its noise from its own stream,
    which makes results independent of how rows are batched together.
    """
    n_sites = cfg.iterations * cfg.num_layers * 2
    shape = (n_sites, batch, cfg.seq_len, cfg.embed_dim)
    if row_rngs is not None:
        noise = np.empty(shape, dtype=np.float64)
        for b, r in enumerate(row_rngs):
            noise[:, b] = r.random((n_sites, cfg.seq_len, cfg.embed_dim))
    else:
        if rng is None:
            raise ValueError("dropout requires an rng")
        noise = rng.random(shape)
    return ((noise >= rate) / (1.0 - rate)).astype(dtype)


def forward(params: dict[str, np.ndarray], bits: np.ndarray, mask: np.ndarray,
            cfg: ModelConfig, dropout_rate: float = 0.0,
            rng: np.random.Generator | None = None, row_rngs=None,
            keep_cache: bool = False) -> ModelOutput:
    """Run the unrolled stack on a batch of lattice encodings.

    bits: (B, k, V) multi-hot alive candidates; mask: (B, k) in-puzzle flags.
    """
    dtype = params["embed.w"].dtype
    B, k, V = bits.shape
    if (k, V) != (cfg.shape.num_cells, cfg.shape.vocab_size):
        raise ValueError(f"batch shaped {bits.shape} does not match {cfg.shape}")
    bits = bits.astype(dtype)
    maskf = mask.astype(dtype)
    d, H, hd, T, L = cfg.embed_dim, cfg.num_heads, cfg.head_dim, cfg.seq_len, cfg.iterations
    scale = 1.0 / np.sqrt(hd)

    x_in = np.concatenate([bits, maskf[..., None]], axis=-1)  # (B, k, V+1)
    rows_idx = np.arange(k) // cfg.shape.cols
    cols_idx = np.arange(k) % cfg.shape.cols
    pos = params["pos.row"][rows_idx] + params["pos.col"][cols_idx]
    e = np.empty((B, T, d), dtype=dtype)
    e[:, 0] = params["cls"]
    e[:, 1:] = x_in @ params["embed.w"] + params["embed.b"] + pos

    drop = None
    if dropout_rate > 0.0:
        drop = _dropout_masks(cfg, B, dropout_rate, rng, row_rngs, dtype)
    rope = _rope_tables(cfg, dtype) if cfg.use_rope2d else None

    cand = np.empty((L, B, k, V), dtype=dtype)
    conf = np.empty((L, B), dtype=dtype)
    iter_caches = []
    h = np.zeros((B, T, d), dtype=dtype)
    site = 0
    for it in range(L):
        u = h + e
        h = u
        layer_caches = []
        for li in range(cfg.num_layers):
            p = params
            pre = f"blocks.{li}."
            # attention sublayer
            x1, lnc1 = _layernorm_fwd(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = (x1 @ p[pre + "attn.wq"] + p[pre + "attn.bq"]).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
            kk = (x1 @ p[pre + "attn.wk"] + p[pre + "attn.bk"]).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
            v = (x1 @ p[pre + "attn.wv"] + p[pre + "attn.bv"]).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
            if rope is not None:
                q = _rope_apply(q, *rope)
                kk = _rope_apply(kk, *rope)
            scores = np.einsum("bhtd,bhsd->bhts", q, kk) * scale
            scores -= scores.max(-1, keepdims=True)
            att = np.exp(scores)
            att /= att.sum(-1, keepdims=True)
            ctx = np.einsum("bhts,bhsd->bhtd", att, v)
            merged = ctx.transpose(0, 2, 1, 3).reshape(B, T, d)
            o = merged @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
            dm_a = None
            if drop is not None:
                dm_a = drop[site]
                o = o * dm_a
            site += 1
            h = h + o
            # feed-forward sublayer
            x2, lnc2 = _layernorm_fwd(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
            uff = x2 @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
            gff, erfc = _gelu_fwd(uff)
            y = gff @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
            dm_f = None
            if drop is not None:
                dm_f = drop[site]
                y = y * dm_f
            site += 1
            h = h + y
            layer_caches.append((x1, lnc1, q, kk, v, att, merged, dm_a,
                                 x2, lnc2, uff, gff, erfc, dm_f))
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activations at internal iteration {it}")
        hn, lncf = _layernorm_fwd(h, params["ln_f.g"], params["ln_f.b"])
        cand[it] = hn[:, 1:] @ params["head.cand.w"] + params["head.cand.b"]
        conf[it] = hn[:, 0] @ params["head.conflict.w"] + params["head.conflict.b"]
        iter_caches.append({"layers": layer_caches, "hn": hn, "lnf": lncf, "h": h})

    alive = (bits > 0) & (maskf[..., None] > 0)
    guarded = np.where(alive, cand, dtype.type(NEG_LOGIT))
    cache = None
    if keep_cache:
        cache = {"iters": iter_caches, "e_inputs": x_in, "alive": alive,
                 "rows_idx": rows_idx, "cols_idx": cols_idx, "rope": rope,
                 "cfg": cfg, "params": params, "B": B}
    return ModelOutput(guarded, conf, cache)


def backward(cache: dict, d_cand: np.ndarray, d_conf: np.ndarray
             ) -> dict[str, np.ndarray]:
    """Exact gradients given upstream gradients on the per-iteration logits.

    Gradients at dead-input candidate positions are dropped (those logits
    are overwritten by the guard constant in the forward pass).
    """
    cfg: ModelConfig = cache["cfg"]
    params = cache["params"]
    B = cache["B"]
    d, H, hd, T, L = cfg.embed_dim, cfg.num_heads, cfg.head_dim, cfg.seq_len, cfg.iterations
    scale = 1.0 / np.sqrt(hd)
    rope = cache["rope"]
    dtype = params["embed.w"].dtype

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    d_cand = np.where(cache["alive"][None], d_cand, 0.0).astype(dtype)
    d_conf = d_conf.astype(dtype)

    dh_carry = np.zeros((B, T, d), dtype=dtype)
    de = np.zeros((B, T, d), dtype=dtype)
    for it in reversed(range(L)):
        ic = cache["iters"][it]
        hn = ic["hn"]
        dhn = np.zeros((B, T, d), dtype=dtype)
        dc = d_cand[it]
        dhn[:, 1:] = dc @ params["head.cand.w"].T
        grads["head.cand.w"] += np.einsum("bkd,bkv->dv", hn[:, 1:], dc)
        grads["head.cand.b"] += dc.sum((0, 1))
        dhn[:, 0] += d_conf[it][:, None] * params["head.conflict.w"][None, :]
        grads["head.conflict.w"] += d_conf[it] @ hn[:, 0]
        grads["head.conflict.b"] += d_conf[it].sum()
        dx, dg, db = _layernorm_bwd(dhn, ic["lnf"])
        grads["ln_f.g"] += dg
        grads["ln_f.b"] += db
        dh = dx + dh_carry

        for li in reversed(range(cfg.num_layers)):
            pre = f"blocks.{li}."
            (x1, lnc1, q, kk, v, att, merged, dm_a,
             x2, lnc2, uff, gff, erfc, dm_f) = ic["layers"][li]
            # feed-forward sublayer
            dy = dh if dm_f is None else dh * dm_f
            grads[pre + "ffn.w2"] += np.einsum("btf,btd->fd", gff, dy)
            grads[pre + "ffn.b2"] += dy.sum((0, 1))
            dgff = dy @ params[pre + "ffn.w2"].T
            duff = _gelu_bwd(dgff, uff, erfc)
            grads[pre + "ffn.w1"] += np.einsum("btd,btf->df", x2, duff)
            grads[pre + "ffn.b1"] += duff.sum((0, 1))
            dx2 = duff @ params[pre + "ffn.w1"].T
            dxi, dg, db = _layernorm_bwd(dx2, lnc2)
            grads[pre + "ln2.g"] += dg
            grads[pre + "ln2.b"] += db
            dh = dh + dxi
            # attention sublayer
            do = dh if dm_a is None else dh * dm_a
            grads[pre + "attn.wo"] += np.einsum("btd,bte->de", merged, do)
            grads[pre + "attn.bo"] += do.sum((0, 1))
            dmerged = do @ params[pre + "attn.wo"].T
            dctx = dmerged.reshape(B, T, H, hd).transpose(0, 2, 1, 3)
            datt = np.einsum("bhtd,bhsd->bhts", dctx, v)
            dv = np.einsum("bhts,bhtd->bhsd", att, dctx)
            ds = att * (datt - (datt * att).sum(-1, keepdims=True))
            ds *= scale
            dq = np.einsum("bhts,bhsd->bhtd", ds, kk)
            dkk = np.einsum("bhts,bhtd->bhsd", ds, q)
            if rope is not None:
                cos, sin = rope
                dq = _rope_apply(dq, cos, -sin)
                dkk = _rope_apply(dkk, cos, -sin)
            dq = dq.transpose(0, 2, 1, 3).reshape(B, T, d)
            dkk = dkk.transpose(0, 2, 1, 3).reshape(B, T, d)
            dv = dv.transpose(0, 2, 1, 3).reshape(B, T, d)
            dx1 = np.zeros_like(x1)
            for nm, dout in (("wq", dq), ("wk", dkk), ("wv", dv)):
                grads[pre + "attn." + nm] += np.einsum("btd,bte->de", x1, dout)
                grads[pre + "attn.b" + nm[1]] += dout.sum((0, 1))
                dx1 += dout @ params[pre + "attn." + nm].T
            dxi, dg, db = _layernorm_bwd(dx1, lnc1)
            grads[pre + "ln1.g"] += dg
            grads[pre + "ln1.b"] += db
            dh = dh + dxi
        de += dh
        dh_carry = dh

    # input embedding gradients
    grads["cls"] += de[:, 0].sum(0)
    de_cells = de[:, 1:]
    x_in = cache["e_inputs"]
    grads["embed.w"] += np.einsum("bkc,bkd->cd", x_in, de_cells)
    grads["embed.b"] += de_cells.sum((0, 1))
    per_cell = de_cells.sum(0)
    np.add.at(grads["pos.row"], cache["rows_idx"], per_cell)
    np.add.at(grads["pos.col"], cache["cols_idx"], per_cell)
    return grads


# -- checkpoint format -----------------------------------------------------

_MAGIC = b"LATCKPT1"


def save_checkpoint(path, cfg: ModelConfig, params: dict[str, np.ndarray]) -> None:
    """Versioned header (config + parameter manifest as JSON) followed by a
    flat little-endian float32 table.  Round trips bit-exactly."""
    import json
    names = param_order(cfg)
    assert set(names) == set(params), "parameter table does not match config"
    header = json.dumps({
        "version": 1, "config": cfg.to_dict(),
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(np.uint32(len(header)).tobytes())
        f.write(header)
        for n in names:
            f.write(np.ascontiguousarray(params[n], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    import json
    with open(path, "rb") as f:
        if f.read(8) != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (hlen,) = np.frombuffer(f.read(4), dtype=np.uint32)
        header = json.loads(f.read(int(hlen)).decode())
        if header["version"] != 1:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        cfg = ModelConfig.from_dict(header["config"])
        params = {}
        for ent in header["params"]:
            shape = tuple(ent["shape"])
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape).copy()
            params[ent["name"]] = arr.astype(np.float32)
    return cfg, params
