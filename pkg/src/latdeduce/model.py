"""Recurrent deduction transformer.

A small pre-norm transformer stack unrolled for a fixed number of
internal iterations, with the embedded input lattice re-injected as a
residual signal before every iteration.  Each iteration emits candidate
logits per cell and a conflict logit from a distinguished CLS position;
readout heads are shared across iterations.

Candidate logits of candidates already eliminated in the input are
forced to a large negative value, so a thresholded step can never
resurrect a dead candidate: per-step monotonicity is structural.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .lattice import LatticeShape, LatticeState

DEAD_LOGIT = -30.0


class NumericError(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"non-finite activation at internal iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class ModelConfig:
    shape: LatticeShape
    embed_dim: int = 128
    layers: int = 4
    heads: int = 4
    internal_iterations: int = 16
    ffn_multiplier: float = 4.0
    dropout_rate: float = 0.1
    use_rope2d: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.internal_iterations < 1:
            raise ValueError("internal_iterations must be >= 1")
        if self.use_rope2d and (self.embed_dim // self.heads) % 4 != 0:
            raise ValueError("2D RoPE needs head dim divisible by 4")


@dataclass
class ModelOutput:
    cand_logits: torch.Tensor  # (L, B, k, V)
    cls_logits: torch.Tensor  # (L, B)


def _dropout(x: torch.Tensor, p: float, generator) -> torch.Tensor:
    if p <= 0.0 or generator is None:
        return x
    if isinstance(generator, (list, tuple)):
        # one generator per batch row keeps chains independent of batching
        keep = torch.stack(
            [torch.rand(x.shape[1:], generator=g, device=x.device) >= p for g in generator]
        )
    else:
        keep = torch.rand(x.shape, generator=generator, device=x.device) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


def rope2d(x: torch.Tensor, row: torch.Tensor, col: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    """Rotate the two halves of the last dim by row and column angles.

    x: (..., S, head_dim) with head_dim divisible by 4; row, col: (S,).
    Zero coordinates give the identity; the rotation is norm-preserving
    and dot products depend only on coordinate differences.
    """
    head_dim = x.shape[-1]
    quarter = head_dim // 4
    freqs = base ** (-torch.arange(quarter, dtype=x.dtype, device=x.device) / quarter)
    out = []
    for half, pos in ((x[..., : head_dim // 2], row), (x[..., head_dim // 2 :], col)):
        ang = pos.to(x.dtype)[:, None] * freqs[None, :]  # (S, quarter)
        cos, sin = torch.cos(ang), torch.sin(ang)
        a, b = half[..., :quarter], half[..., quarter:]
        out.append(torch.cat([a * cos - b * sin, a * sin + b * cos], dim=-1))
    return torch.cat(out, dim=-1)


class _Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        hidden = int(d * cfg.ffn_multiplier)
        self.heads = cfg.heads
        self.ln1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, hidden)
        self.ff2 = nn.Linear(hidden, d)

    def forward(self, h, rope_pos, dropout_p, generator):
        b, s, d = h.shape
        hd = d // self.heads
        q, k, v = self.qkv(self.ln1(h)).chunk(3, dim=-1)
        q = q.view(b, s, self.heads, hd).transpose(1, 2)
        k = k.view(b, s, self.heads, hd).transpose(1, 2)
        v = v.view(b, s, self.heads, hd).transpose(1, 2)
        if rope_pos is not None:
            row, col = rope_pos
            q = rope2d(q, row, col)
            k = rope2d(k, row, col)
        att = torch.softmax(q.matmul(k.transpose(-2, -1)) / hd**0.5, dim=-1)
        mixed = att.matmul(v).transpose(1, 2).reshape(b, s, d)
        h = h + _dropout(self.proj(mixed), dropout_p, generator)
        ff = self.ff2(torch.nn.functional.gelu(self.ff1(self.ln2(h))))
        return h + _dropout(ff, dropout_p, generator)


class DeductionTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        shape = cfg.shape
        d = cfg.embed_dim
        self.in_proj = nn.Linear(shape.vocab_size + 1, d)
        self.row_embed = nn.Parameter(torch.empty(shape.rows, d))
        self.col_embed = nn.Parameter(torch.empty(shape.cols, d))
        self.cls_embed = nn.Parameter(torch.empty(d))
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
        self.out_norm = nn.LayerNorm(d)
        self.cand_head = nn.Linear(d, shape.vocab_size)
        self.cls_head = nn.Linear(d, 1)
        self._init_parameters()
        if cfg.use_rope2d:
            rows = torch.arange(shape.rows).repeat_interleave(shape.cols)
            self.register_buffer("_rope_row", torch.cat([torch.zeros(1), rows + 1.0]))
            cols = torch.arange(shape.cols).repeat(shape.rows)
            self.register_buffer("_rope_col", torch.cat([torch.zeros(1), cols + 1.0]))

    def _init_parameters(self):
        g = torch.Generator().manual_seed(self.cfg.seed)
        for name, p in self.named_parameters():
            if p.dim() >= 2:
                p.data.normal_(0.0, 0.02, generator=g)
            elif "weight" in name:  # layer norm gains
                p.data.fill_(1.0)
            elif name == "cls_embed":
                p.data.normal_(0.0, 0.02, generator=g)
            else:
                p.data.zero_()

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(
        self,
        bits: torch.Tensor,
        mask: torch.Tensor,
        dropout_p: float = 0.0,
        generator=None,
    ) -> ModelOutput:
        """bits: (B, k, V) multi-hot; mask: (B, k) in-puzzle flags."""
        cfg = self.cfg
        shape = cfg.shape
        if bits.shape[1:] != (shape.num_cells, shape.vocab_size):
            raise ValueError(f"batch shape {tuple(bits.shape)} does not match {shape}")
        b = bits.shape[0]
        inp = self.in_proj(torch.cat([bits, mask.unsqueeze(-1)], dim=-1))
        pos = (self.row_embed[:, None, :] + self.col_embed[None, :, :]).reshape(
            shape.num_cells, -1
        )
        inp = inp + pos
        base = torch.cat([self.cls_embed.expand(b, 1, -1), inp], dim=1)
        rope_pos = (self._rope_row, self._rope_col) if cfg.use_rope2d else None

        dead = (bits <= 0.0) | (mask.unsqueeze(-1) <= 0.0)
        cand_all, cls_all = [], []
        h = torch.zeros_like(base)
        for it in range(cfg.internal_iterations):
            h = h + base
            for block in self.blocks:
                h = block(h, rope_pos, dropout_p, generator)
            g = self.out_norm(h)
            cand = self.cand_head(g[:, 1:, :])
            cand = torch.where(dead, torch.full_like(cand, DEAD_LOGIT), cand)
            cls = self.cls_head(g[:, 0, :]).squeeze(-1)
            if not (torch.isfinite(cand).all() and torch.isfinite(cls).all()):
                raise NumericError(it)
            cand_all.append(cand)
            cls_all.append(cls)
        return ModelOutput(torch.stack(cand_all), torch.stack(cls_all))


def states_to_tensors(
    states: list[LatticeState], dtype=torch.float32
) -> tuple[torch.Tensor, torch.Tensor]:
    bits = torch.from_numpy(np.stack([s.to_bits() for s in states])).to(dtype)
    mask = torch.from_numpy(np.stack([s.mask for s in states])).to(dtype)
    return bits, mask


# -- checkpoint format -------------------------------------------------
# magic, version, JSON header (config + ordered parameter table with
# names/shapes), then raw little-endian float32 data.

_MAGIC = b"LDCK"
_VERSION = 1


def config_to_dict(cfg: ModelConfig) -> dict:
    d = {k: getattr(cfg, k) for k in (
        "embed_dim", "layers", "heads", "internal_iterations",
        "ffn_multiplier", "dropout_rate", "use_rope2d", "seed",
    )}
    d["shape"] = [cfg.shape.rows, cfg.shape.cols, cfg.shape.vocab_size]
    return d


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    rows, cols, vocab = d.pop("shape")
    return ModelConfig(shape=LatticeShape(rows, cols, vocab), **d)


def save_checkpoint(model: DeductionTransformer, path) -> None:
    params = [(name, p.detach().cpu().to(torch.float32)) for name, p in model.named_parameters()]
    header = {
        "version": _VERSION,
        "config": config_to_dict(model.cfg),
        "parameters": [{"name": n, "shape": list(p.shape)} for n, p in params],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(blob)))
        f.write(blob)
        for _, p in params:
            f.write(np.ascontiguousarray(p.numpy(), dtype="<f4").tobytes())


def load_checkpoint(path) -> DeductionTransformer:
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise ValueError(f"not a checkpoint file: {path}")
    version, hlen = struct.unpack("<II", buf.read(8))
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(buf.read(hlen).decode())
    model = DeductionTransformer(config_from_dict(header["config"]))
    named = dict(model.named_parameters())
    with torch.no_grad():
        for rec in header["parameters"]:
            shape = tuple(rec["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = np.frombuffer(buf.read(4 * n), dtype="<f4").reshape(shape)
            named[rec["name"]].copy_(torch.from_numpy(raw.copy()))
    return model
