"""Per-step training loss.

Every internal iteration is supervised with three terms: an asymmetric
BCE on candidate logits (false eliminations cost more than false
retentions), a symmetric BCE on the CLS conflict logit, and a softmax
cross-entropy at cells whose target has a single alive candidate.
The total is the iteration average of the weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .model import ModelOutput


@dataclass(frozen=True)
class LossConfig:
    w_pos: float = 4.0
    w_neg: float = 0.5
    lambda_cls: float = 0.1
    lambda_ce: float = 0.2
    theta_elim: float = 0.1
    # training-side conflict flags come from ground truth, so this
    # threshold is inert during training; exposed for completeness
    theta_cls_train: float = 0.5
    tau_decide: float = 1.5

    def __post_init__(self):
        if not self.w_pos > self.w_neg > 0:
            raise ValueError("need w_pos > w_neg > 0")
        if not (0 < self.theta_elim < 1 and 0 < self.theta_cls_train < 1):
            raise ValueError("thresholds must lie in (0, 1)")
        if self.tau_decide <= 0:
            raise ValueError("tau_decide must be positive")


def compute_loss(
    outputs: ModelOutput,
    input_bits: torch.Tensor,
    target_bits: torch.Tensor,
    conflict: torch.Tensor,
    mask: torch.Tensor,
    cfg: LossConfig,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Eq-style total loss and the per-term breakdown.

    input_bits/target_bits: (B, k, V); conflict: (B,) in {0,1};
    mask: (B, k).  The BCE is averaged over masked-in candidate bits
    that are still alive in the input; dead bits are structurally
    excluded (the target is always below the input state).
    """
    b_logits, c_logits = outputs.cand_logits, outputs.cls_logits
    L = b_logits.shape[0]
    dtype = b_logits.dtype
    live = (input_bits > 0.5) & (mask.unsqueeze(-1) > 0.5)  # (B, k, V)
    t = target_bits.to(dtype)

    weight = torch.where(t > 0.5, torch.tensor(cfg.w_pos, dtype=dtype), torch.tensor(cfg.w_neg, dtype=dtype))
    per_bit = weight * (t * F.softplus(-b_logits) + (1.0 - t) * F.softplus(b_logits))
    n_live = live.sum().clamp(min=1)
    bce = (per_bit * live).sum(dim=(1, 2, 3)) / n_live  # (L,)

    cls_target = conflict.to(dtype).expand(L, -1)
    cls = F.binary_cross_entropy_with_logits(c_logits, cls_target, reduction="none").mean(dim=1)

    singleton = (target_bits.sum(dim=-1) == 1) & (mask > 0.5)  # (B, k)
    if singleton.any():
        labels = target_bits.argmax(dim=-1)[singleton]  # (n,)
        logits = b_logits[:, singleton, :]  # (L, n, V)
        ce = F.cross_entropy(
            logits.reshape(-1, logits.shape[-1]),
            labels.repeat(L),
            reduction="none",
        ).view(L, -1).mean(dim=1)
    else:
        ce = torch.zeros(L, dtype=dtype)

    per_iter = bce + cfg.lambda_cls * cls + cfg.lambda_ce * ce
    total = per_iter.mean()
    detail = {
        "bce": float(bce.mean().detach()),
        "cls": float(cls.mean().detach()),
        "ce": float(ce.mean().detach()),
        "total": float(total.detach()),
    }
    return total, detail
