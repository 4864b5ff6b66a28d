import math

import pytest
import torch

from latdeduce.losses import LossConfig, compute_loss
from latdeduce.model import ModelOutput

LN2 = math.log(2.0)


def _output(cand, cls):
    return ModelOutput(torch.as_tensor(cand, dtype=torch.float64),
                       torch.as_tensor(cls, dtype=torch.float64))


def _ones(*shape):
    return torch.ones(shape, dtype=torch.float64)


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(w_pos=0.5, w_neg=0.5)
    with pytest.raises(ValueError):
        LossConfig(theta_elim=0.0)
    with pytest.raises(ValueError):
        LossConfig(tau_decide=-1.0)


def test_hand_computed_single_bit():
    """One cell, one live target-1 bit, zero logits everywhere.

    BCE = w_pos*ln2 on the live bit, CLS = ln2, CE = ln2 over two
    classes is ln2 (uniform logits)... except CE is over the vocab of
    the singleton cell, also ln2 here.
    """
    cfg = LossConfig()
    out = _output(torch.zeros(1, 1, 1, 2), torch.zeros(1, 1))
    input_bits = torch.tensor([[[1.0, 0.0]]], dtype=torch.float64)
    target_bits = torch.tensor([[[1.0, 0.0]]], dtype=torch.float64)
    conflict = torch.zeros(1, dtype=torch.float64)
    mask = _ones(1, 1)
    total, detail = compute_loss(out, input_bits, target_bits, conflict, mask, cfg)
    expected = 4.0 * LN2 + 0.1 * LN2 + 0.2 * LN2
    assert float(total) == pytest.approx(expected, rel=1e-12)
    assert detail["bce"] == pytest.approx(4.0 * LN2, rel=1e-12)
    assert detail["cls"] == pytest.approx(LN2, rel=1e-12)
    assert detail["ce"] == pytest.approx(LN2, rel=1e-12)


def test_asymmetric_bce_weights():
    """A live target-0 bit costs w_neg; a live target-1 bit costs w_pos."""
    cfg = LossConfig(lambda_cls=0.0, lambda_ce=0.0)
    input_bits = torch.tensor([[[1.0, 1.0]]], dtype=torch.float64)
    target_keep = torch.tensor([[[1.0, 1.0]]], dtype=torch.float64)
    target_drop = torch.tensor([[[0.0, 0.0]]], dtype=torch.float64)
    out = _output(torch.zeros(1, 1, 1, 2), torch.zeros(1, 1))
    mask = _ones(1, 1)
    keep, _ = compute_loss(out, input_bits, target_keep, torch.zeros(1).double(), mask, cfg)
    drop, _ = compute_loss(out, input_bits, target_drop, torch.ones(1).double(), mask, cfg)
    assert float(keep) == pytest.approx(4.0 * LN2, rel=1e-12)
    assert float(drop) == pytest.approx(0.5 * LN2, rel=1e-12)


def test_dead_bits_do_not_contribute():
    cfg = LossConfig(lambda_cls=0.0, lambda_ce=0.0)
    # second bit dead in the input; give it an extreme logit
    cand = torch.tensor([[[[0.0, 50.0]]]], dtype=torch.float64)
    input_bits = torch.tensor([[[1.0, 0.0]]], dtype=torch.float64)
    target_bits = torch.tensor([[[1.0, 0.0]]], dtype=torch.float64)
    total, _ = compute_loss(
        _output(cand, torch.zeros(1, 1)), input_bits, target_bits,
        torch.zeros(1).double(), _ones(1, 1), cfg,
    )
    assert float(total) == pytest.approx(4.0 * LN2, rel=1e-12)


def test_masked_out_cells_do_not_contribute():
    cfg = LossConfig(lambda_cls=0.0, lambda_ce=0.0)
    cand = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
    input_bits = torch.tensor([[[1.0, 0.0], [1.0, 1.0]]], dtype=torch.float64)
    target_bits = input_bits.clone()
    mask = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    total, _ = compute_loss(
        _output(cand, torch.zeros(1, 1)), input_bits, target_bits,
        torch.zeros(1).double(), mask, cfg,
    )
    assert float(total) == pytest.approx(4.0 * LN2, rel=1e-12)


def test_iteration_average():
    """Identical iterations give the single-iteration loss; differing
    iterations give their mean."""
    cfg = LossConfig(lambda_cls=0.0, lambda_ce=0.0)
    input_bits = torch.tensor([[[1.0, 0.0]]], dtype=torch.float64)
    target_bits = input_bits.clone()
    one = torch.zeros(1, 1, 1, 2, dtype=torch.float64)
    two = torch.cat([one, one + torch.tensor([1.0, 0.0])], dim=0)
    mask = _ones(1, 1)
    t1, _ = compute_loss(_output(one, torch.zeros(1, 1)), input_bits, target_bits,
                         torch.zeros(1).double(), mask, cfg)
    t2, _ = compute_loss(_output(two, torch.zeros(2, 1)), input_bits, target_bits,
                         torch.zeros(1).double(), mask, cfg)
    iter2 = 4.0 * math.log(1.0 + math.exp(-1.0))
    assert float(t2) == pytest.approx((float(t1) + iter2) / 2.0, rel=1e-12)


def test_ce_skipped_without_singletons():
    cfg = LossConfig()
    input_bits = torch.tensor([[[1.0, 1.0]]], dtype=torch.float64)
    target_bits = input_bits.clone()
    out = _output(torch.zeros(1, 1, 1, 2), torch.zeros(1, 1))
    _, detail = compute_loss(out, input_bits, target_bits,
                             torch.zeros(1).double(), _ones(1, 1), cfg)
    assert detail["ce"] == 0.0


def test_conflict_cls_target():
    cfg = LossConfig(lambda_cls=1.0, lambda_ce=0.0)
    input_bits = torch.tensor([[[1.0, 0.0]]], dtype=torch.float64)
    target_bits = input_bits.clone()
    big = torch.full((1, 1), 10.0, dtype=torch.float64)
    out = _output(torch.zeros(1, 1, 1, 2), big)
    hit, _ = compute_loss(out, input_bits, target_bits, torch.ones(1).double(),
                          _ones(1, 1), cfg)
    miss, _ = compute_loss(out, input_bits, target_bits, torch.zeros(1).double(),
                           _ones(1, 1), cfg)
    assert float(hit) < float(miss)
