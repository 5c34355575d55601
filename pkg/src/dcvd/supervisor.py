"""Function- and statement-level heads and the joint objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import torch
import torch.nn.functional as F
from torch import nn

from .fusion import masked_mean


class LossError(ValueError):
    pass


def _mlp(dim: int, out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, out))


class FunctionHead(nn.Module):
    """Masked mean of ``K`` followed by a two-layer MLP; returns the logit."""

    def __init__(self, dim: int):
        super().__init__()
        self.g_f = _mlp(dim, 1)

    def forward(self, K, mask):
        if mask.ndim == 1:
            K, mask = K.unsqueeze(0), mask.unsqueeze(0)
        if (mask.sum(-1) == 0).any():
            raise ValueError("function head needs at least one valid position")
        return self.g_f(masked_mean(K, mask)).squeeze(-1)


def function_head_prob(head: FunctionHead, K, mask) -> torch.Tensor:
    return torch.sigmoid(head(K, mask))


def bce(prob, target) -> torch.Tensor:
    prob = torch.as_tensor(prob, dtype=torch.float64)
    target = torch.as_tensor(target, dtype=prob.dtype)
    return F.binary_cross_entropy(prob, target)


class StatementHead(nn.Module):
    """Token refinement ``LN(K + g_s(f_sa(K)))`` and a linear token scorer ``w``."""

    def __init__(self, dim: int, heads: int = 8, dropout: float = 0.0):
        super().__init__()
        self.f_sa = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.g_s = _mlp(dim, dim)
        self.norm = nn.LayerNorm(dim)
        self.w = nn.Linear(dim, 1, bias=False)

    def refine(self, K, mask=None):
        squeeze = K.ndim == 2
        if squeeze:
            K = K.unsqueeze(0)
            mask = None if mask is None else mask.unsqueeze(0)
        pad = None if mask is None else ~mask
        attn, _ = self.f_sa(K, K, K, key_padding_mask=pad, need_weights=False)
        out = self.norm(K + self.g_s(attn))
        return out.squeeze(0) if squeeze else out

    def token_scores(self, K_tilde):
        return self.w(K_tilde).squeeze(-1)

    def forward(self, K, mask, token_line, n_lines: int):
        scores = self.token_scores(self.refine(K, mask))
        return line_scores(scores, token_line, n_lines)


def line_scores(token_scores: torch.Tensor, token_line: torch.Tensor, n_lines: int):
    """Average token scores per line.

    ``token_scores`` and ``token_line`` are ``(M,)`` or ``(B, M)``; ``token_line``
    holds ``-1`` for tokens outside any line. Returns ``(scores, scored)`` of
    shape ``(..., n_lines)``; lines with no tokens have ``scored=False`` and a
    zero placeholder score that must not be read.
    """
    squeeze = token_scores.ndim == 1
    if squeeze:
        token_scores, token_line = token_scores.unsqueeze(0), token_line.unsqueeze(0)
    if token_line.shape != token_scores.shape:
        raise ValueError(f"token map shape {tuple(token_line.shape)} does not match scores {tuple(token_scores.shape)}")
    if (token_line >= n_lines).any():
        raise IndexError("token map references a line beyond the function")
    B = token_scores.shape[0]
    valid = token_line >= 0
    flat = (torch.arange(B, device=token_line.device).unsqueeze(1) * n_lines + token_line.clamp(min=0))[valid]
    sums = torch.zeros(B * n_lines, dtype=token_scores.dtype, device=token_scores.device)
    sums = sums.index_add(0, flat, token_scores[valid])
    counts = torch.zeros(B * n_lines, dtype=token_scores.dtype, device=token_scores.device)
    counts = counts.index_add(0, flat, torch.ones_like(token_scores[valid]))
    scored = (counts > 0).view(B, n_lines)
    s = (sums / counts.clamp(min=1)).view(B, n_lines)
    if squeeze:
        return s[0], scored[0]
    return s, scored


def flaw_target(flaw_lines: Iterable[int], scored: torch.Tensor, strict: bool = True) -> torch.Tensor:
    """Uniform distribution over the flaw lines that carry a score.

    With ``strict`` a flaw line lacking a score raises; otherwise such lines
    are dropped and the target renormalises over the visible ones.
    """
    flaws = sorted(set(flaw_lines))
    visible = []
    for l in flaws:
        if l < 0 or l >= scored.shape[-1] or not bool(scored[l]):
            if strict:
                raise LossError(f"flaw line {l} has no score")
            continue
        visible.append(l)
    t = torch.zeros(scored.shape[-1], dtype=torch.float64)
    if visible:
        t[visible] = 1.0 / len(visible)
    return t


def statement_kl(s: torch.Tensor, scored: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-function ``KL(target || softmax(s over scored lines))``; inputs ``(B, L)``."""
    logp = torch.log_softmax(s.masked_fill(~scored, float("-inf")), dim=-1)
    target = target.to(s.dtype)
    pos = target > 0
    logt = torch.where(pos, torch.log(torch.where(pos, target, torch.ones_like(target))), torch.zeros_like(target))
    logp = torch.where(pos, logp, torch.zeros_like(logp))
    return (target * (logt - logp)).sum(-1)


def statement_loss(s: torch.Tensor, flaw_lines: Iterable[int], scored: torch.Tensor | None = None) -> torch.Tensor:
    """KL divergence for one function whose ``flaw_lines`` are all scored."""
    s = torch.as_tensor(s)
    if scored is None:
        scored = torch.ones_like(s, dtype=torch.bool)
    if not bool(scored.any()):
        raise LossError("no scored lines")
    if not list(flaw_lines):
        raise LossError("statement loss needs at least one flaw line")
    target = flaw_target(flaw_lines, scored, strict=True)
    return statement_kl(s.unsqueeze(0), scored.unsqueeze(0), target.unsqueeze(0))[0]


def total_loss(L_f, L_s, L_align, alpha: float = 0.4, beta: float = 0.1):
    """``alpha * (L_f + beta * L_align) + (1 - alpha) * L_s``.

    ``None`` marks an absent term (ablated component). Without ``L_s`` the
    statement weight is dropped and the function term takes weight one.
    """
    if not 0 <= alpha <= 1:
        raise LossError(f"alpha must lie in [0, 1], got {alpha}")
    if beta < 0:
        raise LossError(f"beta must be non-negative, got {beta}")
    fn = L_f if L_align is None else L_f + beta * L_align
    if L_s is None:
        return fn
    return alpha * fn + (1 - alpha) * L_s


@dataclass
class LossBreakdown:
    L_f: float
    L_s: float | None
    L_align: float | None
    total: float
    alpha: float
    beta: float

    def check(self, tol: float = 1e-9) -> None:
        expect = total_loss(self.L_f, self.L_s, self.L_align, self.alpha, self.beta)
        if not math.isclose(expect, self.total, rel_tol=tol, abs_tol=tol):
            raise LossError(f"total {self.total} != recombined {expect}")

    def to_dict(self) -> dict:
        d = {"L_f": self.L_f, "total": self.total, "alpha": self.alpha, "beta": self.beta}
        if self.L_s is not None:
            d["L_s"] = self.L_s
        if self.L_align is not None:
            d["L_align"] = self.L_align
        return d
